"""Reference-interval quadrature, 1D partitions, and nodal Lagrange bases.

Everything lives on the reference interval [0, 1]; physical elements are
reached by affine maps, so jacobians are plain element widths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadratureRule",
    "Partition1D",
    "LagrangeBasis",
    "QUADRATURE_DEGREE_CAP",
    "gauss_legendre",
    "quadrature_order_policy",
    "uniform_partition",
    "equispaced_nodes",
    "eval_basis",
]

# Highest polynomial degree the capped rule still integrates exactly.
QUADRATURE_DEGREE_CAP = 16


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points and positive weights on the reference interval [0, 1]."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.points.shape != self.weights.shape or self.points.ndim != 1:
            raise ValueError("points and weights must be 1D arrays of equal length")

    def __len__(self):
        return self.points.size

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Contract sampled values with the weights along ``axis``."""
        values = np.asarray(values)
        return np.tensordot(values, self.weights, axes=([axis], [0]))


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [0, 1]; exact for degree <= 2n - 1."""
    if n < 1:
        raise ValueError(f"quadrature rule needs at least one point, got n={n}")
    pts, wts = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(points=(pts + 1.0) / 2.0, weights=wts / 2.0)


def quadrature_order_policy(max_integrand_degree: int) -> int:
    """Smallest point count integrating the given degree exactly, capped.

    Rules with n points are exact for degree <= 2n - 1.  Beyond degree 16
    (including non-polynomial integrands, which callers signal by passing any
    degree above the cap) the count saturates at the 9-point rule.
    """
    if max_integrand_degree < 0:
        raise ValueError("integrand degree must be nonnegative")
    degree = min(max_integrand_degree, QUADRATURE_DEGREE_CAP)
    return degree // 2 + 1


@dataclass(frozen=True, eq=False)
class Partition1D:
    """Ordered 1D mesh; ``node_coords`` includes both interval endpoints.

    For periodic partitions the last node identifies with the first modulo
    ``total_length``.
    """

    node_coords: np.ndarray
    periodic: bool

    def __post_init__(self):
        coords = np.asarray(self.node_coords, dtype=float)
        object.__setattr__(self, "node_coords", coords)
        if coords.ndim != 1 or coords.size < 2:
            raise ValueError("a partition needs at least two node coordinates")
        if np.any(np.diff(coords) <= 0.0):
            raise ValueError("node coordinates must be strictly increasing")

    @property
    def element_count(self) -> int:
        return self.node_coords.size - 1

    @property
    def total_length(self) -> float:
        return float(self.node_coords[-1] - self.node_coords[0])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.node_coords)

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Map physical coordinates to (element index, reference coordinate).

        Periodic partitions wrap x into the fundamental interval first.
        """
        x = np.asarray(x, dtype=float)
        x0 = self.node_coords[0]
        if self.periodic:
            x = x0 + np.mod(x - x0, self.total_length)
        else:
            if np.any(x < x0 - 1e-12) or np.any(x > self.node_coords[-1] + 1e-12):
                raise ValueError("coordinate outside non-periodic partition")
        elem = np.clip(
            np.searchsorted(self.node_coords, x, side="right") - 1,
            0,
            self.element_count - 1,
        )
        ref = (x - self.node_coords[elem]) / self.widths[elem]
        return elem, np.clip(ref, 0.0, 1.0)


def uniform_partition(length: float, count: int, periodic: bool = True) -> Partition1D:
    """Partition of [0, length) into ``count`` equal elements."""
    if length <= 0.0:
        raise ValueError(f"length must be positive, got {length}")
    if count < 1:
        raise ValueError(f"element count must be at least 1, got {count}")
    return Partition1D(np.linspace(0.0, length, count + 1), periodic)


def equispaced_nodes(degree: int) -> np.ndarray:
    """Equispaced interpolation nodes on [0, 1] (midpoint for degree 0)."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if degree == 0:
        return np.array([0.5])
    return np.linspace(0.0, 1.0, degree + 1)


@dataclass(frozen=True, eq=False)
class LagrangeBasis:
    """Nodal Lagrange basis of a given degree on [0, 1]."""

    degree: int
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.size != self.degree + 1:
            raise ValueError("need degree + 1 nodes")
        if np.unique(nodes).size != nodes.size:
            raise ValueError("basis nodes must be distinct")

    @classmethod
    def equispaced(cls, degree: int) -> "LagrangeBasis":
        return cls(degree, equispaced_nodes(degree))

    @property
    def size(self) -> int:
        return self.degree + 1

    def tabulate(self, points, derivative_order: int = 0) -> np.ndarray:
        """Values (or first derivatives) of all basis functions at ``points``.

        Returns an array of shape (degree + 1, len(points)).
        """
        x = np.atleast_1d(np.asarray(points, dtype=float))
        n = self.size
        out = np.empty((n, x.size))
        for j in range(n):
            out[j] = self._eval_one(j, x, derivative_order)
        return out

    def _eval_one(self, j: int, x: np.ndarray, order: int) -> np.ndarray:
        others = [k for k in range(self.size) if k != j]
        denom = np.prod([self.nodes[j] - self.nodes[k] for k in others]) if others else 1.0
        if order == 0:
            num = np.ones_like(x)
            for k in others:
                num = num * (x - self.nodes[k])
            return num / denom
        if order == 1:
            total = np.zeros_like(x)
            for skip in others:
                term = np.ones_like(x)
                for k in others:
                    if k != skip:
                        term = term * (x - self.nodes[k])
                total += term
            return total / denom
        raise ValueError("only derivative orders 0 and 1 are supported")


def eval_basis(basis: LagrangeBasis, j: int, x, derivative_order: int = 0):
    """Value or first reference-derivative of nodal basis function ``j`` at ``x``."""
    if not 0 <= j <= basis.degree:
        raise ValueError(f"basis index {j} out of range for degree {basis.degree}")
    arr = np.asarray(x, dtype=float)
    result = basis._eval_one(j, np.atleast_1d(arr), derivative_order)
    return float(result[0]) if arr.ndim == 0 else result
