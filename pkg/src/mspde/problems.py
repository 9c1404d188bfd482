"""First-order Hamiltonian PDE systems K z_t + L z_x = grad S(z).

Ships the three benchmark instances: the linear and nonlinear (quartic
potential) wave equations as a 3-component system, and the focusing cubic
Schroedinger equation in real 4-component form with its travelling soliton.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "MultisymplecticProblem",
    "ValidationReport",
    "linear_wave",
    "nonlinear_wave",
    "nls",
    "problem_by_label",
    "validate",
    "PROBLEM_LABELS",
]


@dataclass(frozen=True, eq=False)
class MultisymplecticProblem:
    """Constant skew matrices K, L plus a scalar density S and derivatives.

    ``s``, ``grad_s`` and ``hess_s`` are vectorised over a trailing component
    axis: z of shape (..., D) maps to (...), (..., D) and (..., D, D).
    ``s_degree`` is the polynomial degree of S in z (drives quadrature
    orders).  ``exact_solution(t, x)`` and ``initial_state(x)`` are
    vectorised over x and return (..., D).
    """

    label: str
    D: int
    K: np.ndarray
    L: np.ndarray
    s: Callable
    grad_s: Callable
    hess_s: Callable
    domain_length: float
    s_degree: int
    component_names: Sequence[str]
    initial_state: Callable
    exact_solution: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float))
        object.__setattr__(self, "L", np.asarray(self.L, dtype=float))
        for name in ("K", "L"):
            mat = getattr(self, name)
            if mat.shape != (self.D, self.D):
                raise ValueError(f"{name} must be {self.D}x{self.D}")


def linear_wave() -> MultisymplecticProblem:
    """Linear wave equation as the system (u, v, w) with v=u_t, w=u_x."""
    k = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    l = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])

    def s(z):
        z = np.asarray(z)
        return 0.5 * z[..., 1] ** 2 - 0.5 * z[..., 2] ** 2

    def grad_s(z):
        z = np.asarray(z)
        g = np.zeros_like(z)
        g[..., 1] = z[..., 1]
        g[..., 2] = -z[..., 2]
        return g

    def hess_s(z):
        z = np.asarray(z)
        h = np.zeros(z.shape + (3,))
        h[..., 1, 1] = 1.0
        h[..., 2, 2] = -1.0
        return h

    def exact(t, x):
        phase = 2.0 * np.pi * (np.asarray(x) + t)
        return np.stack(
            [0.5 * np.sin(phase), np.pi * np.cos(phase), np.pi * np.cos(phase)],
            axis=-1,
        )

    return MultisymplecticProblem(
        label="linear-wave",
        D=3,
        K=k,
        L=l,
        s=s,
        grad_s=grad_s,
        hess_s=hess_s,
        domain_length=1.0,
        s_degree=2,
        component_names=("u", "v", "w"),
        initial_state=lambda x: exact(0.0, x),
        exact_solution=exact,
    )


def nonlinear_wave() -> MultisymplecticProblem:
    """Wave equation with quartic potential u^4/4; harmonic initial data."""
    base = linear_wave()

    def s(z):
        z = np.asarray(z)
        return 0.5 * z[..., 1] ** 2 - 0.5 * z[..., 2] ** 2 + 0.25 * z[..., 0] ** 4

    def grad_s(z):
        z = np.asarray(z)
        g = np.empty_like(z)
        g[..., 0] = z[..., 0] ** 3
        g[..., 1] = z[..., 1]
        g[..., 2] = -z[..., 2]
        return g

    def hess_s(z):
        z = np.asarray(z)
        h = np.zeros(z.shape + (3,))
        h[..., 0, 0] = 3.0 * z[..., 0] ** 2
        h[..., 1, 1] = 1.0
        h[..., 2, 2] = -1.0
        return h

    return MultisymplecticProblem(
        label="nonlinear-wave",
        D=3,
        K=base.K,
        L=base.L,
        s=s,
        grad_s=grad_s,
        hess_s=hess_s,
        domain_length=1.0,
        s_degree=4,
        component_names=("u", "v", "w"),
        initial_state=base.initial_state,
        exact_solution=None,
    )


def nls() -> MultisymplecticProblem:
    """Focusing cubic Schroedinger equation, real form z = (u, v, p, q).

    The amplitude-2 soliton xi = 2 exp(it) sech(x) solves
    i xi_t + xi_xx + |xi|^2 xi / 2 = 0; the density carries the matching 1/8
    coefficient on the quartic term so grad S reproduces that system exactly.
    The soliton is centred on the periodic seam of [0, 40), so coordinates
    are wrapped to [-20, 20) before evaluating the closed form.
    """
    k = np.zeros((4, 4))
    k[0, 1], k[1, 0] = -1.0, 1.0
    l = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
        ]
    )

    def s(z):
        z = np.asarray(z)
        mag = z[..., 0] ** 2 + z[..., 1] ** 2
        return -0.125 * mag**2 - 0.5 * (z[..., 2] ** 2 + z[..., 3] ** 2)

    def grad_s(z):
        z = np.asarray(z)
        mag = z[..., 0] ** 2 + z[..., 1] ** 2
        g = np.empty_like(z)
        g[..., 0] = -0.5 * z[..., 0] * mag
        g[..., 1] = -0.5 * z[..., 1] * mag
        g[..., 2] = -z[..., 2]
        g[..., 3] = -z[..., 3]
        return g

    def hess_s(z):
        z = np.asarray(z)
        u, v = z[..., 0], z[..., 1]
        h = np.zeros(z.shape + (4,))
        h[..., 0, 0] = -0.5 * (3.0 * u**2 + v**2)
        h[..., 0, 1] = h[..., 1, 0] = -u * v
        h[..., 1, 1] = -0.5 * (u**2 + 3.0 * v**2)
        h[..., 2, 2] = -1.0
        h[..., 3, 3] = -1.0
        return h

    length = 40.0

    def exact(t, x):
        xw = np.mod(np.asarray(x) + 0.5 * length, length) - 0.5 * length
        sech = 1.0 / np.cosh(xw)
        dsech = -np.tanh(xw) * sech
        return np.stack(
            [
                2.0 * np.cos(t) * sech,
                2.0 * np.sin(t) * sech,
                2.0 * np.cos(t) * dsech,
                2.0 * np.sin(t) * dsech,
            ],
            axis=-1,
        )

    return MultisymplecticProblem(
        label="nls",
        D=4,
        K=k,
        L=l,
        s=s,
        grad_s=grad_s,
        hess_s=hess_s,
        domain_length=length,
        s_degree=4,
        component_names=("u", "v", "p", "q"),
        initial_state=lambda x: exact(0.0, x),
        exact_solution=exact,
    )


PROBLEM_LABELS = ("linear-wave", "nonlinear-wave", "nls")


def problem_by_label(label: str) -> MultisymplecticProblem:
    factories = {
        "linear-wave": linear_wave,
        "nonlinear-wave": nonlinear_wave,
        "nls": nls,
    }
    try:
        return factories[label]()
    except KeyError:
        raise ValueError(f"unknown problem label {label!r}; choose from {PROBLEM_LABELS}")


@dataclass
class ValidationReport:
    """Per-check maximal residuals from :func:`validate`."""

    label: str
    skew_residual_k: float
    skew_residual_l: float
    gradient_residual: float
    hessian_residual: float
    hessian_asymmetry: float
    pde_residual: float | None

    @property
    def passed(self) -> bool:
        checks = [
            self.skew_residual_k <= 1e-14,
            self.skew_residual_l <= 1e-14,
            self.gradient_residual <= 1e-6,
            self.hessian_residual <= 1e-6,
            self.hessian_asymmetry <= 1e-12,
        ]
        if self.pde_residual is not None:
            checks.append(self.pde_residual <= 1e-8)
        return all(checks)


def _finite_difference_gradient(f, z, step):
    z = np.asarray(z, dtype=float)
    grad = np.zeros_like(z)
    for i in range(z.shape[-1]):
        dz = np.zeros_like(z)
        dz[..., i] = step
        grad[..., i] = (f(z + dz) - f(z - dz)) / (2.0 * step)
    return grad


def validate(problem: MultisymplecticProblem, seed: int = 0, samples: int = 100) -> ValidationReport:
    """Check skew-symmetry, derivative consistency, and the exact solution."""
    rng = np.random.default_rng(seed)
    skew_k = float(np.max(np.abs(problem.K + problem.K.T)))
    skew_l = float(np.max(np.abs(problem.L + problem.L.T)))

    z = rng.uniform(-2.0, 2.0, size=(samples, problem.D))
    scale = max(1.0, float(np.max(np.abs(problem.grad_s(z)))))
    grad_res = float(np.max(np.abs(
        problem.grad_s(z) - _finite_difference_gradient(problem.s, z, 1e-6)
    ))) / scale

    hess = problem.hess_s(z)
    hess_scale = max(1.0, float(np.max(np.abs(hess))))
    fd_hess = np.stack(
        [_finite_difference_gradient(lambda w: problem.grad_s(w)[..., i], z, 1e-6)
         for i in range(problem.D)],
        axis=-2,
    )
    hess_res = float(np.max(np.abs(hess - fd_hess))) / hess_scale
    hess_asym = float(np.max(np.abs(hess - np.swapaxes(hess, -1, -2)))) / hess_scale

    pde_res = None
    if problem.exact_solution is not None:
        t = rng.uniform(0.0, 1.0, size=samples)
        x = rng.uniform(0.0, problem.domain_length, size=samples)
        step = 1e-5
        z0 = np.stack([problem.exact_solution(ti, xi) for ti, xi in zip(t, x)])
        zt = np.stack(
            [(problem.exact_solution(ti + step, xi) - problem.exact_solution(ti - step, xi))
             / (2 * step) for ti, xi in zip(t, x)]
        )
        zx = np.stack(
            [(problem.exact_solution(ti, xi + step) - problem.exact_solution(ti, xi - step))
             / (2 * step) for ti, xi in zip(t, x)]
        )
        residual = (zt @ problem.K.T) + (zx @ problem.L.T) - problem.grad_s(z0)
        pde_res = float(np.max(np.abs(residual)))

    return ValidationReport(
        label=problem.label,
        skew_residual_k=skew_k,
        skew_residual_l=skew_l,
        gradient_residual=grad_res,
        hessian_residual=hess_res,
        hessian_asymmetry=hess_asym,
        pde_residual=pde_res,
    )
