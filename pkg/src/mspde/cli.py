"""Command-line front end: single runs, convergence studies, and verification.

Everything is emitted as CSV (RFC-4180 style, '.' decimal separator, 17
significant digits) so outputs are diffable and byte-reproducible for a
given configuration and seed.

Exit codes: 0 success, 1 solver failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checks import run_property_checks
from .diagnostics import bochner_error, eoc, global_invariants
from .problems import PROBLEM_LABELS, problem_by_label
from .solver import (
    SchemeVariant,
    SolverConfig,
    SolverFailure,
    run_simulation,
)

__all__ = ["main", "cmd_run", "cmd_converge", "cmd_verify"]


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row))
    path.write_text("\r\n".join(lines) + "\r\n", encoding="ascii")


def _load_config_file(path: str) -> dict:
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mspde",
        description="Space-time FEM for 1D periodic multisymplectic PDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", default="linear-wave", choices=PROBLEM_LABELS)
        p.add_argument("--variant", default="cg",
                       choices=[v.value for v in SchemeVariant])
        p.add_argument("--q", type=int, default=1)
        p.add_argument("--p", type=int, default=1)
        p.add_argument("--T", type=float, default=1.0)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None,
                       help="key=value file; command-line flags override it")
        p.add_argument("--newton-tol", type=float, default=1e-12)

    run_p = sub.add_parser("run", help="single simulation with invariant series")
    common(run_p)
    run_p.add_argument("--dt", type=float, default=0.1)
    run_p.add_argument("--dx", type=float, default=0.1)
    run_p.add_argument("--snapshots", type=int, default=0,
                       help="samples per element for optional field snapshots")

    conv_p = sub.add_parser("converge", help="refinement study with errors and orders")
    common(conv_p)
    conv_p.add_argument("--imin", type=int, default=2)
    conv_p.add_argument("--imax", type=int, default=4)
    conv_p.add_argument("--hscale", type=float, default=1.0,
                        help="element size is hscale * 2^-i")

    ver_p = sub.add_parser("verify", help="run the property-check suite")
    ver_p.add_argument("--seed", type=int, default=0)
    return parser


_CONFIG_TYPES = {
    "q": int, "p": int, "dt": float, "dx": float, "T": float, "imin": int,
    "imax": int, "seed": int, "snapshots": int, "hscale": float,
    "newton_tol": float,
}


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Config-file values act as defaults; explicit flags override them."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        overrides = _load_config_file(args.config)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    for key, raw in overrides.items():
        if not hasattr(args, key):
            parser.error(f"unknown config key {key!r}")
        flag = "--" + (key if key == "T" else key.replace("_", "-"))
        if any(a == flag or a.startswith(flag + "=") for a in argv):
            continue
        try:
            setattr(args, key, _CONFIG_TYPES.get(key, str)(raw))
        except ValueError:
            parser.error(f"bad value for config key {key!r}: {raw!r}")
    return args


def _invariant_rows(series):
    rows = []
    for n in range(series.times.size):
        row = [series.times[n], *series.mass[n], series.momentum[n], series.energy[n]]
        row += list(np.abs(series.mass[n] - series.mass[0]))
        row += [abs(series.momentum[n] - series.momentum[0]),
                abs(series.energy[n] - series.energy[0])]
        rows.append(row)
    return rows


def cmd_run(args) -> int:
    problem = problem_by_label(args.problem)
    variant = SchemeVariant.from_label(args.variant)
    out_dir = Path(args.out)
    names = problem.component_names
    header = (["t"] + [f"mass_{c}" for c in names] + ["momentum", "energy"]
              + [f"dev_mass_{c}" for c in names] + ["dev_momentum", "dev_energy"])
    try:
        config = SolverConfig(q=args.q, p=args.p, dt=args.dt, dx=args.dx,
                              t_final=args.T, newton_tolerance=args.newton_tol)
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2

    try:
        trajectory = run_simulation(variant, problem, config)
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as failure:
        rows = []
        if failure.partial is not None and failure.partial.slabs:
            rows = _invariant_rows(global_invariants(variant, problem, failure.partial))
        failed_time = (failure.slab_index or 0) * config.dt
        rows.append([failed_time, *(["nan"] * (len(header) - 1))])
        _write_csv(out_dir / "invariants.csv", header, rows)
        print(f"solver failure on slab {failure.slab_index}: "
              f"residual {failure.residual_norm:.3e}", file=sys.stderr)
        return 1

    series = global_invariants(variant, problem, trajectory)
    _write_csv(out_dir / "invariants.csv", header, _invariant_rows(series))

    if args.snapshots > 0:
        _write_snapshots(out_dir / "fields.csv", trajectory, args.snapshots)
    return 0


def _write_snapshots(path: Path, trajectory, samples_per_element: int) -> None:
    space = trajectory.space
    names = trajectory.problem.component_names
    offsets = (np.arange(samples_per_element) + 0.5) / samples_per_element
    xs = (space.partition.node_coords[:-1, None]
          + space.partition.widths[:, None] * offsets[None, :]).ravel()
    header = ["t", "x"] + list(names)
    rows = []
    for n in range(trajectory.node_count):
        state = trajectory.state_at_node(n)
        vals = np.stack([space.evaluate(state[c], xs) for c in range(len(names))])
        for j, x in enumerate(xs):
            rows.append([trajectory.times[n], x, *vals[:, j]])
    _write_csv(path, header, rows)


def cmd_converge(args) -> int:
    problem = problem_by_label(args.problem)
    variant = SchemeVariant.from_label(args.variant)
    if problem.exact_solution is None:
        print(f"problem {problem.label!r} has no exact solution; "
              "a convergence study needs one", file=sys.stderr)
        return 2
    if args.imin > args.imax or args.imin < 0:
        print("need 0 <= imin <= imax", file=sys.stderr)
        return 2

    names = problem.component_names
    levels = list(range(args.imin, args.imax + 1))
    errors, hs = [], []
    for i in levels:
        h = args.hscale * 2.0**-i
        config = SolverConfig(q=args.q, p=args.p, dt=h, dx=h, t_final=args.T,
                              newton_tolerance=args.newton_tol)
        try:
            trajectory = run_simulation(variant, problem, config)
        except ValueError as exc:
            print(f"invalid configuration at level {i}: {exc}", file=sys.stderr)
            return 2
        except SolverFailure as failure:
            print(f"solver failure at level {i}, slab {failure.slab_index}",
                  file=sys.stderr)
            return 1
        errors.append(bochner_error(trajectory)[-1])
        hs.append(h)

    errors = np.array(errors)
    hs = np.array(hs)
    rates = np.full_like(errors, np.nan)
    for c in range(errors.shape[1]):
        rates[1:, c] = eoc(errors[:, c], hs)

    header = (["i", "h"] + [f"e_{c}" for c in names] + [f"eoc_{c}" for c in names])
    rows = []
    for row_idx, i in enumerate(levels):
        rows.append([float(i), hs[row_idx], *errors[row_idx], *rates[row_idx]])
    _write_csv(Path(args.out) / "convergence.csv", header, rows)
    return 0


def cmd_verify(args) -> int:
    results = run_property_checks(seed=args.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name:34s} max-residual={result.residual:.3e} "
              f"tolerance={result.tolerance:.0e}")
        failed += 0 if result.passed else 1
    print(f"{len(results) - failed}/{len(results)} property groups passed")
    return 0 if failed == 0 else 1


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = _apply_config_file(parser, list(sys.argv[1:] if argv is None else argv))
    if args.command == "run":
        return cmd_run(args)
    if args.command == "converge":
        return cmd_converge(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
