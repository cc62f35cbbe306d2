"""Command-line entry point: ``vem-oc solve --problem NAME [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import VemError
from .evolution import SolveResult, evaluate_cost, feasibility_violations, solve
from .feasible_init import solve_fssop, straight_line_init
from .gradients import SolverConfig, recover_costate
from .grid import Trajectory
from .problems import BUILTIN, brachistochrone_range, lq_double_integrator
from .verification import classic_residuals, fd_gradient_check, optimality_residuals

log = logging.getLogger("vem_oc")

FLOAT = "%.17g"
N_SNAPSHOTS = 12

# flag name -> SolverConfig field
FLAG_FIELDS = {
    "grid_points": "N",
    "tau_end": "tau_end",
    "gain_k": "K",
    "gain_tf": "k_tf",
    "barrier_kc": "k_C",
    "rtol": "rtol",
    "atol": "atol",
    "repropagate_every": "repropagate_every",
}

# unconstrained fixed-tf variants used for the gradient oracle
FD_VARIANTS = {"example1": lq_double_integrator, "example2": brachistochrone_range}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vem-oc", description="Variation-evolving optimal control solver.")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run a built-in problem and write results")
    s.add_argument("--problem", required=True, help=f"one of: {', '.join(BUILTIN)}")
    s.add_argument("--config", type=Path, help="JSON file of solver settings")
    s.add_argument("--grid-points", type=int, help="number of grid nodes N")
    s.add_argument("--tau-end", type=float, help="final variation time")
    s.add_argument("--gain-k", type=float, help="control gain K (scalar)")
    s.add_argument("--gain-tf", type=float, help="terminal-time gain k_tf")
    s.add_argument("--barrier-kc", type=float, help="path-constraint barrier gain k_C")
    s.add_argument("--rtol", type=float)
    s.add_argument("--atol", type=float)
    s.add_argument("--fixed-tf", type=float, help="solve with this fixed terminal time")
    s.add_argument("--repropagate-every", type=int,
                   help="re-propagate states every N accepted steps (0 disables)")
    s.add_argument("--out", type=Path, help="output directory (default runs/<problem>)")
    s.add_argument("--seed", type=int, default=0, help="seed for gradient-check directions")
    s.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(base: SolverConfig, config_path, args) -> SolverConfig:
    """Built-in defaults, then the JSON file, then individual flags."""
    changes = {}
    if config_path is not None:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(data) - set(base.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        changes.update(data)
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            changes[name] = value
    try:
        return dataclasses.replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def initial_trajectory(name: str, bundle, problem, cfg: SolverConfig) -> Trajectory:
    if name == "example1":
        tf = problem.tf_fixed if not problem.free_tf else bundle.tf_guess
        return solve_fssop(problem, tf, cfg, cost_override=bundle.fssop_cost)
    if problem.free_tf or problem.tf_fixed == bundle.init.tf:
        return straight_line_init(problem, bundle.init, cfg.N, cfg)
    return solve_fssop(problem, problem.tf_fixed, cfg)


def _fmt(value) -> str:
    return FLOAT % value


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit_outputs(problem, result: SolveResult, lam: np.ndarray, summary: dict, out: Path):
    """Write trajectory, history, summary and snapshot files under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    traj = result.trajectory
    n, m, r = problem.n, problem.m, problem.r
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
              + [f"mu{i + 1}" for i in range(r)] + [f"lambda{i + 1}" for i in range(n)])
    table = np.column_stack([traj.t, traj.x, traj.u, result.multipliers.mu.reshape(traj.N, r),
                             lam])
    _write_csv(out / "trajectory.csv", header, table)
    hist = result.diagnostics
    _write_csv(out / "history.csv", hist.rows[0].keys() if hist.rows else [],
               [list(row.values()) for row in hist.rows])
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    snap_header = ["t"] + header[1:1 + n + m]
    for k, (tau, snap) in enumerate(result.snapshots):
        _write_csv(snap_dir / f"snapshot_{k:03d}_tau_{tau:.6g}.csv", snap_header,
                   np.column_stack([snap.t, snap.x, snap.u]))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def run_solve(args) -> int:
    if args.problem not in BUILTIN:
        print(f"unknown problem {args.problem!r}; available: {', '.join(BUILTIN)}",
              file=sys.stderr)
        return 1
    bundle = BUILTIN[args.problem]()
    try:
        cfg = resolve_config(bundle.config, args.config, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    problem = bundle.problem
    if args.fixed_tf is not None:
        if not args.fixed_tf > problem.t0:
            print("error: --fixed-tf must exceed t0", file=sys.stderr)
            return 1
        problem = problem.with_fixed_tf(args.fixed_tf)
    out = args.out if args.out is not None else Path("runs") / args.problem

    taus = np.concatenate([[0.0], np.geomspace(cfg.tau_end * 1e-3, cfg.tau_end, N_SNAPSHOTS - 1)])
    try:
        init = initial_trajectory(args.problem, bundle, problem, cfg)
        result = solve(problem, init, cfg, snapshot_taus=taus)
    except VemError as exc:
        out.mkdir(parents=True, exist_ok=True)
        report = {"error": type(exc).__name__, "message": str(exc)}
        diag = getattr(exc, "diagnostics", None)
        if diag is not None and len(diag):
            report["last_record"] = diag.rows[-1]
        (out / "error.json").write_text(json.dumps(report, indent=2))
        print(f"solver error: {exc} (diagnostics in {out / 'error.json'})", file=sys.stderr)
        return 2

    traj = result.trajectory
    lam = recover_costate(problem, traj, result.pi, result.multipliers)
    opt = optimality_residuals(problem, traj, cfg)
    classic = classic_residuals(problem, traj, lam, result.pi, result.multipliers)
    variant = FD_VARIANTS[args.problem](traj.tf)
    fd_err = fd_gradient_check(variant, traj.copy(tf=traj.tf), seed=args.seed)
    infeasible = feasibility_violations(problem, traj, cfg.feas_tol)
    summary = {
        "problem": args.problem,
        "status": result.status,
        "feasible": not infeasible,
        "violations": infeasible,
        "tf": traj.tf,
        "J": evaluate_cost(problem, traj),
        "pi": _jsonable(result.pi),
        "residuals": {"pu_pc_inf": opt.pu_pc_inf, "transversality": opt.transversality,
                      "classic": classic.as_dict(),
                      "fd_gradient_check": {"problem": variant.name, "seed": args.seed,
                                            "relative_error": fd_err}},
        "tau": result.tau,
        "steps": {"accepted": result.steps, "rejected": result.rejected,
                  "rhs_evaluations": result.nfev},
        "config": {k: _jsonable(v) for k, v in cfg.to_dict().items()},
        "fixed_tf": args.fixed_tf,
    }
    try:
        emit_outputs(problem, result, lam, summary, out)
    except OSError as exc:
        print(f"error: cannot write outputs to {out}: {exc}", file=sys.stderr)
        return 2
    print(f"{args.problem}: {result.status} at tau={result.tau:.4g}, tf={traj.tf:.6f}, "
          f"J={summary['J']:.6f}; results in {out}")
    if infeasible:
        print("final trajectory infeasible: " + "; ".join(infeasible), file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run_solve(args)


if __name__ == "__main__":
    sys.exit(main())
