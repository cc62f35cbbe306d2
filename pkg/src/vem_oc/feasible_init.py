"""Feasible initial trajectories.

The evolution only preserves feasibility, so it has to start from a
trajectory that already satisfies the dynamics, the terminal conditions and
the path constraints.  Two sources are offered: a closed-form construction
sampled on the grid, or an auxiliary fixed-horizon problem whose evolution
steers a zero-control start onto the constraint set.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleInitError
from .evolution import feasibility_violations, solve
from .gradients import SolverConfig
from .grid import Trajectory, build_grid
from .problem import OcpProblem
from .problems import LineInitSpec
from .transition import propagate

log = logging.getLogger(__name__)

FSSOP_K_G = 1.0
# integration tolerances for the feasibility-stopped run
FSSOP_RTOL, FSSOP_ATOL = 1e-6, 1e-9
# the auxiliary run gets at least this much variation time
FSSOP_TAU_END = 300.0
_COST_FIELDS = ("L", "L_x", "L_u", "phi", "phi_x", "phi_t", "phi_xx", "phi_tx")


def _gate(p: OcpProblem, traj: Trajectory, cfg: SolverConfig) -> Trajectory:
    bad = feasibility_violations(p, traj, cfg.feas_tol)
    if bad:
        raise InfeasibleInitError("initializer infeasible: " + "; ".join(bad))
    return traj


def fssop_problem(p: OcpProblem, tf_guess: float, weights: Optional[Sequence[float]] = None,
                  eps: float = 1e-6, cost_override: Optional[dict] = None) -> OcpProblem:
    """Auxiliary problem: same dynamics and terminal conditions, no path constraints.

    The running cost is ``sum_i w_i C_i`` plus ``eps |u|^2 / 2`` when every
    constraint is pure-state.  ``cost_override`` replaces the cost callbacks
    (any of ``L, L_x, L_u, phi, ...``) wholesale.
    """
    cleared = {name: None for name in _COST_FIELDS}
    common = dict(r=0, C=None, C_x=None, C_u=None, constraint_kinds=(),
                  tf_fixed=float(tf_guess), name=f"{p.name}_fssop")
    if cost_override is not None:
        return p.replace(**{**cleared, **cost_override}, **common)
    if p.r == 0:
        return p.replace(**cleared, **common)
    w = np.ones(p.r) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (p.r,) or np.any(w <= 0):
        raise ValueError("FSSOP weights must be r positive numbers")
    smooth = eps if all(k == "pure_state" for k in p.constraint_kinds) else 0.0
    C, C_x, C_u = p.callback("C"), p.callback("C_x"), p.callback("C_u")

    def L(x, u, t):
        return np.asarray(C(x, u, t)) @ w + 0.5 * smooth * np.sum(np.square(u), axis=-1)

    def L_x(x, u, t):
        return np.einsum("...ia,i->...a", C_x(x, u, t), w)

    def L_u(x, u, t):
        return np.einsum("...ib,i->...b", C_u(x, u, t), w) + smooth * np.asarray(u)

    return p.replace(**{**cleared, "L": L, "L_x": L_x, "L_u": L_u}, **common)


def solve_fssop(p: OcpProblem, tf_guess: float, cfg: SolverConfig,
                cost_override: Optional[dict] = None,
                weights: Optional[Sequence[float]] = None, eps: float = 1e-6) -> Trajectory:
    """Feasible initializer on ``[t0, tf_guess]`` from a zero-control start.

    With the default constraint-sum cost the run stops as soon as the
    feasibility gate passes, since that cost is unbounded below inside the
    feasible set; it is integrated tightly so that state drift does not mask
    the terminal residual.  With ``cost_override`` it runs to convergence.
    """
    grid = build_grid(cfg.N, p.t0, tf_guess)
    u0 = np.zeros((cfg.N, p.m))
    start = Trajectory(propagate(p, u0, grid), u0, tf_guess, grid.s, p.t0)
    if p.q == 0 and p.r == 0:
        return start
    aux = fssop_problem(p, tf_guess, weights, eps, cost_override)
    inner = dataclasses.replace(cfg, k_g=max(cfg.k_g, FSSOP_K_G),
                                tau_end=max(cfg.tau_end, FSSOP_TAU_END))
    target = 0.1 * cfg.feas_tol

    def feasible(traj, rates):
        return not feasibility_violations(p, traj, target)

    stop = None
    if cost_override is None:
        stop = feasible
        inner = dataclasses.replace(inner, rtol=min(cfg.rtol, FSSOP_RTOL),
                                    atol=min(cfg.atol, FSSOP_ATOL))
    result = solve(aux, start, inner, check_init=False, stop=stop)
    log.info("FSSOP finished: %s at tau=%.4g", result.status, result.tau)
    return _gate(p, result.trajectory, cfg)


def straight_line_init(p: OcpProblem, spec: LineInitSpec, N: int,
                       cfg: Optional[SolverConfig] = None) -> Trajectory:
    """Sample a closed-form trajectory on an ``N``-node grid and check it."""
    cfg = cfg if cfg is not None else SolverConfig(N=N)
    grid = build_grid(N, p.t0, spec.tf)
    x = np.asarray(spec.x(grid.t), dtype=float).reshape(N, p.n)
    u = np.asarray(spec.u(grid.t), dtype=float).reshape(N, p.m)
    return _gate(p, Trajectory(x, u, spec.tf, grid.s, p.t0), cfg)
