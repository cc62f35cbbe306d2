"""Variation-time evolution: right-hand side, re-propagation and the driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InfeasibleInitError, VemError
from .gradients import Assembly, SolverConfig
from .grid import Trajectory, quad
from .integrator import DormandPrince45
from .multipliers import MultiplierState, solve_mu
from .problem import OcpProblem
from .transition import propagate

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("tau", "J", "tf", "g_norm", "maxC", "pu_pc_inf", "transversality")


@dataclass
class EvolutionRates:
    du: np.ndarray
    dx: np.ndarray
    dtf: float
    multipliers: MultiplierState
    pi: np.ndarray
    pu_pc: np.ndarray
    transversality: float
    assembly: Assembly

    @property
    def pu_pc_inf(self) -> float:
        return float(np.max(np.abs(self.pu_pc))) if self.pu_pc.size else 0.0


@dataclass
class Diagnostics:
    """One row per accepted step (plus the initial state)."""

    rows: list = field(default_factory=list)

    def append(self, **row):
        if self.rows and not row["tau"] > self.rows[-1]["tau"]:
            raise ValueError("tau must increase strictly across records")
        self.rows.append({k: float(row[k]) for k in HISTORY_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)


@dataclass
class SolveResult:
    trajectory: Trajectory
    multipliers: MultiplierState
    pi: np.ndarray
    diagnostics: Diagnostics
    status: str  # "converged" | "tau_end" | "stopped"
    tau: float
    steps: int
    rejected: int
    nfev: int
    snapshots: list = field(default_factory=list)  # (tau, Trajectory)
    rates: Optional[EvolutionRates] = None


def stacked_size(p: OcpProblem, N: int) -> int:
    """Length of the variation-time state: x and u at every node, plus ``tf``."""
    return N * p.n + N * p.m + 1


def pack(traj: Trajectory) -> np.ndarray:
    return np.concatenate([traj.x.ravel(), traj.u.ravel(), [traj.tf]])


def unpack(y: np.ndarray, template: Trajectory) -> Trajectory:
    N, n = template.x.shape
    m = template.u.shape[1]
    x = y[:N * n].reshape(N, n)
    u = y[N * n:N * n + N * m].reshape(N, m)
    return Trajectory(x, u, y[-1], template.s, template.t0)


def evaluate_cost(p: OcpProblem, traj: Trajectory) -> float:
    """Bolza cost with the running part by trapezoid."""
    phi = float(p.evaluate("phi", traj.x[-1:], np.array([traj.tf]))[0])
    if p.L is None:
        return phi
    return phi + float(quad(p.evaluate("L", traj.x, traj.u, traj.t), traj.grid))


def propagate_states(p: OcpProblem, traj: Trajectory) -> Trajectory:
    """Trajectory with ``x`` recomputed from ``x0`` under the current controls."""
    return traj.copy(x=propagate(p, traj.u, traj.grid))


def evolution_rhs(p: OcpProblem, traj: Trajectory, cfg: SolverConfig) -> EvolutionRates:
    """Variation-time rates of controls, node states and terminal time."""
    if not traj.tf > traj.t0:
        raise VemError(f"terminal time {traj.tf} collapsed onto t0")
    asm = Assembly(p, traj, cfg)
    mult = solve_mu(p, traj, cfg, asm)
    pi = mult.pi_ref
    pu_pc = asm.pu_pc(pi, mult.mu)
    du = asm.gain_times(pu_pc)
    dtf = asm.tf_rate(pi) if p.free_tf else 0.0
    dx = asm.state_rate(du) + asm.D * dtf
    dx[0] = 0.0
    for name, arr in (("du", du), ("dx", dx)):
        if not np.all(np.isfinite(arr)):
            node = int(np.argwhere(~np.isfinite(arr))[0, 0])
            raise VemError(f"non-finite {name} rate at node {node}")
    if not np.isfinite(dtf):
        raise VemError("non-finite terminal-time rate")
    return EvolutionRates(du, dx, float(dtf), mult, pi, pu_pc,
                          asm.transversality(pi) if p.free_tf else 0.0, asm)


def feasibility_violations(p: OcpProblem, traj: Trajectory, tol: float) -> list[str]:
    out = []
    x_prop = propagate(p, traj.u, traj.grid)
    scale = max(1.0, float(np.max(np.abs(traj.x))))
    dyn = float(np.max(np.abs(x_prop - traj.x)))
    if dyn > tol * scale:
        out.append(f"dynamics residual {dyn:.3e}")
    if p.q:
        g = p.evaluate("g", traj.x[-1:], np.array([traj.tf]))[0]
        if np.linalg.norm(g) > tol:
            out.append(f"terminal constraint residual {np.linalg.norm(g):.3e}")
    if p.r:
        C = p.evaluate("C", traj.x, traj.u, traj.t)
        ineq = np.array([k != "equality" for k in p.constraint_kinds])
        worst = np.max(np.where(ineq, C, np.abs(C)))
        if worst > tol:
            out.append(f"path constraint violation {worst:.3e}")
    return out


def _record(diag, p, traj, rates, tau):
    g_norm = 0.0
    if p.q:
        g_norm = float(np.linalg.norm(rates.assembly.lin.g))
    max_c = 0.0
    if p.r:
        max_c = float(max(0.0, np.max(rates.assembly.lin.C)))
    diag.append(tau=tau, J=evaluate_cost(p, traj), tf=traj.tf, g_norm=g_norm, maxC=max_c,
                pu_pc_inf=rates.pu_pc_inf, transversality=abs(rates.transversality))


def _converged(rates, cfg):
    g_ok = rates.assembly.lin.g.size == 0 or np.linalg.norm(rates.assembly.lin.g) < 0.1 * cfg.feas_tol
    return (rates.pu_pc_inf < cfg.residual_tol and abs(rates.transversality) < cfg.residual_tol
            and g_ok)


def solve(p: OcpProblem, init: Trajectory, cfg: SolverConfig, *,
          check_init: bool = True,
          stop: Optional[Callable[[Trajectory, EvolutionRates], bool]] = None,
          snapshot_taus=None) -> SolveResult:
    """Evolve ``init`` in variation time until the optimality residuals vanish.

    Stops at ``cfg.tau_end``, on convergence, or when ``stop`` returns true
    after an accepted step.  States are re-propagated from ``x0`` every
    ``cfg.repropagate_every`` accepted steps and once more at the end.
    """
    if check_init:
        bad = feasibility_violations(p, init, cfg.feas_tol)
        if bad:
            raise InfeasibleInitError("initial trajectory infeasible: " + "; ".join(bad))
    if not p.free_tf:
        init = init.copy(tf=p.tf_fixed)
    template = init
    last: dict = {}

    def fun(tau, y):
        traj = unpack(y, template)
        rates = evolution_rhs(p, traj, cfg)
        last["traj"], last["rates"] = traj, rates
        return np.concatenate([rates.dx.ravel(), rates.du.ravel(), [rates.dtf]])

    diag = Diagnostics()
    snapshots = []
    targets = list(np.sort(snapshot_taus)) if snapshot_taus is not None else []
    ineq = np.array([k != "equality" for k in p.constraint_kinds], dtype=bool)

    def violations(rates):
        return np.where(ineq, rates.assembly.lin.C, -np.inf) if p.r else np.zeros((0, 0))

    def guard(tau, y):
        # reject steps that push an inequality past the tolerance band
        c_new = violations(last["rates"])
        c_old = accepted_c["value"]
        allowed = np.maximum(c_old, cfg.feas_tol)
        over = c_new > allowed
        if not np.any(over):
            return None
        target = 0.5 * allowed[over]
        start = np.minimum(c_old[over], 0.0)
        frac = (target - start) / (c_new[over] - start)
        return float(np.clip(np.min(frac), 0.05, 0.9))

    y0 = pack(init)
    f0 = fun(0.0, y0)
    traj, rates = last["traj"], last["rates"]
    accepted_c = {"value": violations(rates)}
    stepper = DormandPrince45(fun, 0.0, y0, cfg.tau_end, rtol=cfg.rtol, atol=cfg.atol,
                              retry_on=(VemError,), guard=guard if p.r else None, f0=f0)
    reprop = cfg.repropagate_every if 0 < cfg.repropagate_every < np.inf else 0
    _record(diag, p, traj, rates, 0.0)
    if targets and targets[0] <= 0.0:
        snapshots.append((0.0, traj.copy()))
        targets.pop(0)
    status = "tau_end"
    since_prop = 0
    if _converged(rates, cfg):
        status = "converged"
    else:
        while not stepper.done:
            if stepper.accepted >= cfg.max_steps:
                log.warning("step limit %d reached at tau=%.4g", cfg.max_steps, stepper.t)
                break
            try:
                stepper.step()
            except VemError as exc:
                if hasattr(exc, "diagnostics"):
                    exc.diagnostics = diag
                raise
            traj, rates = last["traj"], last["rates"]
            since_prop += 1
            if reprop and since_prop >= reprop:
                traj = propagate_states(p, traj)
                stepper.reset(pack(traj))
                traj, rates = last["traj"], last["rates"]
                since_prop = 0
            accepted_c["value"] = violations(rates)
            _record(diag, p, traj, rates, stepper.t)
            if targets and stepper.t >= targets[0]:
                snapshots.append((stepper.t, traj.copy()))
                while targets and stepper.t >= targets[0]:
                    targets.pop(0)
            if _converged(rates, cfg):
                status = "converged"
                break
            if stop is not None and stop(traj, rates):
                status = "stopped"
                break
    if reprop:
        traj = propagate_states(p, traj)
        rates = evolution_rhs(p, traj, cfg)
    log.info("solve finished: %s at tau=%.4g, tf=%.6g, %d steps", status, stepper.t,
             traj.tf, stepper.accepted)
    return SolveResult(traj, rates.multipliers, rates.pi, diag, status, stepper.t,
                       stepper.accepted, stepper.rejected, stepper.nfev, snapshots, rates)
