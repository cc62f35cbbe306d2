"""Optimality certificates and independent cross-checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .evolution import evaluate_cost, evolution_rhs
from .gradients import SolverConfig, compute_pu, linearize
from .grid import Trajectory
from .problem import OcpProblem, time_derivative
from .transition import propagate


@dataclass
class OptimalityResiduals:
    pu_pc_inf: float
    transversality: float


@dataclass
class ClassicResiduals:
    """Sup-norms of the adjoined (costate) optimality conditions on the grid.

    ``costate`` is the costate equation with a finite-difference
    ``lambda_dot``; ``stationarity`` is ``H_u``; ``transversality`` the
    free-``tf`` Hamiltonian condition (0 for fixed ``tf``); ``terminal`` the
    costate boundary condition; ``complementarity`` the worst of ``-mu`` and
    ``|mu C|`` over inequality constraints.
    """

    costate: float
    stationarity: float
    transversality: float
    terminal: float
    complementarity: float

    def as_dict(self) -> dict:
        return asdict(self)


def optimality_residuals(p: OcpProblem, traj: Trajectory,
                         cfg: Optional[SolverConfig] = None) -> OptimalityResiduals:
    """``max |p_u^pc|`` over nodes and ``|transversality|`` (0 for fixed ``tf``)."""
    cfg = cfg if cfg is not None else SolverConfig(N=traj.N)
    rates = evolution_rhs(p, traj, cfg)
    return OptimalityResiduals(rates.pu_pc_inf,
                               abs(rates.transversality) if p.free_tf else 0.0)


@dataclass
class RateIdentity:
    """Relative residuals of the imposed constraint rates at one trajectory.

    ``path`` is the worst ``|dC_i/dtau + k_C C_i|`` over active nodes and
    ``terminal`` is ``|dg/dtau + k_g g|``, each divided by the size of the
    terms that make it up.
    """

    path: float
    terminal: float
    active: int


def constraint_rate_identity(p: OcpProblem, traj: Trajectory,
                             cfg: SolverConfig) -> RateIdentity:
    """Check that the solved multipliers produce the demanded constraint rates.

    The control and terminal-time rates are split into their gradient,
    ``pi`` and ``mu`` parts; each part is pushed through the state row and
    the constraint linearization separately, and the residual of their sum
    is measured against the sum of their magnitudes.
    """
    rates = evolution_rhs(p, traj, cfg)
    asm, lin = rates.assembly, rates.assembly.lin
    mu, pi = rates.multipliers.mu, rates.pi
    k_tf = asm.k_tf
    parts = [(asm.gain_times(asm.pu), -k_tf * lin.terminal_rate),
             (asm.gain_times(asm.mu_gradient(mu)), 0.0)]
    if p.q:
        parts.append((asm.gain_times(asm.pi_direction @ pi), -k_tf * float(pi @ lin.g_rate)))
    Ct = time_derivative(p, "C", traj.x, traj.u, traj.t) if p.r else None

    path_terms, g_terms = [], []
    for du, dtf in parts:
        dx = asm.state_rate(du) + asm.D * dtf
        if p.r:
            path_terms.append(np.einsum("kia,ka->ki", lin.Cx, dx)
                              + np.einsum("kim,km->ki", lin.Cu, du)
                              + Ct * (traj.s * dtf)[:, None])
        if p.q:
            g_terms.append(lin.gx @ dx[-1] + lin.g_t * dtf)

    path, count = 0.0, 0
    if p.r:
        terms = np.stack(path_terms + [cfg.k_C * lin.C])
        for i, nodes in enumerate(rates.multipliers.active):
            if nodes.size == 0:
                continue
            count += nodes.size
            sel = terms[:, nodes, i]
            resid = np.abs(sel.sum(axis=0))
            scale = np.maximum(np.abs(sel).sum(axis=0), np.finfo(float).tiny)
            path = max(path, float(np.max(resid / scale)))
    terminal = 0.0
    if p.q:
        terms = np.stack(g_terms + [cfg.k_g * lin.g])
        resid = float(np.linalg.norm(terms.sum(axis=0)))
        scale = max(float(np.linalg.norm(np.abs(terms).sum(axis=0))), np.finfo(float).tiny)
        terminal = resid / scale
    return RateIdentity(path, terminal, count)


def _time_derivative(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    # central inside, one-sided at the ends
    return np.gradient(values, t, axis=0, edge_order=1)


def classic_residuals(p: OcpProblem, traj: Trajectory, lam: np.ndarray, pi,
                      mu) -> ClassicResiduals:
    """Evaluate the costate form of the optimality conditions at given multipliers."""
    lin = linearize(p, traj)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float).reshape(traj.N, p.r)
    pi = np.asarray(pi, dtype=float).reshape(p.q)

    lam_dot = _time_derivative(lam, traj.t)
    costate = (lam_dot + lin.Lx + np.einsum("kab,ka->kb", lin.fx, lam)
               + np.einsum("kia,ki->ka", lin.Cx, mu))
    stationarity = (lin.Lu + np.einsum("kam,ka->km", lin.fu, lam)
                    + np.einsum("kim,ki->km", lin.Cu, mu))

    transversality = 0.0
    if p.free_tf:
        val = lin.L[-1] + lam[-1] @ lin.f[-1] + lin.phi_t_f
        if p.q:
            val += pi @ lin.g_t
        transversality = abs(float(val))

    terminal = lam[-1] - lin.phi_x[-1]
    if p.q:
        terminal = terminal - lin.gx.T @ pi

    comp = 0.0
    ineq = [i for i, k in enumerate(p.constraint_kinds) if k != "equality"]
    if ineq:
        m_i, c_i = mu[:, ineq], lin.C[:, ineq]
        comp = float(max(np.max(-m_i, initial=0.0), np.max(np.abs(m_i * c_i), initial=0.0)))

    return ClassicResiduals(
        costate=float(np.max(np.abs(costate))),
        stationarity=float(np.max(np.abs(stationarity))),
        transversality=transversality,
        terminal=float(np.max(np.abs(terminal), initial=0.0)),
        complementarity=comp,
    )


def _bump(rng: np.random.Generator, t: np.ndarray, m: int) -> np.ndarray:
    """Random smooth direction: one Gaussian bump per control channel."""
    t0, span = t[0], t[-1] - t[0]
    centre = t0 + span * rng.uniform(0.2, 0.8, size=m)
    width = span * rng.uniform(0.08, 0.25, size=m)
    amp = rng.choice([-1.0, 1.0], size=m) * rng.uniform(0.5, 1.5, size=m)
    return amp * np.exp(-(((t[:, None] - centre) / width) ** 2))


def fd_gradient_check(p: OcpProblem, traj: Trajectory, seed: int = 0, eps: float = 1e-5,
                      n_dirs: int = 5) -> float:
    """Worst relative gap between ``int p_u^T v dt`` and a finite difference of ``J``.

    Meant for fixed-``tf`` problems without terminal or path constraints.
    Each perturbed control is re-propagated exactly from ``x0``.
    """
    rng = np.random.default_rng(seed)
    if not p.free_tf:
        traj = traj.copy(tf=p.tf_fixed)
    base = traj.copy(x=propagate(p, traj.u, traj.grid))
    pu = compute_pu(p, base)
    W = base.grid.weights
    J0 = evaluate_cost(p, base)
    worst = 0.0
    for _ in range(n_dirs):
        v = _bump(rng, base.t, p.m)
        predicted = float(np.sum(W[:, None] * pu * v))
        u1 = base.u + eps * v
        moved = base.copy(x=propagate(p, u1, base.grid), u=u1)
        measured = (evaluate_cost(p, moved) - J0) / eps
        scale = max(abs(measured), abs(predicted))
        if scale == 0.0:
            continue
        worst = max(worst, abs(predicted - measured) / scale)
    return worst
