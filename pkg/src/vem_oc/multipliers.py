"""KKT multipliers of the path constraints.

On the active nodes the multipliers solve the discretized integral
equation that forces ``dC_i/dtau + k_C C_i = 0``; everywhere else they are
zero.  The active set is settled by dropping inequality nodes whose
multiplier comes out negative and re-solving.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ActiveSetError, AssemblyError, MultiplierSolveError
from .gradients import Assembly, SolverConfig
from .grid import Trajectory
from .problem import OcpProblem

MU_COND_LIMIT = 1e14


@dataclass
class MultiplierState:
    mu: np.ndarray  # (N, r)
    active: list  # per constraint, sorted node indices
    pi_ref: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @classmethod
    def zeros(cls, N: int, r: int) -> "MultiplierState":
        return cls(np.zeros((N, r)), [np.zeros(0, dtype=int) for _ in range(r)])


@dataclass
class MuSystem:
    """Dense system ``(leading + volterra + w) mu = -d_a`` over active pairs.

    ``leading`` is the pointwise ``C_u K C_u^T`` block, ``volterra`` collects
    the kernels acting on earlier and later nodes, ``w`` the part routed
    through the terminal multiplier, and ``d_a`` the free term including the
    barrier ``-k_C C``.
    """

    pairs: list  # (node, constraint)
    leading: np.ndarray
    volterra: np.ndarray
    w: np.ndarray
    d_a: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.leading + self.volterra + self.w

    @property
    def rhs(self) -> np.ndarray:
        return -self.d_a


def detect_candidates(p: OcpProblem, traj: Trajectory, cfg: SolverConfig,
                      C: Optional[np.ndarray] = None) -> list:
    """Nodes where each inequality constraint is activated (``C_i >= -tol``).

    Equality constraints list every node.
    """
    if C is None:
        C = p.evaluate("C", traj.x, traj.u, traj.t)
    out = []
    for i, kind in enumerate(p.constraint_kinds):
        if kind == "equality":
            out.append(np.arange(traj.N))
        else:
            out.append(np.flatnonzero(C[:, i] >= -cfg.active_tol))
    return out


def _pairs(candidates) -> list:
    return sorted((int(k), i) for i, nodes in enumerate(candidates) for k in nodes)


def assemble_mu_system(asm: Assembly, candidates) -> MuSystem:
    """Kernel matrices of the multiplier equation restricted to ``candidates``."""
    pairs = _pairs(candidates)
    A = len(pairs)
    if A == 0:
        empty = np.zeros((0, 0))
        return MuSystem([], empty, empty, empty, np.zeros(0))
    lin, cfg, p = asm.lin, asm.cfg, asm.problem
    rows = tuple(np.array(ix) for ix in zip(*pairs))

    dir_mu = asm.mu_direction(pairs)  # (N, m, A)
    rate_mu = asm.constraint_rate(asm.gain_times(dir_mu))  # (N, r, A)
    a_mu = -rate_mu[rows]  # (A, A)
    cu = lin.Cu[rows]  # (A, m)
    same = rows[0][:, None] == rows[0][None, :]
    leading = np.where(same, cu @ asm.K @ cu.T, 0.0)
    volterra = a_mu - leading

    c_tf = asm.c_tf_rate[rows]  # (A,)
    free = -asm.constraint_rate(asm.gain_times(asm.pu))[rows]
    free = free - cfg.k_C * lin.C[rows] + asm.k_tf * lin.terminal_rate * c_tf
    w = np.zeros((A, A))
    if p.q:
        rate_pi = asm.constraint_rate(asm.gain_times(asm.pi_direction))  # (N, r, q)
        a_pi = -rate_pi[rows] + asm.k_tf * np.outer(c_tf, lin.g_rate)  # (A, q)
        r_mu = -np.einsum("qjm,jmc->qc", asm.E, asm.gain_times(dir_mu))  # (q, A)
        w = -a_pi @ asm.solve_M(r_mu)
        free = free - a_pi @ asm.solve_M(asm.h1 - cfg.k_g * lin.g)

    for name, arr in (("leading", leading), ("volterra", volterra), ("w", w), ("d_a", free)):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr.reshape(A, -1)))[0, 0]
            node, con = pairs[bad]
            raise AssemblyError(f"non-finite {name} kernel entry at constraint {con}, node {node}")
    return MuSystem(pairs, leading, volterra, w, free)


def _solve_dense(system: MuSystem, tikhonov: float, active_snapshot) -> np.ndarray:
    mat = system.matrix
    if tikhonov:
        mat = mat + tikhonov * np.eye(mat.shape[0])
    try:
        cond = np.linalg.cond(mat, 1)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > MU_COND_LIMIT:
        raise MultiplierSolveError(
            f"multiplier system singular (condition {cond:.3e}, {mat.shape[0]} active nodes)",
            condition=cond, active=active_snapshot)
    return scipy.linalg.lu_solve(scipy.linalg.lu_factor(mat), system.rhs)


def solve_mu(p: OcpProblem, traj: Trajectory, cfg: SolverConfig,
             asm: Optional[Assembly] = None) -> MultiplierState:
    """Working-set solve for the multipliers; ``pi`` follows from them."""
    asm = asm if asm is not None else Assembly(p, traj, cfg)
    N, r = traj.N, p.r
    state = MultiplierState.zeros(N, r)
    if r == 0:
        state.pi_ref = asm.pi_from_mu(state.mu)
        return state
    candidates = detect_candidates(p, traj, cfg, C=asm.lin.C)
    equality = np.array([k == "equality" for k in p.constraint_kinds])
    mu = np.zeros((N, r))
    cap = max(1, r * N)
    for it in range(cap + 1):
        system = assemble_mu_system(asm, candidates)
        mu = np.zeros((N, r))
        if not system.pairs:
            break
        sol = _solve_dense(system, cfg.tikhonov, [c.copy() for c in candidates])
        nodes = np.array([k for k, _ in system.pairs])
        cons = np.array([i for _, i in system.pairs])
        mu[nodes, cons] = sol
        drop = (sol < -cfg.sign_tol) & ~equality[cons]
        if not np.any(drop):
            break
        if it == cap:
            raise ActiveSetError(f"active set not settled after {cap} iterations",
                                 active=[c.copy() for c in candidates])
        for i in range(r):
            gone = nodes[drop & (cons == i)]
            candidates[i] = np.setdiff1d(candidates[i], gone)
    state.mu = mu
    state.active = [np.asarray(c, dtype=int) for c in candidates]
    state.iterations = it
    state.pi_ref = asm.pi_from_mu(mu)
    return state
