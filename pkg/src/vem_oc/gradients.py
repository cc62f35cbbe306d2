"""Costate-free gradient, terminal multiplier and costate recovery.

Everything here works on one fixed trajectory.  The forward integral
``dx(t_i) = int_{t0}^{t_i} Ho(t_i, s) du(s) ds`` is realized by the exact
derivative of the grid propagation, so node states follow re-propagation to
first order.  The backward integrals in the gradient use the adjoint of that
operator under the trapezoid inner product, which keeps the discrete
evolution a true descent direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ControllabilityError
from .grid import TimeGrid, Trajectory
from .problem import OcpProblem, time_derivative
from .transition import TransitionTable, build_transition_table

COND_LIMIT = 1e12


@dataclass
class SolverConfig:
    """Gains, tolerances and grid size for one evolution run.

    ``k_g`` is the decay rate imposed on terminal-constraint residuals
    (``dg/dtau = -k_g g``); zero gives the plain feasibility-preserving
    evolution.  ``repropagate_every`` of 0 or infinity disables state
    re-propagation.
    """

    K: float | np.ndarray = 0.2
    k_tf: float = 0.1
    k_C: float = 0.1
    k_g: float = 0.1
    rtol: float = 1e-3
    atol: float = 1e-6
    tau_end: float = 300.0
    N: int = 41
    active_tol: float = 1e-9
    sign_tol: float = 1e-10
    residual_tol: float = 1e-4
    repropagate_every: float = 10
    tikhonov: float = 0.0
    node_motion_correction: bool = True
    feas_tol: float = 1e-5
    max_steps: int = 200_000

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape[0] != K.shape[1] or not np.allclose(K, K.T):
            raise ValueError("K must be a symmetric matrix or a positive scalar")
        if K.size == 1 and K[0, 0] <= 0 or K.size > 1 and np.linalg.eigvalsh(K).min() <= 0:
            raise ValueError("K must be positive definite")
        for name in ("rtol", "atol", "active_tol", "sign_tol", "residual_tol",
                     "tau_end", "feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("k_tf", "k_C", "k_g", "tikhonov"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.N < 3:
            raise ValueError("N must be at least 3")
        if self.repropagate_every < 0:
            raise ValueError("repropagate_every must be nonnegative")

    def gain(self, m: int) -> np.ndarray:
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        return K[0, 0] * np.eye(m) if K.size == 1 else K

    def tf_gain(self, problem: OcpProblem) -> float:
        return self.k_tf if problem.free_tf else 0.0

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = np.asarray(value).tolist() if isinstance(value, np.ndarray) else value
        return out


@dataclass
class Linearization:
    """All callback values the method needs, evaluated on the grid."""

    t: np.ndarray
    f: np.ndarray
    fx: np.ndarray
    fu: np.ndarray
    L: np.ndarray
    Lx: np.ndarray
    Lu: np.ndarray
    C: np.ndarray
    Cx: np.ndarray
    Cu: np.ndarray
    phi_x: np.ndarray
    phi_path: np.ndarray  # L_x + phi_tx + phi_xx^T f + f_x^T phi_x along the path
    g: np.ndarray
    gx: np.ndarray
    terminal_rate: float  # phi_t + phi_x^T f + L at tf
    g_rate: np.ndarray  # g_xf f + g_tf at tf
    g_t: np.ndarray
    phi_t_f: float


def linearize(problem: OcpProblem, traj: Trajectory) -> Linearization:
    x, u, t = traj.x, traj.u, traj.t
    ev = problem.evaluate
    f = ev("f", x, u, t)
    fx = ev("f_x", x, u, t)
    phi_x = ev("phi_x", x, t)
    phi_xx = ev("phi_xx", x, t)
    phi_tx = ev("phi_tx", x, t)
    Lx = ev("L_x", x, u, t)
    path = (Lx + phi_tx + np.einsum("kba,kb->ka", phi_xx, f)
            + np.einsum("kba,kb->ka", fx, phi_x))
    L = ev("L", x, u, t)
    xf, tf = x[-1:], t[-1:]
    phi_t_f = float(ev("phi_t", xf, tf)[0])
    gx = ev("g_xf", xf, tf)[0]
    gt = ev("g_tf", xf, tf)[0]
    return Linearization(
        t=t, f=f, fx=fx, fu=ev("f_u", x, u, t), L=L, Lx=Lx, Lu=ev("L_u", x, u, t),
        C=ev("C", x, u, t), Cx=ev("C_x", x, u, t), Cu=ev("C_u", x, u, t),
        phi_x=phi_x, phi_path=path, g=ev("g", xf, tf)[0], gx=gx,
        terminal_rate=phi_t_f + float(phi_x[-1] @ f[-1]) + float(L[-1]),
        g_rate=gx @ f[-1] + gt, g_t=gt, phi_t_f=phi_t_f,
    )


class Assembly:
    """Discrete linear operators of the evolution at one trajectory.

    The control rate ``v`` (N, m) maps to state rates through ``G`` and to
    terminal/path constraint rates through ``E`` and ``constraint_rate``;
    ``pu``, ``M`` and ``h1`` are the gradient and terminal-multiplier data.
    """

    def __init__(self, problem: OcpProblem, traj: Trajectory, cfg: SolverConfig,
                 lin: Optional[Linearization] = None,
                 table: Optional[TransitionTable] = None):
        self.problem = problem
        self.traj = traj
        self.cfg = cfg
        self.grid: TimeGrid = traj.grid
        self.lin = lin if lin is not None else linearize(problem, traj)
        self.table = table if table is not None else build_transition_table(
            problem, traj, self.lin.fu)
        self.K = cfg.gain(problem.m)
        self.k_tf = cfg.tf_gain(problem)
        self.W = self.grid.weights
        self.tf_coupled = bool(cfg.node_motion_correction and self.k_tf > 0)

    # -- operators ------------------------------------------------------
    @cached_property
    def G(self) -> np.ndarray:
        """``G[i, :, j, :] = d x_i / d u_j`` of the grid propagation, shape (N, n, N, m)."""
        return self.table.G.transpose(0, 2, 1, 3)

    @cached_property
    def _GW(self) -> np.ndarray:
        # G^T scaled by W_i / W_j: the trapezoid-inner-product adjoint, (j, m, i, n)
        W = self.W
        return np.einsum("iajb,i,j->jbia", self.G, W, 1.0 / W)

    def state_rate(self, v: np.ndarray) -> np.ndarray:
        """``int_{t0}^{t_i} Ho(t_i, s) v(s) ds`` for (N, m[, k]) inputs."""
        return np.tensordot(self.G, v, axes=([2, 3], [0, 1]))

    def constraint_rate(self, v: np.ndarray) -> np.ndarray:
        """Path-constraint rates ``C_x dx + C_u v`` at every node, (N, r[, k])."""
        dx = self.state_rate(v)
        lin = self.lin
        return (np.einsum("kia,ka...->ki...", lin.Cx, dx)
                + np.einsum("kib,kb...->ki...", lin.Cu, v))

    @cached_property
    def E(self) -> np.ndarray:
        """``g_xf int Ho(t_f, t) v dt`` as a (q, N, m) operator."""
        return np.einsum("qa,ajb->qjb", self.lin.gx, self.G[-1])

    def terminal_rate(self, v: np.ndarray) -> np.ndarray:
        return np.tensordot(self.E, v, axes=([1, 2], [0, 1]))

    # -- terminal-time coupling ---------------------------------------------
    @cached_property
    def D(self) -> np.ndarray:
        """Node-state drift per unit ``dtf``, (N, n); zero without the correction."""
        if not self.tf_coupled:
            return np.zeros((self.grid.N, self.problem.n))
        return self.table.D

    @cached_property
    def g_tf_rate(self) -> np.ndarray:
        """``dg/dtf`` seen by the grid; equals ``g_xf f + g_tf`` in continuous time."""
        if not self.tf_coupled:
            return self.lin.g_rate
        return self.lin.gx @ self.D[-1] + self.lin.g_t

    @cached_property
    def c_tf_rate(self) -> np.ndarray:
        """``dC_i/dtf`` at every node, (N, r)."""
        p, lin = self.problem, self.lin
        if not self.tf_coupled or p.r == 0:
            return np.zeros((self.grid.N, p.r))
        traj = self.traj
        Ct = time_derivative(p, "C", traj.x, traj.u, traj.t)
        return np.einsum("kia,ka->ki", lin.Cx, self.D) + Ct * traj.s[:, None]

    def backward(self, a: np.ndarray) -> np.ndarray:
        """``int_{t_j}^{tf} Ho^T(s, t_j) a(s) ds`` for node values a (N, n[, k])."""
        return np.tensordot(self._GW, a, axes=([2, 3], [0, 1]))

    def gain_times(self, p: np.ndarray) -> np.ndarray:
        """``-K p`` nodewise."""
        return -np.einsum("ab,jb...->ja...", self.K, p)

    # -- gradient data --------------------------------------------------
    @cached_property
    def pu(self) -> np.ndarray:
        lin = self.lin
        return (lin.Lu + np.einsum("kam,ka->km", lin.fu, lin.phi_x)
                + self.backward(lin.phi_path))

    @cached_property
    def pi_direction(self) -> np.ndarray:
        """Per unit ``pi``: ``Ho^T(t_f, t) g_xf^T``, shape (N, m, q)."""
        return np.einsum("ajm,qa,j->jmq", self.G[-1], self.lin.gx, 1.0 / self.W)

    def mu_direction(self, columns) -> np.ndarray:
        """Gradient contribution of unit multipliers at (node, constraint) pairs.

        Returns (N, m, len(columns)); column ``c`` is
        ``C_u^T e_k + int Ho^T(s, t) C_x^T(s) e_k(s) ds`` for the unit
        multiplier at node ``k`` on constraint ``i``.
        """
        lin = self.lin
        N, m = self.grid.N, self.problem.m
        out = np.zeros((N, m, len(columns)))
        for c, (k, i) in enumerate(columns):
            out[k, :, c] += lin.Cu[k, i]
            out[:, :, c] += self._GW[:, :, k, :] @ lin.Cx[k, i]
        return out

    def mu_gradient(self, mu: np.ndarray) -> np.ndarray:
        """Full-grid version of :meth:`mu_direction` applied to ``mu`` (N, r)."""
        lin = self.lin
        pointwise = np.einsum("kib,ki->kb", lin.Cu, mu)
        return pointwise + self.backward(np.einsum("kia,ki->ka", lin.Cx, mu))

    @cached_property
    def M(self) -> np.ndarray:
        q = self.problem.q
        if q == 0:
            return np.zeros((0, 0))
        dv = self.gain_times(self.pi_direction)
        b = self.lin.g_rate
        return (-np.einsum("qjm,jmp->qp", self.E, dv)
                + self.k_tf * np.outer(self.g_tf_rate, b))

    @cached_property
    def h1(self) -> np.ndarray:
        if self.problem.q == 0:
            return np.zeros(0)
        return (-self.terminal_rate(self.gain_times(self.pu))
                + self.k_tf * self.g_tf_rate * self.lin.terminal_rate)

    @cached_property
    def M_factor(self):
        if self.problem.q == 0:
            return None
        M = self.M
        try:
            cond = np.linalg.cond(M, 1)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise ControllabilityError(
                f"terminal multiplier matrix is singular (condition {cond:.3e})")
        return scipy.linalg.lu_factor(M)

    def solve_M(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.M_factor, rhs)

    def pi_from_mu(self, mu: np.ndarray) -> np.ndarray:
        """``pi`` solving ``M pi = -(h1 + g_xf int h2 mu) + k_g g``."""
        if self.problem.q == 0:
            return np.zeros(0)
        r_vec = self.h1 + self.mu_terminal(mu)
        return self.solve_M(-r_vec + self.cfg.k_g * self.lin.g)

    def mu_terminal(self, mu: np.ndarray) -> np.ndarray:
        """``g_xf int h2(t) mu(t) dt``: terminal-rate response to ``mu``."""
        if self.problem.q == 0:
            return np.zeros(0)
        return -self.terminal_rate(self.gain_times(self.mu_gradient(mu)))

    def pu_pc(self, pi: np.ndarray, mu: np.ndarray) -> np.ndarray:
        out = self.pu + self.mu_gradient(mu)
        if self.problem.q:
            out = out + self.pi_direction @ pi
        return out

    def tf_rate(self, pi: np.ndarray) -> float:
        return -self.k_tf * self.transversality(pi)

    def transversality(self, pi: np.ndarray) -> float:
        val = self.lin.terminal_rate
        if self.problem.q:
            val += float(pi @ self.lin.g_rate)
        return float(val)


@dataclass
class GradientBundle:
    """Gradient pieces at one trajectory, for inspection and output."""

    pu: np.ndarray
    h1: np.ndarray
    M: np.ndarray
    r_vec: np.ndarray
    pi: np.ndarray
    pu_pc: np.ndarray
    h2_terminal: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _assembly(p, traj, table, cfg=None):
    return Assembly(p, traj, cfg or SolverConfig(N=traj.N), table=table)


def compute_pu(p: OcpProblem, traj: Trajectory,
               table: Optional[TransitionTable] = None) -> np.ndarray:
    """Costate-free gradient ``p_u`` at every node, shape (N, m)."""
    return _assembly(p, traj, table).pu


def solve_pi(p: OcpProblem, traj: Trajectory, mu=None, cfg: Optional[SolverConfig] = None,
             table: Optional[TransitionTable] = None) -> np.ndarray:
    """Terminal Lagrange multiplier ``pi = -M^{-1} r`` (empty when ``q == 0``)."""
    asm = _assembly(p, traj, table, cfg)
    mu = np.zeros((traj.N, p.r)) if mu is None else _mu_array(mu)
    return asm.pi_from_mu(mu)


def compute_pu_pc(p: OcpProblem, traj: Trajectory, pi, mu,
                  table: Optional[TransitionTable] = None) -> np.ndarray:
    """Constrained gradient ``p_u^pc`` at every node, shape (N, m)."""
    asm = _assembly(p, traj, table)
    return asm.pu_pc(np.asarray(pi, dtype=float), _mu_array(mu))


def recover_costate(p: OcpProblem, traj: Trajectory, pi, mu,
                    table: Optional[TransitionTable] = None,
                    lin: Optional[Linearization] = None) -> np.ndarray:
    """Costates from states, controls and multipliers, shape (N, n).

    Uses plain trapezoid weights on ``[t_j, tf]``, so the last node gives
    ``phi_x + g_xf^T pi`` exactly.
    """
    lin = lin if lin is not None else linearize(p, traj)
    table = table if table is not None else build_transition_table(p, traj, lin.fu)
    mu = _mu_array(mu)
    tail = traj.grid.tail_weights()
    integrand = lin.phi_path + np.einsum("kia,ki->ka", lin.Cx, mu)
    lam = lin.phi_x + np.einsum("jk,kjba,kb->ja", tail, table.Phi, integrand)
    if p.q:
        lam = lam + np.einsum("jba,qb,q->ja", table.Phi[-1], lin.gx, np.asarray(pi, float))
    return lam


def _mu_array(mu) -> np.ndarray:
    return np.asarray(getattr(mu, "mu", mu), dtype=float)
