"""State-transition matrices and impulse responses of the linearized dynamics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, PropagationError
from .grid import TimeGrid, Trajectory
from .problem import OcpProblem, time_derivative

SUBSTEPS = 4


def rk4_sweep(problem: OcpProblem, x_start, u_a, u_b, t_a, h, with_phi=False,
              substeps=SUBSTEPS, span=None):
    """Integrate ``x' = f`` across intervals, optionally with its sensitivities.

    All arrays carry a leading batch axis, one entry per interval of length
    ``h``; the control is linear between ``u_a`` and ``u_b``.  Returns the end
    state, and with ``with_phi`` also ``(Phi, S_a, S_b, S_tf)``: the
    derivatives of the end state with respect to the start state, the two
    control values and the terminal time of the horizon ``span = (t0, tf)``
    (node times scale with it).  They come from applying the same RK4 stages
    to the variational equation, which makes them exact derivatives of the
    discrete map.
    """
    x = np.array(x_start, dtype=float)
    B, n = x.shape
    m = np.shape(u_a)[1]
    du = u_b - u_a
    dt = h / substeps
    if with_phi:
        t0, tf = span
        sens = np.zeros((B, n, n + 2 * m + 1))
        sens[:, :, :n] = np.eye(n)
    else:
        sens = None

    def rates(xs, S, theta):
        u = u_a + theta * du
        t = t_a + theta * h
        fv = problem.evaluate("f", xs, u, t)
        if not with_phi:
            return fv, None
        dS = problem.evaluate("f_x", xs, u, t) @ S
        fu = problem.evaluate("f_u", xs, u, t)
        dS[:, :, n:n + m] += (1.0 - theta) * fu
        dS[:, :, n + m:-1] += theta * fu
        ft = time_derivative(problem, "f", xs, u, t)
        dS[:, :, -1] += (fv + ft * (t - t0)[:, None]) / (tf - t0)
        return fv, dS

    def shift(S, c, dS):
        return None if S is None else S + c[..., None] * dS

    for k in range(substeps):
        th = k / substeps
        half = 0.5 / substeps
        c = dt[:, None]
        k1, p1 = rates(x, sens, th)
        k2, p2 = rates(x + 0.5 * c * k1, shift(sens, 0.5 * c, p1), th + half)
        k3, p3 = rates(x + 0.5 * c * k2, shift(sens, 0.5 * c, p2), th + half)
        k4, p4 = rates(x + c * k3, shift(sens, c, p3), th + 2 * half)
        x = x + c / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if with_phi:
            sens = sens + c[..., None] / 6.0 * (p1 + 2 * p2 + 2 * p3 + p4)
    if not with_phi:
        return x, None
    return x, (sens[:, :, :n], sens[:, :, n:n + m], sens[:, :, n + m:-1], sens[:, :, -1])


def propagate(problem: OcpProblem, u, grid: TimeGrid) -> np.ndarray:
    """Node states obtained by integrating the dynamics from ``x0``."""
    t = grid.t
    N = grid.N
    x = np.empty((N, problem.n))
    x[0] = problem.x0
    for i in range(N - 1):
        end, _ = rk4_sweep(problem, x[i:i + 1], u[i:i + 1], u[i + 1:i + 2],
                           t[i:i + 1], t[i + 1:i + 2] - t[i:i + 1])
        if not np.all(np.isfinite(end)):
            raise PropagationError(f"non-finite state after node {i}")
        x[i + 1] = end[0]
    return x


@dataclass
class TransitionTable:
    """Lower-triangular tables over node pairs; entries with ``i < j`` are zero.

    ``Phi[i, j] = Phi(t_i, t_j)`` and ``Ho[i, j] = Phi(t_i, t_j) f_u(t_j)``.
    ``G[i, j]`` is the derivative of the propagated node state ``x_i`` with
    respect to the node control ``u_j``, the discrete counterpart of
    ``int_{t0}^{t_i} Ho(t_i, s) du(s) ds``.  ``D[i]`` is the derivative of
    ``x_i`` with respect to ``tf`` at fixed node controls.
    """

    Phi: np.ndarray
    Ho: np.ndarray
    grid: TimeGrid
    G: np.ndarray | None = None
    D: np.ndarray | None = None

    def phi(self, i: int, j: int) -> np.ndarray:
        return self.Phi[i, j]

    def ho(self, i: int, j: int) -> np.ndarray:
        return self.Ho[i, j]


def interval_factors(problem: OcpProblem, traj: Trajectory):
    """Per-interval ``(Phi(t_{i+1}, t_i), S_a, S_b, S_tf)`` integrated from node values."""
    t = traj.t
    _, factors = rk4_sweep(problem, traj.x[:-1], traj.u[:-1], traj.u[1:], t[:-1],
                           np.diff(t), with_phi=True, span=(traj.t0, traj.tf))
    flat = np.concatenate([a.reshape(a.shape[0], -1) for a in factors], axis=1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        raise AssemblyError(f"non-finite transition factor on interval starting at node "
                            f"{int(np.argmax(bad))}")
    return factors


def build_transition_table(problem: OcpProblem, traj: Trajectory,
                           f_u: np.ndarray | None = None) -> TransitionTable:
    """Chain per-interval factors into the full lower-triangular tables."""
    N, n = traj.N, problem.n
    F, Sa, Sb, Stf = interval_factors(problem, traj)
    Phi = np.zeros((N, N, n, n))
    Phi[np.arange(N), np.arange(N)] = np.eye(n)
    D = np.zeros((N, n))
    for i in range(N - 1):
        Phi[i + 1, :i + 1] = F[i] @ Phi[i, :i + 1]
        D[i + 1] = F[i] @ D[i] + Stf[i]
    if f_u is None:
        f_u = problem.evaluate("f_u", traj.x, traj.u, traj.t)
    Ho = Phi @ f_u[None, :, :, :]
    # interval k feeds x_{k+1} through u_k (S_a) and u_{k+1} (S_b)
    G = np.zeros((N, N) + Sa.shape[1:])
    idx = np.arange(N - 1)
    for i in range(1, N):
        k = idx[:i]
        G[i, k] += Phi[i, k + 1] @ Sa[k]
        G[i, k + 1] += Phi[i, k + 1] @ Sb[k]
    return TransitionTable(Phi, Ho, traj.grid, G, D)
