"""Built-in problems: time-optimal double integrator and constrained Brachistochrone.

Callbacks are written with trailing-axis indexing so they work both on a
single point and on a batch of nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .gradients import SolverConfig
from .problem import OcpProblem

SQRT6 = np.sqrt(6.0)
GRAVITY = 10.0


def _const(value):
    value = np.asarray(value, dtype=float)

    def fn(*args):
        batch = np.shape(args[-1])
        return np.broadcast_to(value, batch + value.shape).copy()

    return fn


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _terminal_time_cost(n):
    return dict(phi=lambda x, t: np.asarray(t, dtype=float), phi_t=_const(1.0),
                phi_x=_const(np.zeros(n)), phi_xx=_const(np.zeros((n, n))),
                phi_tx=_const(np.zeros(n)))


@dataclass(frozen=True)
class AnalyticOracle:
    """Closed-form optimal solution of a builtin problem."""

    tf: float
    switch_times: tuple
    x: Callable[[np.ndarray], np.ndarray]
    u: Callable[[np.ndarray], np.ndarray]
    lam: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LineInitSpec:
    """Closed-form feasible initializer: node values of ``x(t)``, ``u(t)`` on ``[t0, tf]``."""

    tf: float
    x: Callable[[np.ndarray], np.ndarray]
    u: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ReferenceValues:
    tf: float
    tf_external: float
    active_x: tuple


class Example1(NamedTuple):
    problem: OcpProblem
    config: SolverConfig
    oracle: AnalyticOracle
    tf_guess: float
    fssop_cost: dict


class Example2(NamedTuple):
    problem: OcpProblem
    config: SolverConfig
    init: LineInitSpec
    reference: ReferenceValues


def _double_integrator_dynamics():
    return dict(
        f=lambda x, u, t: _stack(x[..., 1], u[..., 0]),
        f_x=_const([[0.0, 1.0], [0.0, 0.0]]),
        f_u=_const([[0.0], [1.0]]),
    )


def _ex1_oracle() -> AnalyticOracle:
    ts = 1.0 + SQRT6 / 2.0
    tf = 1.0 + SQRT6
    c = SQRT6 / 3.0

    def x(t):
        t = np.asarray(t, dtype=float)
        before = _stack(-0.5 * t**2 + t + 1.0, -t + 1.0)
        after = _stack(0.5 * t**2 - tf * t + 3.5 + SQRT6, t - tf)
        return np.where((t < ts)[..., None], before, after)

    def u(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < ts, -1.0, 1.0)[..., None]

    def lam(t):
        t = np.asarray(t, dtype=float)
        return _stack(np.full_like(t, c), -c * t + c + 1.0)

    return AnalyticOracle(tf=tf, switch_times=(ts,), x=x, u=u, lam=lam)


def example1() -> Example1:
    """Minimum-time transfer of a double integrator with ``|u| <= 1``.

    The bound is written as ``u^2 - 1 <= 0`` and the terminal state is the
    origin.  Returns the problem, its solver settings, the analytic optimum
    and the initial terminal-time guess used for the feasible start.
    """
    problem = OcpProblem(
        n=2, m=1, q=2, r=1, x0=[1.0, 1.0],
        **_double_integrator_dynamics(),
        **_terminal_time_cost(2),
        g=lambda x, t: np.asarray(x, dtype=float),
        g_xf=_const(np.eye(2)),
        g_tf=_const(np.zeros(2)),
        C=lambda x, u, t: u**2 - 1.0,
        C_x=_const(np.zeros((1, 2))),
        C_u=lambda x, u, t: 2.0 * u[..., None],
        constraint_kinds=("pure_control",),
        vectorized=True,
        name="example1",
    )
    cfg = SolverConfig(K=0.2, k_tf=0.1, k_C=0.1, k_g=0.1, N=41, tau_end=300.0,
                       rtol=1e-3, atol=1e-6)
    energy = dict(L=lambda x, u, t: 0.5 * u[..., 0] ** 2, L_x=_const(np.zeros(2)),
                  L_u=lambda x, u, t: np.asarray(u, dtype=float))
    return Example1(problem, cfg, _ex1_oracle(), 8.0, energy)


def _brachistochrone_dynamics():
    def f(x, u, t):
        V, a = x[..., 2], u[..., 0]
        return _stack(V * np.sin(a), -V * np.cos(a), GRAVITY * np.cos(a))

    def f_x(x, u, t):
        a = u[..., 0]
        out = np.zeros(np.shape(a) + (3, 3))
        out[..., 0, 2] = np.sin(a)
        out[..., 1, 2] = -np.cos(a)
        return out

    def f_u(x, u, t):
        V, a = x[..., 2], u[..., 0]
        return _stack(V * np.cos(a), V * np.sin(a), -GRAVITY * np.sin(a))[..., None]

    return dict(f=f, f_x=f_x, f_u=f_u)


def example2() -> Example2:
    """Brachistochrone to ``x(tf) = 2`` above the slope ``y >= -0.5 x - 0.35``."""
    problem = OcpProblem(
        n=3, m=1, q=1, r=1, x0=[0.0, 0.0, 0.0],
        **_brachistochrone_dynamics(),
        **_terminal_time_cost(3),
        g=lambda x, t: np.asarray(x, dtype=float)[..., :1] - 2.0,
        g_xf=_const([[1.0, 0.0, 0.0]]),
        g_tf=_const([0.0]),
        C=lambda x, u, t: (-0.5 * x[..., 0] - x[..., 1] - 0.35)[..., None],
        C_x=_const([[-0.5, -1.0, 0.0]]),
        C_u=_const([[0.0]]),
        constraint_kinds=("pure_state",),
        vectorized=True,
        name="example2",
    )
    cfg = SolverConfig(K=0.1, k_tf=0.05, k_C=0.2, k_g=0.2, N=101, tau_end=300.0,
                       rtol=1e-3, atol=1e-6)
    slope = np.arctan(2.0)
    init = LineInitSpec(
        tf=1.0,
        x=lambda t: _stack(2.0 * t**2, -(t**2), 2.0 * np.sqrt(5.0) * t),
        u=lambda t: np.full(np.shape(t) + (1,), slope),
    )
    return Example2(problem, cfg, init, ReferenceValues(0.8001, 0.7999, (0.56, 1.06)))


BUILTIN = {"example1": example1, "example2": example2}


# -- fixtures for the gradient oracle ---------------------------------------

def lq_double_integrator(tf: float = 1.0) -> OcpProblem:
    """Double integrator with ``L = u^2 / 2``, fixed ``tf``, no constraints."""
    return OcpProblem(
        n=2, m=1, x0=[1.0, 1.0], **_double_integrator_dynamics(),
        L=lambda x, u, t: 0.5 * u[..., 0] ** 2,
        L_x=_const(np.zeros(2)),
        L_u=lambda x, u, t: np.asarray(u, dtype=float),
        tf_fixed=tf, vectorized=True, name="lq_double_integrator",
    )


def brachistochrone_range(tf: float = 0.8) -> OcpProblem:
    """Brachistochrone dynamics, fixed ``tf``, cost ``-x(tf)``, no constraints."""
    return OcpProblem(
        n=3, m=1, x0=[0.0, 0.0, 0.0], **_brachistochrone_dynamics(),
        phi=lambda x, t: -np.asarray(x, dtype=float)[..., 0],
        phi_x=_const([-1.0, 0.0, 0.0]),
        phi_t=_const(0.0),
        phi_xx=_const(np.zeros((3, 3))),
        phi_tx=_const(np.zeros(3)),
        tf_fixed=tf, vectorized=True, name="brachistochrone_range",
    )
