"""Normalized time grid, trapezoid quadrature and the trajectory container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGridError


@dataclass
class TimeGrid:
    """Nodes ``t_i = t0 + s_i (tf - t0)`` for fixed fractions ``s``.

    The fractions stay put while ``tf`` evolves, so node count and indexing
    never change.
    """

    s: np.ndarray
    t0: float
    tf: float

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.s.ndim != 1 or self.s.size < 3:
            raise InvalidGridError("grid needs at least 3 nodes")
        if self.s[0] != 0.0 or self.s[-1] != 1.0 or np.any(np.diff(self.s) <= 0):
            raise InvalidGridError("fractions must increase strictly from 0 to 1")
        if not self.tf > self.t0:
            raise InvalidGridError(f"tf={self.tf} must exceed t0={self.t0}")

    @property
    def N(self) -> int:
        return self.s.size

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.s * (self.tf - self.t0)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights over the whole horizon (sum to ``tf - t0``)."""
        return _trapezoid_weights(self.t)

    def volterra_weights(self) -> np.ndarray:
        """``w[i, j]``: weight of node ``j`` in the trapezoid rule on ``[t0, t_i]``."""
        dt = np.diff(self.t)
        N = self.N
        w = np.zeros((N, N))
        for i in range(1, N):
            w[i, :i] += 0.5 * dt[:i]
            w[i, 1:i + 1] += 0.5 * dt[:i]
        return w

    def tail_weights(self) -> np.ndarray:
        """``w[j, k]``: weight of node ``k`` in the trapezoid rule on ``[t_j, tf]``."""
        dt = np.diff(self.t)
        N = self.N
        w = np.zeros((N, N))
        for j in range(N - 1):
            w[j, j:N - 1] += 0.5 * dt[j:]
            w[j, j + 1:] += 0.5 * dt[j:]
        return w


def _trapezoid_weights(t):
    dt = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def build_grid(N: int, t0: float, tf: float) -> TimeGrid:
    """Uniform grid ``s_i = i / (N - 1)``."""
    if N < 3:
        raise InvalidGridError(f"N={N} < 3")
    if not tf > t0:
        raise InvalidGridError(f"tf={tf} must exceed t0={t0}")
    return TimeGrid(np.linspace(0.0, 1.0, N), float(t0), float(tf))


def quad(values, grid: TimeGrid, from_index: int = 0, to_index: int | None = None):
    """Composite trapezoid integral of node values between two node times.

    ``values`` has the node axis first; trailing axes are integrated
    componentwise.
    """
    if to_index is None:
        to_index = grid.N - 1
    if not 0 <= from_index <= to_index <= grid.N - 1:
        raise IndexError(f"bad range [{from_index}, {to_index}] for N={grid.N}")
    v = np.asarray(values, dtype=float)
    t = grid.t[from_index:to_index + 1]
    seg = v[from_index:to_index + 1]
    if t.size < 2:
        return np.zeros(v.shape[1:])
    w = _trapezoid_weights(t)
    return np.tensordot(w, seg, axes=(0, 0))


@dataclass
class Trajectory:
    """State and control node values on a normalized grid, plus ``tf``."""

    x: np.ndarray
    u: np.ndarray
    tf: float
    s: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float, ndmin=2)
        self.u = np.array(self.u, dtype=float, ndmin=2)
        self.s = np.asarray(self.s, dtype=float)
        self.tf = float(self.tf)
        if self.x.shape[0] != self.s.size or self.u.shape[0] != self.s.size:
            raise InvalidGridError("x and u need one row per grid node")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.s, self.t0, self.tf)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.s * (self.tf - self.t0)

    @property
    def N(self) -> int:
        return self.s.size

    def copy(self, **changes) -> "Trajectory":
        fields = dict(x=self.x.copy(), u=self.u.copy(), tf=self.tf, s=self.s, t0=self.t0)
        fields.update(changes)
        return Trajectory(**fields)
