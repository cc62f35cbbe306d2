"""Dormand-Prince 5(4) embedded Runge-Kutta stepper with PI step control.

Stepping is explicit (``step()`` advances one accepted step) so the caller
can inspect or modify the state between steps.  The seventh stage is the
derivative at the new point (FSAL), so every accepted step leaves a fresh
``f`` for the next one.
"""

from __future__ import annotations

import numpy as np

from .errors import StiffnessError

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100,
               1 / 40])
E = B5 - B4

SAFETY = 0.9
BETA = 0.04  # PI controller memory (Hairer's DOPRI5 default)
ALPHA = 0.2 - 0.75 * BETA
FAC_MIN, FAC_MAX = 0.2, 10.0


class DormandPrince45:
    """Adaptive explicit integrator for ``y' = fun(t, y)``.

    ``retry_on`` lists exception types that, when raised by a trial stage,
    reject the step and retry with a quarter of the step size.  ``guard``
    is called with each error-accepted candidate ``(t, y)`` and may return a
    shrink factor in ``(0, 1)`` to reject it anyway; ``None`` accepts.  At
    the time of the call the last ``fun`` evaluation was at the candidate.
    """

    def __init__(self, fun, t0, y0, t_end, rtol=1e-3, atol=1e-6, h0=None, h_max=None,
                 retry_on=(), guard=None, f0=None):
        self.fun = fun
        self.retry_on = tuple(retry_on)
        self.guard = guard
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=float).copy()
        self.t_end = float(t_end)
        self.rtol, self.atol = rtol, atol
        self.h_max = h_max if h_max is not None else abs(self.t_end - self.t)
        self.f = np.asarray(fun(self.t, self.y) if f0 is None else f0, dtype=float)
        self.nfev = 1
        self.h = h0 if h0 is not None else self._initial_step()
        self.err_prev = 1e-4
        self.accepted = 0
        self.rejected = 0
        self.last_failure = None

    def _norm(self, v, scale):
        return float(np.sqrt(np.mean((v / scale) ** 2)))

    def _initial_step(self):
        scale = self.atol + self.rtol * np.abs(self.y)
        d0, d1 = self._norm(self.y, scale), self._norm(self.f, scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, self.h_max)
        y1 = self.y + h0 * self.f
        f1 = self.fun(self.t + h0, y1)
        self.nfev += 1
        d2 = self._norm(f1 - self.f, scale) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        return min(100 * h0, h1, self.h_max)

    def reset(self, y, f=None):
        """Replace the current state (e.g. after an external correction)."""
        self.y = np.asarray(y, dtype=float).copy()
        if f is None:
            f = self.fun(self.t, self.y)
            self.nfev += 1
        self.f = np.asarray(f, dtype=float)
        self.err_prev = 1e-4

    @property
    def done(self) -> bool:
        return self.t >= self.t_end

    def step(self):
        """Take one accepted step; returns the new ``(t, y)``."""
        while True:
            h = min(self.h, self.h_max, self.t_end - self.t)
            if h <= 16 * np.finfo(float).eps * max(1.0, abs(self.t)):
                cause = f"; last failure: {self.last_failure}" if self.last_failure else ""
                raise StiffnessError(
                    f"step size underflow at tau={self.t:.6g} (h={h:.3e}){cause}")
            k = np.empty((7, self.y.size))
            k[0] = self.f
            try:
                for s in range(1, 7):
                    ys = self.y + h * (np.asarray(A[s]) @ k[:s])
                    k[s] = self.fun(self.t + C[s] * h, ys)
                    self.nfev += 1
            except self.retry_on as exc:
                # a trial stage left the region where the rhs is defined
                self.last_failure = exc
                self.h = 0.25 * h
                self.rejected += 1
                continue
            y_new = ys  # stage 7 is evaluated at the 5th-order solution
            err_vec = h * (E @ k)
            scale = self.atol + self.rtol * np.maximum(np.abs(self.y), np.abs(y_new))
            err = self._norm(err_vec, scale)
            if not np.isfinite(err):
                self.h = 0.25 * h
                self.rejected += 1
                continue
            if err <= 1.0 and self.guard is not None:
                shrink = self.guard(self.t + h, y_new)
                if shrink is not None:
                    self.h = h * shrink
                    self.rejected += 1
                    continue
            if err <= 1.0:
                fac = SAFETY * err ** -ALPHA * self.err_prev ** BETA if err > 0 else FAC_MAX
                fac = min(FAC_MAX, max(FAC_MIN, fac))
                self.err_prev = max(err, 1e-4)
                self.t = self.t + h if h < self.t_end - self.t else self.t_end
                self.y = y_new
                self.f = k[6]
                self.h = h * fac
                self.accepted += 1
                return self.t, self.y
            fac = max(FAC_MIN, SAFETY * err ** -ALPHA)
            self.h = h * fac
            self.rejected += 1
