"""Optimal control problem definition and derivative plumbing.

A problem is a bundle of plain callbacks.  Every callback takes
``(x, u, t)`` (running quantities) or ``(x_f, t_f)`` (terminal quantities)
and returns a NumPy array of the documented shape.  When ``vectorized`` is
set, the callbacks also accept a leading batch axis, which the solver uses
to evaluate all grid nodes in one call.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvaluationError, ProblemDefinitionError

Callback = Callable[..., np.ndarray]

CONSTRAINT_KINDS = ("mixed", "pure_state", "pure_control", "equality")

# running callbacks (x, u, t) and terminal callbacks (x_f, t_f), with the
# trailing output shape as a function of the problem dimensions
_RUNNING = {
    "f": lambda p: (p.n,),
    "f_x": lambda p: (p.n, p.n),
    "f_u": lambda p: (p.n, p.m),
    "L": lambda p: (),
    "L_x": lambda p: (p.n,),
    "L_u": lambda p: (p.m,),
    "C": lambda p: (p.r,),
    "C_x": lambda p: (p.r, p.n),
    "C_u": lambda p: (p.r, p.m),
}
_TERMINAL = {
    "phi": lambda p: (),
    "phi_x": lambda p: (p.n,),
    "phi_t": lambda p: (),
    "phi_xx": lambda p: (p.n, p.n),
    "phi_tx": lambda p: (p.n,),
    "g": lambda p: (p.q,),
    "g_xf": lambda p: (p.q, p.n),
    "g_tf": lambda p: (p.q,),
}

# derivative name -> (base callback, argument index) for the FD fallback
_FD_SOURCES = {
    "f_x": ("f", 0),
    "f_u": ("f", 1),
    "L_x": ("L", 0),
    "L_u": ("L", 1),
    "C_x": ("C", 0),
    "C_u": ("C", 1),
    "phi_x": ("phi", 0),
    "phi_t": ("phi", 1),
    "phi_xx": ("phi_x", 0),
    "phi_tx": ("phi_x", 1),
    "g_xf": ("g", 0),
    "g_tf": ("g", 1),
}


_ROOTS = {"f_x": "f", "f_u": "f", "L_x": "L", "L_u": "L", "C_x": "C", "C_u": "C",
          "phi_x": "phi", "phi_t": "phi", "phi_xx": "phi", "phi_tx": "phi",
          "g_xf": "g", "g_tf": "g"}


def _shape(p, name):
    return {**_RUNNING, **_TERMINAL}[name](p)


def fd_derivative(callback: Callback, point: Sequence, component: int) -> np.ndarray:
    """Central-difference derivative of ``callback(*point)`` w.r.t. one argument.

    The result has shape ``out.shape + arg.shape`` (rows index outputs), so a
    scalar function of a vector gives its gradient and a vector function of a
    vector gives its Jacobian.  Each coordinate uses the step
    ``sqrt(eps) * max(1, |value|)``.
    """
    args = [np.asarray(a, dtype=float) for a in point]
    base = np.asarray(args[component], dtype=float)
    flat = base.reshape(-1)
    out0 = np.asarray(callback(*args), dtype=float)
    if not np.all(np.isfinite(out0)):
        raise EvaluationError(f"non-finite callback output at {point!r}")
    jac = np.empty(out0.shape + (flat.size,))
    root_eps = np.sqrt(np.finfo(float).eps)
    for k in range(flat.size):
        h = root_eps * max(1.0, abs(flat[k]))
        plus, minus = flat.copy(), flat.copy()
        plus[k] += h
        minus[k] -= h
        args[component] = plus.reshape(base.shape)
        f_plus = np.asarray(callback(*args), dtype=float)
        args[component] = minus.reshape(base.shape)
        f_minus = np.asarray(callback(*args), dtype=float)
        if not (np.all(np.isfinite(f_plus)) and np.all(np.isfinite(f_minus))):
            raise EvaluationError(f"non-finite callback output near {point!r}")
        jac[..., k] = (f_plus - f_minus) / (2.0 * h)
    args[component] = base
    return jac.reshape(out0.shape + base.shape)


def time_derivative(problem: "OcpProblem", name: str, *args) -> np.ndarray:
    """Central difference of a batched callback in its last (time) argument."""
    *rest, t = [np.asarray(a, dtype=float) for a in args]
    h = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(t))
    hi = problem.evaluate(name, *rest, t + h)
    lo = problem.evaluate(name, *rest, t - h)
    return (hi - lo) / (2.0 * h).reshape((-1,) + (1,) * (hi.ndim - 1))


def _zeros(shape_of):
    def fn(*args):
        return np.zeros(shape_of())

    return fn


@dataclass(frozen=True)
class OcpProblem:
    """Bolza-form optimal control problem with terminal and path constraints.

    ``tf_fixed`` is ``None`` for a free terminal time, otherwise the fixed
    value.  Callbacks for absent pieces (no running cost, no terminal cost,
    ``q == 0`` or ``r == 0``) may be left as ``None``; they evaluate to zeros.
    Missing derivatives of present callbacks are an error unless
    ``fd_fallback`` is set, in which case central differences fill them in.
    """

    n: int
    m: int
    x0: np.ndarray
    f: Callback
    f_x: Optional[Callback] = None
    f_u: Optional[Callback] = None
    q: int = 0
    r: int = 0
    L: Optional[Callback] = None
    L_x: Optional[Callback] = None
    L_u: Optional[Callback] = None
    phi: Optional[Callback] = None
    phi_x: Optional[Callback] = None
    phi_t: Optional[Callback] = None
    phi_xx: Optional[Callback] = None
    phi_tx: Optional[Callback] = None
    g: Optional[Callback] = None
    g_xf: Optional[Callback] = None
    g_tf: Optional[Callback] = None
    C: Optional[Callback] = None
    C_x: Optional[Callback] = None
    C_u: Optional[Callback] = None
    constraint_kinds: tuple = ()
    t0: float = 0.0
    tf_fixed: Optional[float] = None
    vectorized: bool = False
    fd_fallback: bool = False
    name: str = "problem"
    _filled: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if self.x0.size != self.n:
            raise ProblemDefinitionError(f"x0 has {self.x0.size} entries, expected n={self.n}")
        kinds = tuple(self.constraint_kinds) or ("mixed",) * self.r
        if len(kinds) != self.r:
            raise ProblemDefinitionError(
                f"constraint_kinds has {len(kinds)} entries, expected r={self.r}"
            )
        bad = [k for k in kinds if k not in CONSTRAINT_KINDS]
        if bad:
            raise ProblemDefinitionError(f"unknown constraint kinds {bad}")
        object.__setattr__(self, "constraint_kinds", kinds)

        absent = {"L": self.L is None, "phi": self.phi is None,
                  "g": self.q == 0, "C": self.r == 0}
        filled = {}
        for name in (*_RUNNING, *_TERMINAL):
            fn = getattr(self, name)
            root = _ROOTS.get(name, name)
            if fn is not None:
                filled[name] = fn
            elif absent.get(root, False):
                filled[name] = _zeros(lambda s=name: _shape(self, s))
            elif name == root:
                raise ProblemDefinitionError(f"callback {name!r} is required")
            elif not self.fd_fallback:
                raise ProblemDefinitionError(
                    f"derivative {name!r} missing; supply it or set fd_fallback=True"
                )
        for name in _FD_SOURCES:
            if name not in filled:
                filled[name] = self._fd_callback(filled, *_FD_SOURCES[name])
        object.__setattr__(self, "_filled", filled)

    def _fd_callback(self, filled, src, idx):
        def fn(*args):
            return fd_derivative(filled[src], args, idx)

        # FD closures work point by point only
        return _Pointwise(fn)

    # ------------------------------------------------------------------
    @property
    def free_tf(self) -> bool:
        return self.tf_fixed is None

    def callback(self, name: str) -> Callback:
        return self._filled[name]

    def evaluate(self, name: str, *args) -> np.ndarray:
        """Evaluate callback ``name`` on batched arguments.

        Running callbacks take ``x (B, n)``, ``u (B, m)``, ``t (B,)``; terminal
        ones take ``x_f (B, n)``, ``t_f (B,)``.  Returns ``(B, *shape)``.
        """
        shape = {**_RUNNING, **_TERMINAL}[name](self)
        fn = self._filled[name]
        args = [np.asarray(a, dtype=float) for a in args]
        batch = args[-1].shape[0]
        if self.vectorized and not isinstance(fn, _Pointwise):
            out = np.asarray(fn(*args), dtype=float)
            out = np.broadcast_to(out, (batch,) + shape) if out.shape != (batch,) + shape else out
        else:
            out = np.empty((batch,) + shape)
            for b in range(batch):
                out[b] = np.asarray(fn(*(a[b] for a in args)), dtype=float).reshape(shape)
        if not np.all(np.isfinite(out)):
            bad = int(np.argwhere(~np.isfinite(out.reshape(batch, -1)))[0, 0])
            raise EvaluationError(f"non-finite {name} at batch index {bad}")
        return out

    def evaluate_point(self, name: str, *args) -> np.ndarray:
        batched = [np.asarray(a, dtype=float)[None, ...] for a in args]
        return self.evaluate(name, *batched)[0]

    def replace(self, **changes) -> "OcpProblem":
        """Copy with some fields replaced (derivatives are re-resolved)."""
        changes.setdefault("_filled", {})
        return dataclasses.replace(self, **changes)

    def with_fixed_tf(self, tf: float) -> "OcpProblem":
        return self.replace(tf_fixed=float(tf))


class _Pointwise:
    """Marks a callback that cannot take batched input."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, *args):
        return self.fn(*args)


@dataclass
class SampleBox:
    """Axis-aligned box used to draw validation samples."""

    x_low: np.ndarray
    x_high: np.ndarray
    u_low: np.ndarray
    u_high: np.ndarray
    t_low: float
    t_high: float


def validate_problem(p: OcpProblem, box: SampleBox, samples: int = 10,
                     seed: int = 0) -> list[str]:
    """Report dimension and constraint-kind inconsistencies.

    Draws ``samples`` random points from ``box`` and checks every callback's
    output shape, plus that ``pure_state`` rows of ``C_u`` and ``pure_control``
    rows of ``C_x`` vanish.  An empty list means the problem is usable.
    """
    rng = np.random.default_rng(seed)
    problems: list[str] = []
    seen = set()

    def note(msg):
        if msg not in seen:
            seen.add(msg)
            problems.append(msg)

    for _ in range(samples):
        x = rng.uniform(box.x_low, box.x_high)
        u = rng.uniform(box.u_low, box.u_high)
        t = rng.uniform(box.t_low, box.t_high)
        outputs = {}
        for name, shape_of in _RUNNING.items():
            outputs[name] = _shape_check(p, name, (x, u, t), shape_of(p), note)
        for name, shape_of in _TERMINAL.items():
            _shape_check(p, name, (x, t), shape_of(p), note)
        cx, cu = outputs.get("C_x"), outputs.get("C_u")
        for i, kind in enumerate(p.constraint_kinds):
            if kind == "pure_state" and cu is not None and np.any(cu[i] != 0.0):
                note(f"constraint {i} tagged pure_state but C_u row is nonzero")
            if kind == "pure_control" and cx is not None and np.any(cx[i] != 0.0):
                note(f"constraint {i} tagged pure_control but C_x row is nonzero")
    return problems


def _shape_check(p, name, args, shape, note):
    try:
        out = np.asarray(p.callback(name)(*args), dtype=float)
    except Exception as exc:  # report-only
        note(f"{name} raised {type(exc).__name__}: {exc}")
        return None
    if out.shape != shape and not (shape == () and out.size == 1):
        note(f"{name} returned shape {out.shape}, expected {shape}")
        return None
    if not np.all(np.isfinite(out)):
        note(f"{name} returned non-finite values")
    return out.reshape(shape)
