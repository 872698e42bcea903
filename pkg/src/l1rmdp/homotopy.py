"""Worst-case response of a weighted-L1 ball intersected with the simplex.

For a single (state, action) pair the response

    q(xi) = min { p^T z : p in simplex, ||p - pbar||_{1,w} <= xi }

is piecewise affine, convex and nonincreasing in the budget xi.  The homotopy
traces it by moving probability mass between one donor and one receiver at a
time, in order of steepest improvement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateSupport, ModelError, NegativeBudget

C1 = 1
C2 = 2


@dataclass(frozen=True)
class HomotopyInput:
    z: np.ndarray
    pbar: np.ndarray
    w: np.ndarray
    support: np.ndarray = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        pbar = np.asarray(self.pbar, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim == 0:
            w = np.full_like(z, float(w))
        if not (z.shape == pbar.shape == w.shape) or z.ndim != 1:
            raise ModelError("z, pbar and w must be vectors of equal length")
        sup = np.ones(z.shape, bool) if self.support is None else \
            np.asarray(self.support, dtype=bool)
        if not sup.any():
            raise DegenerateSupport()
        if np.any(pbar[~sup] != 0):
            raise ModelError("nominal distribution has mass outside the support")
        if np.any(w[sup] <= 0):
            raise ModelError("weights must be positive on the support")
        if not np.all(np.isfinite(z[sup])):
            raise ModelError("objective must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "pbar", pbar)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "support", sup)

    @classmethod
    def restricted(cls, z, pbar, w):
        """Input restricted to the support of pbar."""
        pbar = np.asarray(pbar, dtype=np.float64)
        return cls(z, pbar, w, pbar > 0)


@dataclass(frozen=True)
class ResponseFunction:
    """Breakpoints (xi, q) and segment descriptors of a traced response.

    Indices in donor/receiver refer to the original (uncompacted) vector.
    ``complete`` is False when tracing stopped at a target budget; the
    function is then only known on [0, xi[-1]].
    """
    xi: np.ndarray
    q: np.ndarray
    donor: np.ndarray
    receiver: np.ndarray
    kind: np.ndarray
    mass: np.ndarray
    slope: np.ndarray
    pbar: np.ndarray
    index: np.ndarray
    n: int
    complete: bool
    n_full: int

    @property
    def n_segments(self):
        return self.slope.shape[0]

    @property
    def rate(self):
        """Mass moved per unit of budget on each segment."""
        return self.mass / np.diff(self.xi)

    @property
    def saturation(self):
        return self.xi[-1] if self.complete else np.inf

    def pairs(self):
        """(donor, receiver) index pairs along the trace."""
        return [(int(d), int(r)) for d, r in zip(self.donor, self.receiver)]

    def __call__(self, xi):
        return eval_response(self, xi)[0]


def _compact(inp):
    idx = np.flatnonzero(inp.support)
    return idx, inp.z[idx], inp.pbar[idx], inp.w[idx]


def homotopy_response(inp, limit=np.inf, prune=True):
    """Trace the response up to budget ``limit`` (default: to saturation)."""
    if not isinstance(inp, HomotopyInput):
        raise TypeError("expected a HomotopyInput")
    if limit < 0:
        raise NegativeBudget(limit)
    idx, z, pbar, w = _compact(inp)
    xi, q, sd, sr, sk, mass, slope, _, complete, n_full = _kernels.trace(
        z, pbar, w, float(limit), prune)
    return ResponseFunction(xi, q, idx[sd], idx[sr], sk, mass, slope, pbar, idx,
                            inp.z.shape[0], bool(complete), int(n_full))


def nondominated_receivers(z, w, support=None):
    """Receivers that are not dominated in (z, w); sorted by ascending z."""
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    idx = np.arange(z.shape[0]) if support is None else \
        np.flatnonzero(np.asarray(support, dtype=bool))
    if idx.size == 0:
        raise DegenerateSupport()
    return idx[_kernels.nondominated(z[idx], w[idx])]


def eval_response(f, xi):
    """Value q(xi) and a minimizing distribution p (full length)."""
    if xi < 0:
        raise NegativeBudget(xi)
    if not f.complete and xi > f.xi[-1]:
        raise ValueError(f"response was traced only up to {f.xi[-1]}")
    q = _kernels.eval_q(f.xi, f.q, float(xi))
    local = {int(i): k for k, i in enumerate(f.index)}
    sd = np.array([local[int(i)] for i in f.donor], dtype=np.int64)
    sr = np.array([local[int(i)] for i in f.receiver], dtype=np.int64)
    pc = _kernels.replay(f.pbar, f.xi, sd, sr, f.kind, f.mass, f.n_full, float(xi))
    p = np.zeros(f.n)
    p[f.index] = pc
    return float(q), p


def inverse_response(f, u):
    """Smallest budget with q(xi) <= u; 0 above q(0) and inf below saturation."""
    if not f.complete and u < f.q[-1]:
        raise ValueError("inverse below the traced range of an incomplete response")
    return float(_kernels.inverse_q(f.xi, f.q, float(u)))


def subgradient(f, xi):
    """Interval [left, right] of the subdifferential of q at xi."""
    if xi < 0:
        raise NegativeBudget(xi)
    T = f.n_segments
    xs = f.xi
    right_of = lambda t: f.slope[t] if t < T else 0.0
    for t in range(T + 1):
        if abs(xi - xs[t]) <= _kernels.BREAK_RTOL * max(1.0, xs[t]):
            left = -np.inf if t == 0 else f.slope[t - 1]
            return (float(left), float(right_of(t)))
    if xi > xs[-1]:
        return (0.0, 0.0)
    k = int(np.searchsorted(xs, xi, side="right") - 1)
    return (float(f.slope[k]), float(f.slope[k]))


def worst_case(z, pbar, w, xi, support=None):
    """Single-budget convenience wrapper using an early-terminated trace."""
    inp = HomotopyInput(z, pbar, w, support)
    f = homotopy_response(inp, limit=xi)
    return eval_response(f, min(xi, f.xi[-1]) if f.complete else xi)


# ---------------------------------------------------------------------------
# per-state operator


def row_input(model, amb, v, r):
    """HomotopyInput of row r with z = r + gamma v."""
    W = amb.weight_matrix(model)
    ent, z, pb, w = _kernels.gather(r, model.row_ptr, model.next_state, model.prob,
                                    model.reward, model.discount,
                                    np.ascontiguousarray(v, dtype=np.float64), W,
                                    amb.support_restricted)
    S = model.n_states
    if amb.support_restricted:
        cols = model.next_state[ent]
        zf = np.zeros(S)
        pf = np.zeros(S)
        wf = np.ones(S)
        zf[cols], pf[cols], wf[cols] = z, pb, w
        sup = np.zeros(S, bool)
        sup[cols] = True
        return HomotopyInput(zf, pf, wf, sup)
    return HomotopyInput(z, pb, w)


def sa_bellman(model, amb, v, s):
    """(value, greedy action, worst p per action) of the sa-rectangular operator at s."""
    if amb.kind != "sa":
        raise ModelError("sa_bellman needs an sa-rectangular configuration")
    best, best_a, ps = -np.inf, 0, []
    for a in range(model.n_actions[s]):
        r = model.state_ptr[s] + a
        f = homotopy_response(row_input(model, amb, v, r), limit=amb.budgets[r])
        val, p = eval_response(f, min(amb.budgets[r], f.xi[-1]))
        ps.append(p)
        if val > best:
            best, best_a = val, a
    return best, best_a, ps
