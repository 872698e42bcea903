"""Model and ambiguity-set containers, CSV ingestion and the nominal operator.

Transitions are stored CSR-style: rows are (state, action) pairs laid out
state by state, ``state_ptr`` maps a state to its rows and ``row_ptr`` maps a
row to its entries in ``next_state``/``prob``/``reward``.  Policies are
row-aligned probability vectors of length ``n_rows``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (BadDiscount, MissingColumn, ModelError, NegativeBudget,
                     NegativeProbability, NonStochasticRow)

STOCHASTIC_TOL = 1e-9
TRANSITION_COLUMNS = ("idstatefrom", "idaction", "idstateto", "probability", "reward")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Rmdp:
    state_ptr: np.ndarray
    row_ptr: np.ndarray
    next_state: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    discount: float
    initial: np.ndarray
    state_ids: np.ndarray = None
    action_ids: np.ndarray = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "state_ptr", _frozen(self.state_ptr, np.int64))
        set_(self, "row_ptr", _frozen(self.row_ptr, np.int64))
        set_(self, "next_state", _frozen(self.next_state, np.int32))
        set_(self, "prob", _frozen(self.prob, np.float64))
        set_(self, "reward", _frozen(self.reward, np.float64))
        set_(self, "initial", _frozen(self.initial, np.float64))
        S = self.state_ptr.shape[0] - 1
        if self.state_ids is None:
            set_(self, "state_ids", np.arange(S))
        if self.action_ids is None:
            set_(self, "action_ids", self.row_index_in_state())
        set_(self, "state_ids", _frozen(self.state_ids, np.int64))
        set_(self, "action_ids", _frozen(self.action_ids, np.int64))
        set_(self, "discount", float(self.discount))

    @property
    def n_states(self):
        return self.state_ptr.shape[0] - 1

    @property
    def n_rows(self):
        return self.row_ptr.shape[0] - 1

    @property
    def n_actions(self):
        return np.diff(self.state_ptr)

    @property
    def nnz(self):
        return self.prob.shape[0]

    def row_state(self):
        return np.repeat(np.arange(self.n_states), self.n_actions)

    def row_index_in_state(self):
        return np.arange(self.n_rows) - np.repeat(self.state_ptr[:-1], self.n_actions)

    def row(self, s, a):
        r = self.state_ptr[s] + a
        lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
        return self.next_state[lo:hi], self.prob[lo:hi], self.reward[lo:hi]

    def validate(self, tol=1e-12):
        S = self.n_states
        if not 0.0 < self.discount < 1.0:
            raise BadDiscount(self.discount)
        if np.any(self.n_actions < 1):
            s = int(np.flatnonzero(self.n_actions < 1)[0])
            raise ModelError(f"state {self.state_ids[s]} has no actions")
        if np.any(np.diff(self.row_ptr) < 1):
            raise ModelError("empty transition row")
        if self.nnz and (self.next_state.min() < 0 or self.next_state.max() >= S):
            raise ModelError("next-state index out of range")
        if np.any(self.prob < 0):
            e = int(np.flatnonzero(self.prob < 0)[0])
            r = int(np.searchsorted(self.row_ptr, e, side="right") - 1)
            s = int(np.searchsorted(self.state_ptr, r, side="right") - 1)
            raise NegativeProbability(s, r - self.state_ptr[s], int(self.next_state[e]),
                                      float(self.prob[e]))
        sums = np.add.reduceat(self.prob, self.row_ptr[:-1])
        bad = np.abs(sums - 1.0) > tol
        if np.any(bad):
            r = int(np.flatnonzero(bad)[0])
            s = int(np.searchsorted(self.state_ptr, r, side="right") - 1)
            raise NonStochasticRow(s, r - self.state_ptr[s], float(sums[r] - 1.0))
        if not np.all(np.isfinite(self.reward)):
            raise ModelError("non-finite reward")
        if self.initial.shape != (S,) or np.any(self.initial < 0) or \
                abs(self.initial.sum() - 1.0) > 1e-9:
            raise ModelError("initial distribution must lie on the simplex")
        return self


@dataclass(frozen=True, eq=False)
class AmbiguityConfig:
    """Weighted-L1 ambiguity sets.

    kind "sa": budgets has one entry per row; kind "s": one entry per state.
    weights is None (all ones), a vector over next states shared by all rows,
    or an (n_rows, n_states) array.
    """
    kind: str
    budgets: np.ndarray
    weights: np.ndarray = None
    support_restricted: bool = True

    def __post_init__(self):
        if self.kind not in ("sa", "s"):
            raise ModelError(f"unknown rectangularity '{self.kind}'")
        b = _frozen(np.atleast_1d(self.budgets), np.float64)
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise NegativeBudget(float(b[np.argmin(b)]) if b.size else -1.0)
        object.__setattr__(self, "budgets", b)
        if self.weights is not None:
            w = _frozen(self.weights, np.float64)
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ModelError("weights must be strictly positive and finite")
            object.__setattr__(self, "weights", w)
        object.__setattr__(self, "support_restricted", bool(self.support_restricted))

    @classmethod
    def uniform(cls, model, kind, budget, weights=None, support_restricted=True):
        n = model.n_rows if kind == "sa" else model.n_states
        return cls(kind, np.full(n, float(budget)), weights, support_restricted)

    def check(self, model):
        n = model.n_rows if self.kind == "sa" else model.n_states
        if self.budgets.shape != (n,):
            raise ModelError(f"expected {n} budgets for kind '{self.kind}', "
                             f"got {self.budgets.shape[0]}")
        if self.weights is not None:
            S = model.n_states
            if self.weights.shape not in ((S,), (model.n_rows, S)):
                raise ModelError(f"weights shape {self.weights.shape} does not fit the model")
        return self

    def weight_matrix(self, model):
        """2-D weights as consumed by the kernels (a single row is broadcast)."""
        if self.weights is None:
            return np.ones((1, model.n_states))
        return np.ascontiguousarray(np.atleast_2d(self.weights))

    def scaled(self, factor):
        w = self.weights
        return AmbiguityConfig(self.kind, self.budgets * factor,
                               None if w is None else w * factor, self.support_restricted)


def model_from_triplets(states, actions, next_states, probs, rewards, discount,
                        initial=None, tol=STOCHASTIC_TOL):
    """Build a validated model from raw (possibly sparse-id, duplicated) rows."""
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    next_states = np.asarray(next_states, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if not 0.0 < float(discount) < 1.0:
        raise BadDiscount(discount)
    if np.any(probs < 0):
        k = int(np.flatnonzero(probs < 0)[0])
        raise NegativeProbability(int(states[k]), int(actions[k]), int(next_states[k]),
                                  float(probs[k]))
    ids = np.unique(np.concatenate([states, next_states]))
    s = np.searchsorted(ids, states)
    s2 = np.searchsorted(ids, next_states)
    order = np.lexsort((s2, actions, s))
    s, a, s2, p, rw = s[order], actions[order], s2[order], probs[order], rewards[order]
    # merge duplicate (s, a, s') entries; rewards become probability-weighted
    key_new = np.ones(len(s), dtype=bool)
    key_new[1:] = (s[1:] != s[:-1]) | (a[1:] != a[:-1]) | (s2[1:] != s2[:-1])
    start = np.flatnonzero(key_new)
    p_sum = np.add.reduceat(p, start) if len(start) else p
    pr_sum = np.add.reduceat(p * rw, start) if len(start) else rw
    cnt = np.diff(np.append(start, len(s)))
    r_mean = np.add.reduceat(rw, start) / cnt if len(start) else rw
    with np.errstate(invalid="ignore", divide="ignore"):
        rew = np.where(p_sum > 0, pr_sum / np.where(p_sum > 0, p_sum, 1.0), r_mean)
    s, a, s2 = s[start], a[start], s2[start]

    row_new = np.ones(len(s), dtype=bool)
    row_new[1:] = (s[1:] != s[:-1]) | (a[1:] != a[:-1])
    row_start = np.flatnonzero(row_new)
    row_ptr = np.append(row_start, len(s))
    row_s = s[row_start]
    S = len(ids)
    n_act = np.bincount(row_s, minlength=S)
    if np.any(n_act == 0):
        raise ModelError(f"state {ids[np.flatnonzero(n_act == 0)[0]]} has no actions")
    state_ptr = np.concatenate([[0], np.cumsum(n_act)])
    sums = np.add.reduceat(p_sum, row_start)
    resid = sums - 1.0
    bad = np.abs(resid) >= tol
    if np.any(bad):
        r = int(np.flatnonzero(bad)[0])
        raise NonStochasticRow(int(ids[row_s[r]]), int(a[row_start[r]]), float(resid[r]))
    # rescale only rows that are off by more than the model invariant allows,
    # so that writing and reading back a model is bit-exact
    scale = np.where(np.abs(resid) > 1e-12, sums, 1.0)
    p_sum = p_sum / np.repeat(scale, np.diff(row_ptr))
    if initial is None:
        init = np.full(S, 1.0 / S)
    else:
        init = np.zeros(S)
        for sid, pv in initial.items():
            init[np.searchsorted(ids, sid)] += pv
        init = init / init.sum()
    m = Rmdp(state_ptr, row_ptr, s2, p_sum, rew, float(discount), init,
             state_ids=ids, action_ids=a[row_start])
    return m.validate()


# ---------------------------------------------------------------------------
# file formats


def _read_csv_columns(path, required):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(required[0], path)
        for c in required:
            if c not in header:
                raise MissingColumn(c, path)
        has_rows = next(reader, None) is not None
    if not has_rows:
        return {c: np.zeros(0) for c in header}
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    return {c: data[:, i] for i, c in enumerate(header)}


def _as_ids(x):
    ids = np.asarray(x)
    if np.any(ids != np.round(ids)):
        raise ModelError("ids must be integers")
    return ids.astype(np.int64)


def read_config(path):
    cfg = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ModelError(f"{path}:{ln}: expected key=value")
            k, v = line.split("=", 1)
            cfg[k.strip()] = v.strip()
    known = {"discount", "rectangularity", "budget_default", "budgets_csv", "weights_csv",
             "support_restricted", "initial_csv"}
    unknown = set(cfg) - known
    if unknown:
        raise ModelError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def load_model(transitions_path, config_path):
    """Load a model and its ambiguity configuration."""
    cfg = read_config(config_path)
    base = os.path.dirname(os.path.abspath(config_path))

    def rel(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    if "discount" not in cfg:
        raise ModelError("config is missing 'discount'")
    try:
        discount = float(cfg["discount"])
    except ValueError:
        raise BadDiscount(cfg["discount"])
    cols = _read_csv_columns(transitions_path, TRANSITION_COLUMNS)
    initial = None
    if "initial_csv" in cfg:
        ic = _read_csv_columns(rel(cfg["initial_csv"]), ("idstate", "probability"))
        initial = {}
        for sid, pv in zip(_as_ids(ic["idstate"]), ic["probability"]):
            initial[int(sid)] = initial.get(int(sid), 0.0) + float(pv)
    model = model_from_triplets(_as_ids(cols["idstatefrom"]), _as_ids(cols["idaction"]),
                                _as_ids(cols["idstateto"]), cols["probability"],
                                cols["reward"], discount, initial)
    kind = cfg.get("rectangularity", "sa").lower()
    if kind not in ("sa", "s"):
        raise ModelError(f"rectangularity must be 'sa' or 's', got '{kind}'")
    default = float(cfg.get("budget_default", "0"))
    n = model.n_rows if kind == "sa" else model.n_states
    budgets = np.full(n, default)
    if "budgets_csv" in cfg:
        path = rel(cfg["budgets_csv"])
        need = ("idstate", "idaction", "budget") if kind == "sa" else ("idstate", "budget")
        bc = _read_csv_columns(path, need)
        for k in range(len(bc["budget"])):
            s = _state_index(model, int(bc["idstate"][k]))
            if kind == "sa":
                budgets[_row_index(model, s, int(bc["idaction"][k]))] = bc["budget"][k]
            else:
                budgets[s] = bc["budget"][k]
    weights = None
    if "weights_csv" in cfg:
        wc = _read_csv_columns(rel(cfg["weights_csv"]),
                               ("idstate", "idaction", "idstateto", "weight"))
        weights = np.ones((model.n_rows, model.n_states))
        for k in range(len(wc["weight"])):
            s = _state_index(model, int(wc["idstate"][k]))
            r = _row_index(model, s, int(wc["idaction"][k]))
            weights[r, _state_index(model, int(wc["idstateto"][k]))] = wc["weight"][k]
    restricted = cfg.get("support_restricted", "1").strip() not in ("0", "false", "False")
    amb = AmbiguityConfig(kind, budgets, weights, restricted).check(model)
    return model, amb


def _state_index(model, sid):
    k = int(np.searchsorted(model.state_ids, sid))
    if k >= model.n_states or model.state_ids[k] != sid:
        raise ModelError(f"unknown state id {sid}")
    return k


def _row_index(model, s, aid):
    lo, hi = model.state_ptr[s], model.state_ptr[s + 1]
    hits = np.flatnonzero(model.action_ids[lo:hi] == aid)
    if hits.size == 0:
        raise ModelError(f"unknown action id {aid} in state {model.state_ids[s]}")
    return int(lo + hits[0])


def save_model(model, amb, transitions_path, config_path):
    """Write a model in the CSV + config format read by load_model."""
    rs = model.row_state()
    cnt = np.diff(model.row_ptr)
    sfrom = np.repeat(model.state_ids[rs], cnt)
    aid = np.repeat(model.action_ids, cnt)
    sto = model.state_ids[model.next_state]
    with open(transitions_path, "w") as fh:
        fh.write(",".join(TRANSITION_COLUMNS) + "\n")
        for k in range(model.nnz):
            fh.write(f"{sfrom[k]},{aid[k]},{sto[k]},{float(model.prob[k])!r},{float(model.reward[k])!r}\n")
    base = os.path.splitext(config_path)[0]
    lines = [f"discount={float(model.discount)!r}", f"rectangularity={amb.kind}",
             f"support_restricted={int(amb.support_restricted)}"]
    b = amb.budgets
    if b.size and np.all(b == b[0]):
        lines.append(f"budget_default={float(b[0])!r}")
    else:
        lines.append("budget_default=0")
        bpath = base + "_budgets.csv"
        with open(bpath, "w") as fh:
            if amb.kind == "sa":
                fh.write("idstate,idaction,budget\n")
                for r in range(model.n_rows):
                    fh.write(f"{model.state_ids[rs[r]]},{model.action_ids[r]},{float(b[r])!r}\n")
            else:
                fh.write("idstate,budget\n")
                for s in range(model.n_states):
                    fh.write(f"{model.state_ids[s]},{float(b[s])!r}\n")
        lines.append(f"budgets_csv={os.path.basename(bpath)}")
    if amb.weights is not None:
        W = amb.weight_matrix(model)
        wpath = base + "_weights.csv"
        with open(wpath, "w") as fh:
            fh.write("idstate,idaction,idstateto,weight\n")
            for r in range(model.n_rows):
                wr = W[r] if W.shape[0] > 1 else W[0]
                for s2 in range(model.n_states):
                    fh.write(f"{model.state_ids[rs[r]]},{model.action_ids[r]},"
                             f"{model.state_ids[s2]},{float(wr[s2])!r}\n")
        lines.append(f"weights_csv={os.path.basename(wpath)}")
    if not np.allclose(model.initial, 1.0 / model.n_states, rtol=0, atol=0):
        ipath = base + "_initial.csv"
        with open(ipath, "w") as fh:
            fh.write("idstate,probability\n")
            for s in range(model.n_states):
                fh.write(f"{model.state_ids[s]},{float(model.initial[s])!r}\n")
        lines.append(f"initial_csv={os.path.basename(ipath)}")
    with open(config_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# policies and the nominal operator


def deterministic_policy(model, actions):
    """Row-aligned policy putting all mass on actions[s] (local index)."""
    pi = np.zeros(model.n_rows)
    pi[model.state_ptr[:-1] + np.asarray(actions, dtype=np.int64)] = 1.0
    return pi


def uniform_policy(model):
    return np.repeat(1.0 / model.n_actions, model.n_actions)


def check_policy(model, pi, tol=1e-12):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (model.n_rows,):
        raise ModelError(f"policy must have {model.n_rows} entries")
    if np.any(pi < 0):
        raise ModelError("policy has negative entries")
    sums = np.add.reduceat(pi, model.state_ptr[:-1])
    if np.any(np.abs(sums - 1.0) > tol):
        raise ModelError("policy rows must sum to 1")
    return pi


def policy_rows(model, pi):
    """Per-state list of action distributions."""
    return [pi[model.state_ptr[s]:model.state_ptr[s + 1]] for s in range(model.n_states)]


def nominal_bellman(model, v):
    """Nominal operator max_a pbar^T (r + gamma v) with its greedy policy."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty(model.n_states)
    act = np.empty(model.n_states, np.int64)
    _kernels.sweep_nominal(model.state_ptr, model.row_ptr, model.next_state, model.prob,
                           model.reward, model.discount, v, out, act)
    return out, deterministic_policy(model, act)


def nominal_policy_matrix(model, pi):
    """Dense P(pi) and r(pi) of the nominal Markov reward process."""
    S = model.n_states
    P = np.zeros((S, S))
    rvec = np.zeros(S)
    rs = model.row_state()
    cnt = np.diff(model.row_ptr)
    rows = np.repeat(rs, cnt)
    wts = np.repeat(pi, cnt) * model.prob
    np.add.at(P, (rows, model.next_state), wts)
    np.add.at(rvec, rows, wts * model.reward)
    return P, rvec
