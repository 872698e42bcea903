"""Whole-model robust Bellman operators as Jacobi sweeps over states."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .bisection import MEMBER_TOL
from .model import deterministic_policy

DENSE_NATURE_LIMIT = 4000


def _common(model, amb, v):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != (model.n_states,):
        raise ValueError(f"value function must have length {model.n_states}")
    return (model.state_ptr, model.row_ptr, model.next_state, model.prob, model.reward,
            model.discount, v, amb.budgets, amb.weight_matrix(model),
            amb.support_restricted)


def _dummy():
    return np.zeros(1), np.zeros((1, 1)), np.zeros(1)


def bellman(model, amb, v):
    """Robust optimality operator; returns (L v, greedy policy)."""
    args = _common(model, amb, v)
    S = model.n_states
    out = np.empty(S)
    nv, nd, nr = _dummy()
    if amb.kind == "sa":
        act = np.empty(S, np.int64)
        _kernels.sweep_sa(*args, np.zeros(1), 0, out, act, nv, nd, nr)
        return out, deterministic_policy(model, act)
    d = np.empty(model.n_rows)
    _kernels.sweep_s(*args, np.zeros(1), 0, MEMBER_TOL, out, d, nv, nd, nr)
    return out, d


def bellman_policy(model, amb, v, pi):
    """Robust policy update L_pi v."""
    args = _common(model, amb, v)
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    out = np.empty(model.n_states)
    nv, nd, nr = _dummy()
    if amb.kind == "sa":
        _kernels.sweep_sa(*args, pi, 1, out, np.empty(1, np.int64), nv, nd, nr)
    else:
        _kernels.sweep_s(*args, pi, 1, MEMBER_TOL, out, np.empty(1), nv, nd, nr)
    return out


def nature_response(model, amb, v, pi):
    """L_pi v together with nature's greedy transition matrix and rewards.

    Returns (values, P, r) where P is the (sparse or dense) state transition
    matrix under pi and nature's worst-case choice, and r the expected
    one-step reward, so that values = r + gamma P v.
    """
    args = _common(model, amb, v)
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    S = model.n_states
    out = np.empty(S)
    nat_r = np.zeros(S)
    if amb.support_restricted:
        nat_vals = np.zeros(model.nnz)
        nat_dense = np.zeros((1, 1))
    else:
        if S > DENSE_NATURE_LIMIT:
            raise MemoryError("unrestricted ambiguity sets need a dense S x S matrix")
        nat_vals = np.zeros(1)
        nat_dense = np.zeros((S, S))
    if amb.kind == "sa":
        _kernels.sweep_sa(*args, pi, 2, out, np.empty(1, np.int64), nat_vals, nat_dense, nat_r)
    else:
        _kernels.sweep_s(*args, pi, 2, MEMBER_TOL, out, np.empty(1), nat_vals, nat_dense,
                         nat_r)
    if amb.support_restricted:
        rows = np.repeat(model.row_state(), np.diff(model.row_ptr))
        P = sp.csr_matrix((nat_vals, (rows, model.next_state)), shape=(S, S))
    else:
        P = nat_dense
    return out, P, nat_r


def residual(model, amb, v):
    """Sup-norm Bellman residual ||L v - v||."""
    lv, _ = bellman(model, amb, v)
    return float(np.max(np.abs(lv - np.asarray(v))))


def sweep_counts(model, amb):
    """(homotopy calls, traced entries) of one optimality sweep."""
    return _kernels.count_pairs(model.state_ptr, model.row_ptr, model.prob,
                                amb.support_restricted, model.n_states)
