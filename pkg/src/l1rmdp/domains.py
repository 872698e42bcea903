"""Benchmark model generators: inventory control and an aggregated cart-pole."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import ndtr

from .errors import BadCapacity, ModelError
from .model import Rmdp


@dataclass(frozen=True)
class InventoryParams:
    fixed_cost: float = 5.99
    variable_cost: float = 1.0
    holding_cost: float = 0.1
    backlog_cost: float = 0.15
    sale_price: float = 1.6
    discount: float = 0.995


def demand_pmf(capacity):
    """Normal(I/2, I/5) demand rounded to integers 0..I and renormalized."""
    mu, sigma = capacity / 2.0, capacity / 5.0
    k = np.arange(capacity + 1)
    pmf = ndtr((k + 0.5 - mu) / sigma) - ndtr((k - 0.5 - mu) / sigma)
    return pmf / pmf.sum()


def inventory_dims(capacity):
    """(backlog limit, order limit, number of states) for capacity I."""
    if capacity <= 0 or capacity % 3 != 0:
        raise BadCapacity(capacity, f"capacity must be a positive multiple of 3, got {capacity}")
    return capacity // 3, capacity // 2, capacity + capacity // 3


def make_inventory(capacity, params=InventoryParams()):
    """Inventory control with backlog.

    Stock levels run from -I/3 (full backlog) to I-1; the action is the
    order quantity, delivered before demand is realized.  Backlogged demand
    is paid for when it is served and demand beyond the backlog limit is
    lost.  State ids are stock level + I/3.
    """
    I = int(capacity)
    B, O, S = inventory_dims(I)
    pmf = demand_pmf(I)
    tail = np.cumsum(pmf[::-1])[::-1]
    levels = np.arange(-B, I)
    n_act = np.minimum(O, I - levels)
    state_ptr = np.concatenate([[0], np.cumsum(n_act)])
    # row sizes: next levels run from max(y - I, -B) up to y = x + a
    xs = np.repeat(levels, n_act)
    acts = np.arange(state_ptr[-1]) - np.repeat(state_ptr[:-1], n_act)
    ys = xs + acts
    lows = np.maximum(ys - I, -B)
    sizes = ys - lows + 1
    row_ptr = np.concatenate([[0], np.cumsum(sizes)])
    nnz = int(row_ptr[-1])
    nxt = np.empty(nnz, np.int32)
    prob = np.empty(nnz)
    rew = np.empty(nnz)
    p = params
    for r in range(len(ys)):
        x, a, y, lo = int(xs[r]), int(acts[r]), int(ys[r]), int(lows[r])
        sl = slice(row_ptr[r], row_ptr[r + 1])
        nl = np.arange(lo, y + 1)
        d = y - nl
        pr = pmf[d]
        if lo == -B and y + B <= I:
            pr[0] = tail[y + B]
        sold = np.minimum(d, max(y, 0)) + min(a, max(-x, 0))
        order = (p.fixed_cost if a > 0 else 0.0) + p.variable_cost * a
        rw = p.sale_price * sold - order - p.holding_cost * np.maximum(nl, 0) \
            - p.backlog_cost * np.maximum(-nl, 0)
        nxt[sl] = nl + B
        prob[sl] = pr
        rew[sl] = rw
    init = np.zeros(S)
    init[B] = 1.0
    return Rmdp(state_ptr, row_ptr, nxt, prob, rew, p.discount, init).validate()


@dataclass(frozen=True)
class CartpoleParams:
    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    half_length: float = 0.5
    force: float = 10.0
    tau: float = 0.02
    x_limit: float = 2.4
    angle_limit: float = 12 * np.pi / 180
    horizon: int = 200
    discount: float = 0.995


def cartpole_step(state, action, p=CartpoleParams()):
    """One Euler step of the pole-on-cart equations for a batch of states."""
    x, xd, th, thd = state.T
    f = np.where(action == 1, p.force, -p.force)
    total = p.mass_cart + p.mass_pole
    pml = p.mass_pole * p.half_length
    cos, sin = np.cos(th), np.sin(th)
    tmp = (f + pml * thd ** 2 * sin) / total
    thacc = (p.gravity * sin - cos * tmp) / \
        (p.half_length * (4.0 / 3.0 - p.mass_pole * cos ** 2 / total))
    xacc = tmp - pml * thacc * cos / total
    return np.stack([x + p.tau * xd, xd + p.tau * xacc, th + p.tau * thd,
                     thd + p.tau * thacc], axis=1)


def _terminal(state, p):
    return (np.abs(state[:, 0]) > p.x_limit) | (np.abs(state[:, 2]) > p.angle_limit)


def make_cartpole(n_states, n_samples, seed, params=CartpoleParams()):
    """Sample-aggregated cart-pole with two actions.

    Random-action trajectories are sampled from near-upright starts; n_states-1
    visited states become aggregation centers and the last state is an
    absorbing terminal state.  Each sampled state is simulated under both
    actions and transitions are counted between nearest centers.
    """
    if n_states < 2:
        raise ModelError("cart-pole needs at least 2 states")
    p = params
    rng = np.random.default_rng(seed)
    n_samples = max(int(n_samples), n_states - 1)
    samples = []
    count = 0
    while count < n_samples:
        s = rng.uniform(-0.05, 0.05, size=(1, 4))
        for _ in range(p.horizon):
            samples.append(s[0])
            count += 1
            if count >= n_samples:
                break
            s = cartpole_step(s, rng.integers(0, 2, size=1), p)
            if _terminal(s, p)[0]:
                break
    X = np.array(samples)
    scale = np.array([p.x_limit, 2.0, p.angle_limit, 2.0])
    centers = X[rng.choice(len(X), size=n_states - 1, replace=False)]
    tree = cKDTree(centers / scale)
    src = tree.query(X / scale)[1]
    term = n_states - 1
    rows_from, rows_act, rows_to, rows_rew = [], [], [], []
    for a in (0, 1):
        nxt = cartpole_step(X, np.full(len(X), a), p)
        dead = _terminal(nxt, p)
        dst = np.where(dead, term, tree.query(nxt / scale)[1])
        rows_from.append(src)
        rows_act.append(np.full(len(X), a))
        rows_to.append(dst)
        rows_rew.append(np.where(dead, 0.0, 1.0))
    src = np.concatenate(rows_from)
    act = np.concatenate(rows_act)
    dst = np.concatenate(rows_to)
    rew = np.concatenate(rows_rew)
    # counts per (s, a, s'); terminal state loops on itself with reward 0
    key = (src * 2 + act) * n_states + dst
    uniq, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
    rsum = np.bincount(inv, weights=rew)
    us, ua, ud = uniq // n_states // 2, (uniq // n_states) % 2, uniq % n_states
    tot = np.bincount(us * 2 + ua, weights=cnt, minlength=2 * n_states)
    us = np.concatenate([us, [term, term]])
    ua = np.concatenate([ua, [0, 1]])
    ud = np.concatenate([ud, [term, term]])
    pr = np.concatenate([cnt / tot[(us * 2 + ua)[:-2]], [1.0, 1.0]])
    rw = np.concatenate([rsum / cnt, [0.0, 0.0]])
    order = np.lexsort((ud, ua, us))
    us, ua, ud, pr, rw = us[order], ua[order], ud[order], pr[order], rw[order]
    row_key = us * 2 + ua
    row_start = np.flatnonzero(np.r_[True, row_key[1:] != row_key[:-1]])
    row_ptr = np.append(row_start, len(us))
    state_ptr = np.arange(0, 2 * n_states + 1, 2)
    if len(row_start) != 2 * n_states:
        raise ModelError("every state must have samples under both actions")
    init = np.zeros(n_states)
    init[tree.query(np.zeros((1, 4)))[1][0]] = 1.0
    return Rmdp(state_ptr, row_ptr, ud, pr, rw, p.discount, init).validate()


def value_based_weights(v, floor=1e-6):
    """Weights proportional to |v - mean(v)|, scaled into (0, 1]."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ModelError("value function must be finite")
    dev = np.abs(v - v.mean())
    top = dev.max()
    if top <= 0:
        return np.ones_like(v)
    return np.maximum(dev / top, floor)
