"""s-rectangular operators: bisection on the shared budget and greedy recovery.

With per-action responses q_a, the s-rectangular Bellman value is

    u* = min { u : sum_a q_a^{-1}(u) <= kappa }

because each q_a is nonincreasing and convex.  The exact variant bisects over
the merged breakpoint values and interpolates on the final bracket.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BadBracket, ModelError, NegativeBudget
from .homotopy import eval_response, homotopy_response, row_input

MEMBER_TOL = 1e-9


@dataclass(frozen=True)
class SBellmanResult:
    u_star: float
    d_star: np.ndarray
    xi_star: np.ndarray
    worst_p: list
    lam: float
    alpha: np.ndarray
    active: np.ndarray
    case: int


def _pack(responses):
    for f in responses:
        if not f.complete:
            raise ValueError("bisection needs fully traced responses")
    if not responses:
        raise ModelError("at least one action is required")
    boff = np.zeros(len(responses) + 1, np.int64)
    boff[1:] = np.cumsum([f.xi.shape[0] for f in responses])
    xi_all = np.concatenate([f.xi for f in responses])
    q_all = np.concatenate([f.q for f in responses])
    slope_all = np.concatenate([f.slope for f in responses])
    return xi_all, q_all, boff, slope_all


def _check_kappa(kappa):
    if kappa < 0:
        raise NegativeBudget(kappa)
    return float(kappa)


def default_bracket(responses, kappa):
    u_max = max(f.q[0] for f in responses)
    u_min = max(eval_response(f, kappa)[0] for f in responses)
    return u_min, u_max


def bisect_eps(responses, kappa, eps, u_min=None, u_max=None):
    """Interval bisection on u to within eps of the optimal value."""
    kappa = _check_kappa(kappa)
    lo, hi = default_bracket(responses, kappa)
    u_min = lo if u_min is None else float(u_min)
    u_max = hi if u_max is None else float(u_max)
    if u_max < u_min:
        raise BadBracket(u_min, u_max)
    xi_all, q_all, boff, _ = _pack(responses)
    return float(_kernels.bisect_eps_flat(xi_all, q_all, boff, kappa, float(eps), u_min, u_max))


def bisect_exact(responses, kappa):
    """Exact optimal value via bisection over merged breakpoint values."""
    kappa = _check_kappa(kappa)
    xi_all, q_all, boff, _ = _pack(responses)
    return float(_kernels.bisect_exact_flat(xi_all, q_all, boff, kappa))


def recover_greedy(responses, u_star, kappa, tol=MEMBER_TOL):
    """Greedy randomized action distribution and nature's budgets for u*."""
    kappa = _check_kappa(kappa)
    xi_all, q_all, boff, slope_all = _pack(responses)
    tol = max(tol, 4 * np.finfo(float).eps * abs(u_star))
    d, xs, in_c, case, lam = _kernels.recover_flat(xi_all, q_all, boff, slope_all, kappa,
                                                   float(u_star), tol)
    assert in_c.any(), "active action set is empty"
    worst = [eval_response(f, x)[1] for f, x in zip(responses, xs)]
    alpha = np.where(in_c, 0.0, lam)
    return SBellmanResult(float(u_star), d, xs, worst, float(lam), alpha, in_c, int(case))


def policy_update_value(responses, pi, kappa):
    """min sum_a pi_a q_a(xi_a) subject to sum_a xi_a <= kappa.

    Solved exactly through its Lagrangian dual; returns (value, budgets).
    """
    kappa = _check_kappa(kappa)
    xi_all, q_all, boff, slope_all = _pack(responses)
    val, alloc = _kernels.policy_update_flat(xi_all, q_all, boff, slope_all,
                                             np.asarray(pi, dtype=np.float64), kappa)
    return float(val), alloc


def state_responses(model, amb, v, s):
    return [homotopy_response(row_input(model, amb, v, model.state_ptr[s] + a))
            for a in range(model.n_actions[s])]


def s_bellman(model, amb, v, s):
    """s-rectangular optimality operator at state s with its saddle point."""
    if amb.kind != "s":
        raise ModelError("s_bellman needs an s-rectangular configuration")
    fs = state_responses(model, amb, v, s)
    u = bisect_exact(fs, amb.budgets[s])
    return recover_greedy(fs, u, amb.budgets[s])


def s_bellman_policy(model, amb, v, pi_s, s):
    """s-rectangular policy update (L_pi v)_s for the action distribution pi_s."""
    if amb.kind != "s":
        raise ModelError("s_bellman_policy needs an s-rectangular configuration")
    return policy_update_value(state_responses(model, amb, v, s), pi_s, amb.budgets[s])[0]


def sa_bellman_policy(model, amb, v, pi_s, s):
    """sa-rectangular policy update: sum_a pi_a q_a(kappa_a)."""
    if amb.kind != "sa":
        raise ModelError("sa_bellman_policy needs an sa-rectangular configuration")
    total = 0.0
    for a, pa in enumerate(pi_s):
        if pa <= 0:
            continue
        r = model.state_ptr[s] + a
        f = homotopy_response(row_input(model, amb, v, r), limit=amb.budgets[r])
        total += pa * eval_response(f, min(amb.budgets[r], f.xi[-1]))[0]
    return total
