"""Randomized differential checks of the fast operators against the LP oracle.

Three suites are run:
  response  homotopy trace vs. the worst-case LP on a budget grid
  s_value   exact bisection (and greedy recovery) vs. the s-rectangular dual LP
  policy    Lagrangian policy update vs. the fixed-policy primal LP

Every instance carries its data explicitly so a failure can be written to
JSON and replayed bit-for-bit without the random generator.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .bisection import bisect_eps, bisect_exact, policy_update_value, recover_greedy
from .homotopy import HomotopyInput, eval_response, homotopy_response
from .oracle import lp_policy_value, lp_s_value, lp_worst_case

SUITES = ("response", "s_value", "policy")
N_GRID = 20
XI_MAX = 2.0


@dataclass
class Instance:
    suite: str
    seed: list
    z: list           # one vector per action (a single action for "response")
    pbar: list
    w: list
    kappa: float = 0.0
    pi: list = None

    def arrays(self):
        return [(np.asarray(z, float), np.asarray(p, float), np.asarray(w, float))
                for z, p, w in zip(self.z, self.pbar, self.w)]

    def to_json(self):
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class CheckOutcome:
    instance: Instance
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures


# ---------------------------------------------------------------------------
# generators


def _vector(rng, S):
    """(z, pbar, w) with a mix of ties, sparse nominals and repeated weights."""
    z = rng.uniform(-10, 10, S)
    if rng.random() < 0.2:
        z = np.round(z)
    pbar = rng.dirichlet(np.ones(S))
    if S > 2 and rng.random() < 0.3:
        drop = rng.random(S) < 0.3
        drop[rng.integers(S)] = False
        pbar[drop] = 0.0
        pbar /= pbar.sum()
    u = rng.random()
    if u < 0.25:
        w = np.ones(S)
    elif u < 0.5:
        w = rng.choice(rng.uniform(0.05, 1.0, 3), size=S)
    else:
        w = rng.uniform(0.05, 1.0, S)
    return z, pbar, w


def make_instance(suite, seed, max_states, max_actions=1):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(2, max(2, max_states) + 1))
    A = 1 if suite == "response" else int(rng.integers(1, max(1, max_actions) + 1))
    vecs = [_vector(rng, S) for _ in range(A)]
    kappa = float(rng.uniform(0, XI_MAX))
    pi = rng.dirichlet(np.ones(A)).tolist() if suite == "policy" else None
    if pi is not None and rng.random() < 0.2:
        pi = np.eye(A)[rng.integers(A)].tolist()
    return Instance(suite, list(seed), [v[0].tolist() for v in vecs],
                    [v[1].tolist() for v in vecs], [v[2].tolist() for v in vecs],
                    kappa, pi)


# ---------------------------------------------------------------------------
# fault injection


def off_by_one_slope(f):
    """Response whose values are rebuilt with each segment's slope shifted by one."""
    if f.n_segments < 2:
        return f
    slope = np.append(f.slope[1:], f.slope[-1])
    q = np.concatenate([[f.q[0]], f.q[0] + np.cumsum(slope * np.diff(f.xi))])
    return dataclasses.replace(f, q=q, slope=slope)


def _responses(data, fault):
    out = [homotopy_response(HomotopyInput(z, p, w)) for z, p, w in data]
    return [off_by_one_slope(f) for f in out] if fault else out


# ---------------------------------------------------------------------------
# checks


def _check_response(inst, tol, fault, fails):
    (z, pbar, w), = inst.arrays()
    f, = _responses(inst.arrays(), fault)
    n_weights = len(np.unique(w))
    if f.n_segments > n_weights * len(z):
        fails.append(f"{f.n_segments} segments exceed {n_weights} x {len(z)}")
    for xi in np.linspace(0.0, XI_MAX, N_GRID).tolist():
        q, p = eval_response(f, xi)
        ref, _ = lp_worst_case(z, pbar, w, xi)
        if not abs(q - ref) <= tol:
            fails.append(f"xi={xi!r}: homotopy {q!r} vs lp {ref!r}")
        if p.min() < -1e-12 or abs(p.sum() - 1) > 1e-10 \
                or w @ np.abs(p - pbar) > xi + 1e-10 or abs(p @ z - q) > 1e-10:
            fails.append(f"xi={xi!r}: distribution infeasible or inconsistent")


def _check_s_value(inst, tol, fault, fails):
    data = inst.arrays()
    fs = _responses(data, fault)
    u = bisect_exact(fs, inst.kappa)
    ref, _ = lp_s_value(data, inst.kappa)
    if not abs(u - ref) <= tol:
        fails.append(f"bisection {u!r} vs lp {ref!r}")
    res = recover_greedy(fs, u, inst.kappa)
    d = res.d_star
    if d.min() < -1e-12 or abs(d.sum() - 1) > 1e-12:
        fails.append("action distribution is not on the simplex")
    if res.xi_star.sum() > inst.kappa + 1e-9:
        fails.append(f"budgets {res.xi_star.sum()!r} exceed {inst.kappa!r}")
    att = sum(da * eval_response(f, min(x, f.xi[-1]))[0]
              for da, f, x in zip(d, fs, res.xi_star) if da > 0)
    if abs(att - u) > 1e-9 * max(1.0, abs(u)):
        fails.append(f"saddle point attains {att!r} instead of {u!r}")
    for eps in (1e-3, 1e-6, 1e-9):
        ue = bisect_eps(fs, inst.kappa, eps)
        if abs(ue - u) > eps:
            fails.append(f"eps={eps}: bisection {ue!r} vs exact {u!r}")


def _check_policy(inst, tol, fault, fails):
    data = inst.arrays()
    fs = _responses(data, fault)
    val, _ = policy_update_value(fs, inst.pi, inst.kappa)
    ref = lp_policy_value(data, np.asarray(inst.pi), inst.kappa)
    if not abs(val - ref) <= tol:
        fails.append(f"policy update {val!r} vs lp {ref!r}")


_CHECKS = {"response": _check_response, "s_value": _check_s_value,
           "policy": _check_policy}


def check(inst, tol=1e-8, fault=False):
    """Run the differential check for one instance."""
    out = CheckOutcome(inst)
    try:
        _CHECKS[inst.suite](inst, tol, fault, out.failures)
    except Exception as exc:  # any crash is a failure to report
        out.failures.append(f"{type(exc).__name__}: {exc}")
    return out


def run(n_instances, max_states=30, max_actions=5, seed=0, tol=1e-8, fault=False,
        suites=SUITES, stop_on_failure=True):
    """Check n_instances per suite; returns (number checked, failing outcomes)."""
    failures = []
    checked = 0
    for k, suite in enumerate(suites):
        for i in range(n_instances):
            inst = make_instance(suite, [seed, k, i], max_states, max_actions)
            out = check(inst, tol, fault)
            checked += 1
            if not out.ok:
                failures.append(out)
                if stop_on_failure:
                    return checked, failures
    return checked, failures
