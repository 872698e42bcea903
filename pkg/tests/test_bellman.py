import numpy as np
import pytest
from hypothesis import given, strategies as st

from l1rmdp.bellman import bellman, bellman_policy, nature_response, residual, sweep_counts
from l1rmdp.bisection import s_bellman, s_bellman_policy
from l1rmdp.model import AmbiguityConfig, nominal_bellman, nominal_policy_matrix, uniform_policy
from l1rmdp.oracle import lp_bellman, lp_s_bellman_policy, lp_sa_bellman, lp_worst_case

from _util import random_ambiguity, random_model


def _random_policy(rng, model):
    pi = np.concatenate([rng.dirichlet(np.ones(k)) for k in model.n_actions])
    return pi


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["sa", "s"]),
       restricted=st.booleans())
def test_sweep_matches_lp(seed, kind, restricted):
    rng = np.random.default_rng(seed)
    model = random_model(rng, int(rng.integers(2, 7)), 3)
    amb = random_ambiguity(rng, model, kind, restricted=restricted)
    v = rng.normal(size=model.n_states) * 5
    lv, pi = bellman(model, amb, v)
    assert lv == pytest.approx(lp_bellman(model, amb, v), abs=1e-8)
    # the greedy policy attains the optimum
    assert bellman_policy(model, amb, v, pi) == pytest.approx(lv, abs=1e-8)


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["sa", "s"]))
def test_policy_sweep_matches_lp(seed, kind):
    rng = np.random.default_rng(seed)
    model = random_model(rng, int(rng.integers(2, 6)), 3)
    amb = random_ambiguity(rng, model, kind)
    v = rng.normal(size=model.n_states) * 5
    pi = _random_policy(rng, model)
    out = bellman_policy(model, amb, v, pi)
    for s in range(model.n_states):
        lo, hi = model.state_ptr[s], model.state_ptr[s + 1]
        if kind == "s":
            ref = lp_s_bellman_policy(model, amb, v, pi[lo:hi], s)
        else:
            W = amb.weight_matrix(model)
            ref = 0.0
            for a in range(hi - lo):
                cols, p, r = model.row(s, a)
                ref += pi[lo + a] * lp_worst_case(r + model.discount * v[cols], p,
                                                  W[lo + a, cols], amb.budgets[lo + a])[0]
        assert out[s] == pytest.approx(ref, abs=1e-8)


def test_state_operators_agree_with_sweeps():
    rng = np.random.default_rng(2)
    model = random_model(rng, 6, 4)
    amb = random_ambiguity(rng, model, "s")
    v = rng.normal(size=6)
    lv, d = bellman(model, amb, v)
    pi = _random_policy(rng, model)
    lpi = bellman_policy(model, amb, v, pi)
    for s in range(6):
        lo, hi = model.state_ptr[s], model.state_ptr[s + 1]
        assert s_bellman(model, amb, v, s).u_star == pytest.approx(lv[s], abs=1e-12)
        assert s_bellman_policy(model, amb, v, pi[lo:hi], s) == pytest.approx(lpi[s], abs=1e-12)
    samp = random_ambiguity(rng, model, "sa")
    lv, _ = bellman(model, samp, v)
    assert lv == pytest.approx([lp_sa_bellman(model, samp, v, s) for s in range(6)], abs=1e-9)


@pytest.mark.parametrize("kind", ["sa", "s"])
@pytest.mark.parametrize("restricted", [True, False])
def test_nature_response_is_consistent(kind, restricted):
    rng = np.random.default_rng(7)
    model = random_model(rng, 8, 3, gamma=0.9)
    amb = random_ambiguity(rng, model, kind, restricted=restricted)
    v = rng.normal(size=8) * 3
    pi = _random_policy(rng, model)
    out, P, r = nature_response(model, amb, v, pi)
    P = P.toarray() if hasattr(P, "toarray") else P
    assert out == pytest.approx(bellman_policy(model, amb, v, pi), abs=1e-10)
    assert out == pytest.approx(r + model.discount * P @ v, abs=1e-10)
    assert np.all(P >= -1e-12)
    assert P.sum(axis=1) == pytest.approx(np.ones(8), abs=1e-10)
    if restricted:
        Pn, _ = nominal_policy_matrix(model, pi)
        assert np.all(P[Pn == 0] == 0)


def test_zero_budget_is_nominal():
    rng = np.random.default_rng(8)
    model = random_model(rng, 7, 3)
    v = rng.normal(size=7)
    nominal, _ = nominal_bellman(model, v)
    for kind in ("sa", "s"):
        amb = AmbiguityConfig.uniform(model, kind, 0.0)
        assert bellman(model, amb, v)[0] == pytest.approx(nominal, abs=1e-12)
        pi = uniform_policy(model)
        P, r = nominal_policy_matrix(model, pi)
        assert bellman_policy(model, amb, v, pi) == \
            pytest.approx(r + model.discount * (P @ v), abs=1e-12)


def test_residual_and_counts():
    rng = np.random.default_rng(9)
    model = random_model(rng, 5, 2)
    amb = random_ambiguity(rng, model, "sa")
    v = rng.normal(size=5)
    lv, _ = bellman(model, amb, v)
    assert residual(model, amb, v) == pytest.approx(np.max(np.abs(lv - v)))
    calls, entries = sweep_counts(model, amb)
    assert calls == model.n_rows
    assert entries == int(np.count_nonzero(model.prob > 0))


def test_bad_value_shape():
    rng = np.random.default_rng(10)
    model = random_model(rng, 4, 2)
    amb = random_ambiguity(rng, model, "s")
    with pytest.raises(ValueError):
        bellman(model, amb, np.zeros(3))
