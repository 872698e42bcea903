import numpy as np
import pytest
from hypothesis import given, strategies as st

from l1rmdp.errors import DegenerateSupport, NegativeBudget
from l1rmdp.homotopy import (C1, C2, HomotopyInput, eval_response, homotopy_response,
                             inverse_response, nondominated_receivers, sa_bellman,
                             subgradient, worst_case)
from l1rmdp.model import AmbiguityConfig, nominal_bellman
from l1rmdp.oracle import lp_sa_bellman, lp_worst_case

from _util import random_ambiguity, random_model

Z1 = np.array([4.0, 3.0, 2.0, 1.0])
P1 = np.array([0.2, 0.3, 0.4, 0.1])
Z2 = np.array([2.9, 0.9, 1.5, 0.0])
P2 = np.array([0.2, 0.3, 0.3, 0.2])
W2 = np.array([1.0, 1.0, 2.0, 2.0])


def uniform_example():
    return homotopy_response(HomotopyInput(Z1, P1, 1.0))


def weighted_example():
    return homotopy_response(HomotopyInput(Z2, P2, W2))


def test_uniform_example_trace():
    f = uniform_example()
    assert set(f.receiver.tolist()) == {3}
    assert f.donor.tolist() == [0, 1, 2]
    assert np.allclose(f.xi, [0.0, 0.4, 1.0, 1.8], atol=1e-15)
    assert np.allclose(f.q, [2.6, 2.0, 1.4, 1.0], atol=1e-15)
    assert f.q[-1] == 1.0


def test_weighted_example_trace():
    f = weighted_example()
    assert f.pairs() == [(0, 1), (1, 3), (2, 3), (1, 3)]
    assert f.kind.tolist() == [C1, C2, C1, C1]
    # breakpoints confirmed once against the LP oracle, then frozen
    assert np.allclose(f.xi, [0.0, 0.4, 0.6, 1.8, 2.7], atol=1e-14)
    assert np.allclose(f.q, [1.3, 0.9, 0.72, 0.27, 0.0], atol=1e-14)


@pytest.mark.parametrize("z,p,w", [(Z1, P1, np.ones(4)), (Z2, P2, W2)])
def test_examples_match_lp(z, p, w):
    f = homotopy_response(HomotopyInput(z, p, w))
    for x, q in zip(f.xi, f.q):
        assert lp_worst_case(z, p, w, x)[0] == pytest.approx(q, abs=1e-9)


def test_uniform_example_evaluation():
    f = uniform_example()
    q, p = eval_response(f, 0.7)
    assert q == pytest.approx(1.7, abs=1e-14)
    assert np.allclose(p, [0.0, 0.15, 0.4, 0.45], atol=1e-14)
    q, p = eval_response(f, 10.0)
    assert q == 1.0 and np.allclose(p, [0, 0, 0, 1], atol=1e-15)
    q, p = eval_response(f, 0.0)
    assert q == pytest.approx(P1 @ Z1, abs=1e-15) and np.array_equal(p, P1)
    with pytest.raises(NegativeBudget):
        eval_response(f, -0.1)


def test_uniform_example_inverse_and_subgradient():
    f = uniform_example()
    assert inverse_response(f, 1.7) == pytest.approx(0.7, abs=1e-14)
    assert inverse_response(f, f.q[0]) == 0.0
    assert inverse_response(f, 5.0) == 0.0
    assert inverse_response(f, 0.99) == np.inf
    assert subgradient(f, 0.2) == pytest.approx((-1.5, -1.5))
    assert subgradient(f, 0.4) == pytest.approx((-1.5, -1.0))
    lo, hi = subgradient(f, 5.0)
    assert lo <= 0.0 <= hi
    lo, hi = subgradient(f, 1.8)
    assert lo <= 0.0 <= hi


def test_nondominated_examples():
    rng = np.random.default_rng(0)
    z = rng.normal(size=7)
    assert nondominated_receivers(z, np.ones(7)).tolist() == [int(np.argmin(z))]
    assert nondominated_receivers(Z2, W2).tolist() == [3, 1]
    assert nondominated_receivers(np.ones(5), np.full(5, 0.3)).tolist() == [0]


def test_nondominated_matches_definition():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        z = rng.integers(0, 4, n).astype(float)
        w = rng.integers(1, 4, n).astype(float)
        got = nondominated_receivers(z, w).tolist()
        want = []
        for i in range(n):
            dom = any((z[j] <= z[i] and w[j] <= w[i]) and (z[j], w[j]) != (z[i], w[i])
                      for j in range(n))
            dup = any(z[j] == z[i] and w[j] == w[i] for j in range(i))
            if not dom and not dup:
                want.append(i)
        assert sorted(got) == want
        assert list(np.argsort(z[got], kind="stable")) == list(range(len(got)))


def test_empty_support():
    with pytest.raises(DegenerateSupport):
        HomotopyInput(Z1, np.zeros(4), 1.0, np.zeros(4, bool))


@st.composite
def instances(draw, max_states=12):
    S = draw(st.integers(1, max_states))
    seed = draw(st.integers(0, 2**32 - 1))
    ties = draw(st.booleans())
    weights = draw(st.sampled_from(["uniform", "few", "random"]))
    sparse = draw(st.booleans())
    rng = np.random.default_rng(seed)
    z = rng.uniform(-10, 10, S)
    if ties:
        z = np.round(z / 4)
    p = rng.dirichlet(np.ones(S))
    if sparse and S > 1:
        p[rng.random(S) < 0.4] = 0.0
        if p.sum() == 0:
            p[0] = 1.0
        p /= p.sum()
    w = {"uniform": np.ones(S), "few": rng.choice([0.25, 0.5, 1.0], S),
         "random": rng.uniform(0.05, 1.0, S)}[weights]
    return z, p, w


def _check_shape(f, z, w, support):
    assert np.all(np.diff(f.xi) >= 0)
    assert np.all(np.diff(f.q) <= 1e-12)
    # convexity: slopes increase along the trace
    assert np.all(np.diff(f.slope) >= -1e-9 * (1 + np.abs(f.slope[1:])))
    assert np.all(f.slope < 0)
    assert f.q[-1] == z[support].min()
    c = len(np.unique(w[support]))
    assert f.n_segments <= c * int(support.sum())


@given(instances())
def test_response_properties(inst):
    z, p, w = inst
    inp = HomotopyInput(z, p, w)
    f = homotopy_response(inp)
    _check_shape(f, z, w, inp.support)
    assert f.q[0] == pytest.approx(p @ z, abs=1e-12)
    if np.all(w == 1):
        assert f.n_segments <= len(z)
        assert len(set(f.receiver.tolist())) <= 1


@given(instances())
def test_restricted_support_properties(inst):
    z, p, w = inst
    inp = HomotopyInput.restricted(z, p, w)
    f = homotopy_response(inp)
    _check_shape(f, z, w, inp.support)
    for x in np.linspace(0, 2.5, 6):
        q, pp = eval_response(f, x)
        assert np.all(pp[~inp.support] == 0)
        ref = lp_worst_case(z, p, w, x, inp.support)[0]
        assert q == pytest.approx(ref, abs=1e-8)


def _strip_flat(f):
    """Breakpoints without zero-length segments or collinear interior points
    (equal-slope ties may split a straight piece in different places)."""
    keep = np.concatenate([[True], np.diff(f.xi) > 0])
    xi, q = f.xi[keep], f.q[keep]
    if len(xi) < 3:
        return xi, q
    sl = np.diff(q) / np.diff(xi)
    bend = np.abs(np.diff(sl)) > 1e-9 * (1 + np.abs(sl[1:]))
    keep = np.concatenate([[True], bend, [True]])
    return xi[keep], q[keep]


@given(instances())
def test_pruning_is_sound(inst):
    z, p, w = inst
    inp = HomotopyInput(z, p, w)
    a, b = homotopy_response(inp, prune=True), homotopy_response(inp, prune=False)
    xa, qa = _strip_flat(a)
    xb, qb = _strip_flat(b)
    assert np.allclose(xa, xb, atol=1e-12) and np.allclose(qa, qb, atol=1e-12)


@given(instances(), st.floats(0, 3))
def test_evaluation_matches_lp(inst, xi):
    z, p, w = inst
    f = homotopy_response(HomotopyInput(z, p, w))
    q, pp = eval_response(f, xi)
    assert q == pytest.approx(lp_worst_case(z, p, w, xi)[0], abs=1e-8)
    assert pp.min() >= -1e-12 and abs(pp.sum() - 1) <= 1e-12
    assert w @ np.abs(pp - p) <= xi + 1e-10
    assert pp @ z == pytest.approx(q, abs=1e-10)
    if np.isfinite(inverse_response(f, q)):
        assert eval_response(f, inverse_response(f, q))[0] == pytest.approx(q, abs=1e-9)


@given(instances(), st.floats(0, 3))
def test_early_termination(inst, xi):
    z, p, w = inst
    full = homotopy_response(HomotopyInput(z, p, w))
    part = homotopy_response(HomotopyInput(z, p, w), limit=xi)
    assert part.xi[-1] >= min(xi, full.xi[-1]) - 1e-12
    # all but the last point coincide; the last one is cut at the target
    k = len(part.xi) - 1
    assert np.array_equal(part.xi[:k], full.xi[:k]) and np.array_equal(part.q[:k], full.q[:k])
    if not part.complete:
        assert part.xi[-1] == pytest.approx(xi, abs=1e-12)
        assert part.q[-1] == pytest.approx(eval_response(full, xi)[0], abs=1e-12)
    assert worst_case(z, p, w, xi)[0] == pytest.approx(eval_response(full, xi)[0], abs=1e-12)


def test_sa_bellman_examples():
    rng = np.random.default_rng(4)
    for seed in range(15):
        m = random_model(np.random.default_rng(seed), int(rng.integers(2, 21)), 4)
        v = rng.normal(size=m.n_states) * 3
        amb = random_ambiguity(rng, m, "sa", restricted=bool(seed % 2))
        s = int(rng.integers(m.n_states))
        val, act, ps = sa_bellman(m, amb, v, s)
        assert val == pytest.approx(lp_sa_bellman(m, amb, v, s), abs=1e-8)
        assert len(ps) == m.n_actions[s]
    m = random_model(np.random.default_rng(99), 6, 3)
    v = rng.normal(size=6)
    zero = AmbiguityConfig.uniform(m, "sa", 0.0)
    nom = nominal_bellman(m, v)[0]
    for s in range(6):
        assert sa_bellman(m, zero, v, s)[0] == pytest.approx(nom[s], abs=1e-12)


def test_sa_bellman_single_action():
    m = random_model(np.random.default_rng(2), 5, 1)
    amb = AmbiguityConfig.uniform(m, "sa", 0.3)
    v = np.arange(5.0)
    for s in range(5):
        nxt, p, r = m.row(s, 0)
        z = np.zeros(5)
        pb = np.zeros(5)
        z[nxt] = r + m.discount * v[nxt]
        pb[nxt] = p
        f = homotopy_response(HomotopyInput.restricted(z, pb, 1.0))
        assert sa_bellman(m, amb, v, s)[0] == pytest.approx(eval_response(f, 0.3)[0], abs=1e-13)
