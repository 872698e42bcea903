import numpy as np
import pytest
from hypothesis import given, strategies as st

from l1rmdp.errors import ModelError, NegativeBudget, NumericalFailure
from l1rmdp.model import AmbiguityConfig, nominal_bellman
from l1rmdp.oracle import (LpProblem, brute_force_response, grid_worst_case, lp_bellman,
                           lp_policy_value, lp_s_bellman, lp_s_value, lp_worst_case,
                           simplex)

from _util import random_ambiguity, random_model


def test_simplex_small_problem():
    # min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
    c = np.array([-1.0, -1.0, 0, 0])
    A = np.array([[1.0, 2, 1, 0], [3, 1, 0, 1]])
    res = simplex(c, A, np.array([4.0, 6.0]))
    assert res.value == pytest.approx(-2.8, abs=1e-12)
    assert res.x[:2] == pytest.approx([1.6, 1.2], abs=1e-12)
    assert np.all(res.reduced_costs >= -1e-12)


def test_simplex_infeasible_and_unbounded():
    with pytest.raises(NumericalFailure):
        simplex(np.zeros(2), np.array([[1.0, 1.0]]), np.array([-1.0]))
    with pytest.raises(NumericalFailure):
        simplex(np.array([-1.0, 0.0]), np.array([[1.0, -1.0]]), np.array([1.0]))


def test_lp_problem_inequalities():
    # max x + y over the unit box with x + y <= 1.5
    prob = LpProblem(np.array([-1.0, -1.0]), None, None,
                     np.array([[1.0, 0], [0, 1], [1, 1]]), np.array([1.0, 1.0, 1.5]))
    assert prob.solve().value == pytest.approx(-1.5, abs=1e-12)


def test_degenerate_lp_terminates():
    # many tied constraints through the same vertex
    rng = np.random.default_rng(0)
    n = 6
    A_ub = np.vstack([np.eye(n), np.ones((5, n)), rng.uniform(0, 1, (5, n))])
    b_ub = np.concatenate([np.ones(n), np.full(5, 1.0), A_ub[n + 5:].sum(axis=1) / n])
    prob = LpProblem(-np.ones(n), None, None, A_ub, b_ub)
    assert prob.solve().value == pytest.approx(-1.0, abs=1e-9)


def test_worst_case_zero_budget_is_nominal():
    z = np.array([3.0, -1.0, 2.0])
    pbar = np.array([0.2, 0.5, 0.3])
    q, p = lp_worst_case(z, pbar, np.ones(3), 0.0)
    assert q == pytest.approx(pbar @ z, abs=1e-12)
    assert p == pytest.approx(pbar, abs=1e-12)


def test_worst_case_example_value():
    # moving 0.2 of mass from the best entry to the worst costs 0.4 in L1
    q, p = lp_worst_case([4.0, 3.0, 2.0, 1.0], [0.2, 0.3, 0.4, 0.1], 1.0, 0.4)
    assert q == pytest.approx(2.0, abs=1e-12)
    assert p == pytest.approx([0.0, 0.3, 0.4, 0.3], abs=1e-12)
    with pytest.raises(NegativeBudget):
        lp_worst_case([1.0, 2.0], [0.5, 0.5], 1.0, -0.1)


def test_worst_case_large_budget_reaches_minimum():
    z = np.array([2.0, -3.0, 5.0])
    q, p = lp_worst_case(z, [0.3, 0.3, 0.4], [0.5, 1.0, 0.2], 10.0)
    assert q == pytest.approx(-3.0, abs=1e-12)
    q, _ = lp_worst_case(z, [0.3, 0.3, 0.4], 1.0, 10.0, support=[True, False, True])
    assert q == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_worst_case_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-5, 5, 3)
    pbar = rng.dirichlet(np.ones(3))
    w = rng.uniform(0.2, 1.0, 3)
    for xi in (0.0, 0.1, 0.5, 1.3):
        q, _ = lp_worst_case(z, pbar, w, xi)
        g = grid_worst_case(z, pbar, w, xi)
        # the grid can only overestimate the minimum
        assert q <= g + 1e-9
        assert g - q <= 2e-3 * (np.abs(z).max() + 1)


@given(seed=st.integers(0, 2**32 - 1), S=st.integers(2, 12))
def test_response_is_convex_nonincreasing(seed, S):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-10, 10, S)
    pbar = rng.dirichlet(np.ones(S))
    w = rng.uniform(0.05, 1, S)
    grid = np.linspace(0, 2, 21)
    q = brute_force_response(z, pbar, w, grid)
    assert np.all(np.diff(q) <= 1e-10)
    assert np.all(q[:-2] - 2 * q[1:-1] + q[2:] >= -1e-9)
    assert q[0] == pytest.approx(pbar @ z, abs=1e-10)
    assert q[-1] >= z.min() - 1e-10


def test_s_value_zero_budget_is_nominal():
    rng = np.random.default_rng(3)
    model = random_model(rng, 6, 3, gamma=0.9)
    amb = AmbiguityConfig.uniform(model, "s", 0.0)
    v = rng.normal(size=6)
    nominal, _ = nominal_bellman(model, v)
    assert lp_bellman(model, amb, v) == pytest.approx(nominal, abs=1e-9)


def test_s_value_single_action_equals_worst_case():
    rng = np.random.default_rng(4)
    z = rng.normal(size=5)
    pbar = rng.dirichlet(np.ones(5))
    w = rng.uniform(0.2, 1, 5)
    val, d = lp_s_value([(z, pbar, w)], 0.6)
    assert val == pytest.approx(lp_worst_case(z, pbar, w, 0.6)[0], abs=1e-9)
    assert d == pytest.approx([1.0])


def test_s_value_weak_duality_with_policy_value():
    # any fixed policy gives a lower bound on the optimal s-rectangular value
    rng = np.random.default_rng(5)
    data = [(rng.normal(size=4), rng.dirichlet(np.ones(4)), rng.uniform(0.2, 1, 4))
            for _ in range(3)]
    val, d = lp_s_value(data, 0.5)
    for pi in np.eye(3).tolist() + [[1 / 3] * 3]:
        assert lp_policy_value(data, np.array(pi), 0.5) <= val + 1e-9
    assert lp_policy_value(data, np.asarray(d), 0.5) == pytest.approx(val, abs=1e-8)


def test_lp_bellman_kind_checks():
    rng = np.random.default_rng(6)
    model = random_model(rng, 4, 2)
    amb = random_ambiguity(rng, model, "sa")
    with pytest.raises(ModelError):
        lp_s_bellman(model, amb, np.zeros(4), 0)


def test_tiny_budget_policy_lp():
    # a budget at the scale of the internal rhs shift
    data = [([2.73923375, -4.60426572], [0.89720385, 0.10279615], [0.82260673, 0.9171178]),
            ([2.13271552, 4.58993122], [0.31740082, 0.68259918], [0.82506088, 0.05260158]),
            ([7.14808553, -9.32828849], [0.55746323, 0.44253677], [0.87001998, 0.56438816])]
    data = [tuple(np.array(x) for x in d) for d in data]
    pi = np.array([0.2, 0.5, 0.3])
    nominal = sum(pa * (z @ p) for pa, (z, p, _) in zip(pi, data))
    assert lp_policy_value(data, pi, 1e-9) == pytest.approx(nominal, abs=1e-7)
    val, _ = lp_s_value(data, 1e-9)
    assert val == pytest.approx(max(z @ p for z, p, _ in data), abs=1e-7)
