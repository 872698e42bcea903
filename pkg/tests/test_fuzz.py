import numpy as np
import pytest

from l1rmdp import fuzz
from l1rmdp.homotopy import HomotopyInput, eval_response, homotopy_response


@pytest.mark.parametrize("suite", fuzz.SUITES)
def test_instances_are_reproducible(suite):
    a = fuzz.make_instance(suite, [1, 2, 3], 20, 4)
    b = fuzz.make_instance(suite, [1, 2, 3], 20, 4)
    assert a == b
    back = fuzz.Instance.from_json(a.to_json())
    assert back == a
    for z, p, w in a.arrays():
        assert len(z) == len(p) == len(w) <= 20
        assert p.sum() == pytest.approx(1.0)
        assert np.all(w > 0) and np.all(w <= 1)
    if suite == "response":
        assert len(a.z) == 1
    if suite == "policy":
        assert sum(a.pi) == pytest.approx(1.0)


@pytest.mark.parametrize("suite", fuzz.SUITES)
def test_small_campaign_passes(suite):
    n, failures = fuzz.run(40, max_states=12, max_actions=4, seed=7, suites=(suite,),
                           stop_on_failure=False)
    assert n == 40
    assert not failures, failures[0].failures


def test_fault_injection_is_caught():
    n, failures = fuzz.run(50, max_states=12, seed=0, fault=True, suites=("response",))
    assert failures and len(failures) == 1
    assert n <= 50


def test_off_by_one_slope_changes_values():
    f = homotopy_response(HomotopyInput([4.0, 3.0, 2.0, 1.0], [0.2, 0.3, 0.4, 0.1], 1.0))
    g = fuzz.off_by_one_slope(f)
    assert g.q[0] == f.q[0]
    assert abs(eval_response(g, 0.5)[0] - eval_response(f, 0.5)[0]) > 1e-3


def test_crash_is_reported_as_failure():
    inst = fuzz.make_instance("s_value", [0], 5, 3)
    inst.kappa = -1.0
    out = fuzz.check(inst)
    assert not out.ok and "NegativeBudget" in out.failures[0]
