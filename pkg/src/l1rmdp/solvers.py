"""Partial policy iteration, robust value iteration and robust modified PI.

Policy evaluation works on the robust evaluation MDP in which nature picks
transition probabilities to minimize the agent's return: nature's greedy
response to the current value is computed by the fast operators and its
Markov reward process is then solved (exactly or by a few sweeps).
"""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .bellman import bellman, bellman_policy, nature_response
from .errors import (MaxIterExceeded, ModelError, NonConvergence, SingularSystem,
                     UnsupportedRectangularity)
from .model import check_policy, nominal_bellman, nominal_policy_matrix

PI_DENSE = "pi"
MPI = "mpi"
VI = "vi"
DENSE_LIMIT = 1000


@dataclass
class SolverConfig:
    delta: float = 1.0
    epsilon1: float = 1.0
    epsilon_decay: float = None   # defaults to gamma^2
    max_iterations: int = 100000
    inner_method: str = None      # None selects dense PI up to 1000 states, else MPI
    mpi_sweeps: int = 100
    rmpi_eval_sweeps: int = 1000
    parallel_sweep: bool = True
    record_policies: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ModelError("delta must be positive")
        if not self.epsilon1 > 0:
            raise ModelError("epsilon1 must be positive")
        if self.rmpi_eval_sweeps < 0 or self.mpi_sweeps < 1:
            raise ModelError("sweep counts must be nonnegative")
        if self.inner_method not in (None, PI_DENSE, MPI, VI):
            raise ModelError(f"unknown inner method '{self.inner_method}'")

    def decay(self, gamma):
        d = gamma ** 2 if self.epsilon_decay is None else self.epsilon_decay
        if not 0 <= d < gamma:
            raise ModelError("tolerance decay must lie in [0, gamma)")
        return d

    def threshold(self, gamma):
        return (1.0 - gamma) / 2.0 * self.delta

    def method_for(self, model):
        if self.inner_method is not None:
            return self.inner_method
        return PI_DENSE if model.n_states <= DENSE_LIMIT else MPI


@dataclass
class IterationRecord:
    residual: float
    epsilon: float
    seconds: float
    eval_residual: float = float("nan")
    accuracy: float = float("nan")   # bound on ||v - v_pi|| requested from the evaluation


@dataclass
class SolveResult:
    value: np.ndarray
    policy: np.ndarray
    iterations: list
    termination: str
    seconds: float = 0.0
    policies: list = field(default_factory=list)

    @property
    def residual(self):
        return self.iterations[-1].residual if self.iterations else float("nan")

    @property
    def converged(self):
        return self.termination == "converged"


# ---------------------------------------------------------------------------
# policy evaluation


class EvaluationProblem:
    """The process nature controls once the agent commits to pi.

    Its fixed point is the robust value of pi; apply() is L_pi and
    nature() returns nature's greedy transition matrix and rewards at v.
    """

    def __init__(self, model, amb, pi):
        self.model, self.amb = model, amb
        self.pi = check_policy(model, pi, tol=1e-9)

    def apply(self, v):
        return bellman_policy(self.model, self.amb, v, self.pi)

    def nature(self, v):
        return nature_response(self.model, self.amb, v, self.pi)


def _mrp_solve(P, r, gamma):
    S = r.shape[0]
    M = np.eye(S) - gamma * (P.toarray() if sp.issparse(P) else P)
    try:
        return np.linalg.solve(M, r)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc))


def evaluate_policy(model, amb, pi, tol, method=None, v0=None, max_iter=100000,
                    mpi_sweeps=100):
    """Value of pi under nature's worst case, with ||L_pi v - v|| <= tol.

    method: "pi" (nature's greedy choice + exact linear solve), "mpi"
    (greedy choice + mpi_sweeps sweeps of the fixed process) or "vi" (plain
    iteration of L_pi).  Returns (v, residual, n_iterations).
    """
    if tol <= 0:
        raise ModelError("tolerance must be positive")
    prob = EvaluationProblem(model, amb, pi)
    gamma = model.discount
    method = method or (PI_DENSE if model.n_states <= DENSE_LIMIT else MPI)
    v = np.zeros(model.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    best = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        if method == VI:
            lv = prob.apply(v)
            res = float(np.max(np.abs(lv - v)))
            if res <= tol:
                return v, res, it
            v = lv
        else:
            lv, P, r = prob.nature(v)
            res = float(np.max(np.abs(lv - v)))
            if res <= tol:
                return v, res, it
            if method == PI_DENSE:
                v = _mrp_solve(P, r, gamma)
            else:
                v = lv
                for _ in range(mpi_sweeps - 1):
                    v = r + gamma * (P @ v)
        # stop once round-off dominates: no progress over many iterations
        if res < best * (1 - 1e-12):
            best, stall = res, 0
        else:
            stall += 1
            if stall > 50:
                raise NonConvergence(f"policy evaluation stalled at residual {res:.3e}")
    raise NonConvergence(f"policy evaluation did not reach {tol:.3e} in {max_iter} iterations")


def nominal_policy_value(model, pi):
    P, r = nominal_policy_matrix(model, pi)
    return _mrp_solve(P, r, model.discount)


def fp_floor(model, v):
    """Smallest residual that round-off lets a sweep resolve for values like v."""
    scale = max(1.0, float(np.max(np.abs(v))) if len(v) else 1.0)
    return 64 * np.finfo(float).eps * scale / (1.0 - model.discount)


# ---------------------------------------------------------------------------
# outer loops


@contextmanager
def _threads(config):
    if config.parallel_sweep:
        yield
        return
    old = numba.get_num_threads()
    numba.set_num_threads(1)
    try:
        yield
    finally:
        numba.set_num_threads(old)


def _finish(value, policy, records, termination, t0, policies, strict):
    res = SolveResult(value, policy, records, termination, time.perf_counter() - t0, policies)
    if termination != "converged" and strict:
        raise MaxIterExceeded(f"no convergence after {len(records)} iterations", res)
    return res


def robust_vi(model, amb, config=None, v0=None, strict=True):
    """Robust value iteration v <- L v until the residual test passes."""
    config = config or SolverConfig()
    t0 = time.perf_counter()
    gamma = model.discount
    thr = config.threshold(gamma)
    v = np.zeros(model.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    records = []
    for _ in range(config.max_iterations):
        lv, pi = bellman(model, amb, v)
        res = float(np.max(np.abs(lv - v)))
        records.append(IterationRecord(res, float("nan"), time.perf_counter() - t0))
        if res < thr:
            return _finish(lv, pi, records, "converged", t0, [], strict)
        v = lv
    return _finish(v, pi, records, "max_iterations", t0, [], strict)


def _partial_loop(model, amb, config, evaluate, strict):
    gamma = model.discount
    thr = config.threshold(gamma)
    decay = config.decay(gamma)
    t0 = time.perf_counter()
    v = np.zeros(model.n_states)
    eps = config.epsilon1
    records, policies = [], []
    pi = None
    for _ in range(config.max_iterations):
        lv, pi = bellman(model, amb, v)
        res = float(np.max(np.abs(lv - v)))
        if res < thr:
            records.append(IterationRecord(res, eps, time.perf_counter() - t0))
            return _finish(lv, pi, records, "converged", t0, policies, strict)
        if config.record_policies:
            policies.append(pi)
        v, eval_res, accuracy = evaluate(pi, lv, eps)
        records.append(IterationRecord(res, eps, time.perf_counter() - t0, eval_res, accuracy))
        eps = min(decay * eps, 0.5 / (1.0 - gamma) * eval_res)
    return _finish(v, pi, records, "max_iterations", t0, policies, strict)


def ppi(model, amb, config=None, strict=True):
    """Partial policy iteration.

    Each iteration takes the greedy policy for the current value and
    evaluates it only to ||L_pi v - v|| <= (1 - gamma) eps_k, with eps_k
    shrinking geometrically.  The recorded accuracy is what was actually
    requested, which exceeds eps_k once eps_k falls below round-off.
    """
    config = config or SolverConfig()
    method = config.method_for(model)
    gamma = model.discount

    def evaluate(pi, v_start, eps):
        tol = max((1.0 - gamma) * eps, fp_floor(model, v_start))
        v, res, _ = evaluate_policy(model, amb, pi, tol, method=method, v0=v_start,
                                    mpi_sweeps=config.mpi_sweeps)
        # near round-off the achieved accuracy is the floor, not eps
        return v, res, tol / (1.0 - gamma)

    return _partial_loop(model, amb, config, evaluate, strict)


def rmpi(model, amb, config=None, strict=True):
    """Robust modified policy iteration: evaluation by a fixed number of sweeps."""
    if amb.kind != "sa":
        raise UnsupportedRectangularity("RMPI is defined for sa-rectangular sets only")
    config = config or SolverConfig()
    m = config.rmpi_eval_sweeps

    def evaluate(pi, v_start, eps):
        v = v_start
        res = float("nan")
        for _ in range(m):
            lv = bellman_policy(model, amb, v, pi)
            res = float(np.max(np.abs(lv - v)))
            v = lv
        return v, res, float("nan")

    return _partial_loop(model, amb, config, evaluate, strict)


SOLVERS = {"ppi": ppi, "vi": robust_vi, "rmpi": rmpi}


def solve(model, amb, algorithm="ppi", config=None, strict=True):
    try:
        f = SOLVERS[algorithm]
    except KeyError:
        raise ModelError(f"unknown algorithm '{algorithm}'")
    config = config or SolverConfig()
    with _threads(config):
        return f(model, amb, config, strict=strict)


def nominal_optimal(model, max_iter=1000):
    """Optimal nominal value and policy by exact policy iteration."""
    v = np.zeros(model.n_states)
    _, pi = nominal_bellman(model, v)
    for _ in range(max_iter):
        v = nominal_policy_value(model, pi)
        lv, pi_new = nominal_bellman(model, v)
        if np.array_equal(pi_new, pi) or np.max(lv - v) <= fp_floor(model, v):
            return v, pi
        pi = pi_new
    raise NonConvergence("nominal policy iteration did not converge")
