"""Slow reference implementations used to cross-check the fast operators.

The LP solver is a dense-tableau primal simplex with Bland's anti-cycling
rule.  It shares no code with the homotopy or bisection kernels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ModelError, NegativeBudget, NumericalFailure

PIVOT_TOL = 1e-9
COST_TOL = 1e-9
REFACTOR_EVERY = 10
PERTURB = 1e-9


@njit(cache=True)
def _pivot(T, row, col):
    T[row, :] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row:
            f = T[i, col]
            if f != 0.0:
                T[i, :] -= f * T[row, :]


@njit(cache=True)
def _choose(T, basis, n_active):
    """Bland's choice of (entering column, leaving row); -1 entries signal
    optimality (no entering column) or unboundedness (no leaving row)."""
    m = T.shape[0] - 1
    rhs = T.shape[1] - 1
    enter = -1
    for j in range(n_active):
        if T[0, j] < -COST_TOL:
            scale = 1.0
            for i in range(1, m + 1):
                scale = max(scale, abs(T[i, j]))
            if T[0, j] < -COST_TOL * scale:
                enter = j
                break
    if enter < 0:
        return -1, -1
    big = 1.0
    for i in range(1, m + 1):
        big = max(big, abs(T[i, enter]))
    ptol = PIVOT_TOL * big
    leave = -1
    best = np.inf
    for i in range(1, m + 1):
        a = T[i, enter]
        if a > ptol:
            ratio = T[i, rhs] / a
            if leave < 0 or ratio < best - 1e-13 or \
                    (abs(ratio - best) <= 1e-13 and basis[i - 1] < basis[leave - 1]):
                best = ratio
                leave = i
    return enter, leave


@njit(cache=True)
def _bland_loop(T, basis, n_active, max_iter):
    """Pivot on tableau T (row 0 = reduced costs, last column = rhs).

    Only the first n_active columns may enter.  Returns (status, iterations);
    status 0 optimal, 1 unbounded, 2 iteration limit.
    """
    it = 0
    while True:
        enter, leave = _choose(T, basis, n_active)
        if enter < 0:
            return 0, it
        if leave < 0:
            return 1, it
        if it >= max_iter:
            return 2, it
        _pivot(T, leave, enter)
        basis[leave - 1] = enter
        it += 1


@dataclass
class LpResult:
    x: np.ndarray
    value: float
    basis: np.ndarray
    reduced_costs: np.ndarray
    iterations: int


@dataclass
class LpProblem:
    """min c^T x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0."""
    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_ub: np.ndarray = None
    b_ub: np.ndarray = None

    def standard_form(self):
        """(A, b, c, slack_start) with slack columns appended for the <= rows."""
        c = np.asarray(self.c, dtype=np.float64)
        n = c.shape[0]
        A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, float)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float)
        A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, float)
        b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float)
        me, mu = A_eq.shape[0], A_ub.shape[0]
        A = np.zeros((me + mu, n + mu))
        A[:me, :n] = A_eq
        A[me:, :n] = A_ub
        A[me:, n:] = np.eye(mu)
        b = np.concatenate([b_eq, b_ub])
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ModelError("LP data must be finite")
        return A, b, np.concatenate([c, np.zeros(mu)]), n

    def solve(self, max_iter=100000):
        A, b, c, n = self.standard_form()
        res = simplex(c, A, b, max_iter=max_iter)
        res.x = res.x[:n]
        return res


def _tableau(A, b, c, basis):
    m, n = A.shape
    T = np.zeros((m + 1, n + 1))
    B = A[:, basis]
    try:
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        raise NumericalFailure("crash basis is singular")
    T[1:, :n] = Binv @ A
    T[1:, n] = Binv @ b
    cb = c[basis]
    T[0, :n] = c - cb @ T[1:, :n]
    T[0, n] = -cb @ T[1:, n]
    return T


def _run(A, b, c, basis, n_active, max_iter):
    """Bland pivots with periodic refactorization from the original data."""
    total = 0
    while True:
        T = _tableau(A, b, c, basis)
        status, it = _bland_loop(T, basis, n_active, min(REFACTOR_EVERY, max_iter - total))
        total += it
        if status == 0:
            # confirm optimality on a freshly factorized tableau
            T = _tableau(A, b, c, basis)
            status, _ = _bland_loop(T, basis, n_active, 0)
            if status == 0:
                return T, 0, total
        elif status == 1:
            T2 = _tableau(A, b, c, basis)
            status, _ = _bland_loop(T2, basis, n_active, 0)
            if status == 1:
                return T2, 1, total
            total += 1
        if total >= max_iter:
            return T, 2, total


def simplex(c, A, b, basis=None, max_iter=100000):
    """Solve min c^T x, A x = b, x >= 0 with Bland's rule.

    ``basis`` may supply a primal-feasible starting basis; otherwise a
    two-phase method with artificials on rows lacking a unit slack is used.
    In the two-phase path the right-hand side is first shifted by a tiny
    positive amount per row so that no pivot is degenerate, and the final
    basis is re-solved against the original right-hand side.  When the data
    themselves live at the scale of the shift (tiny budgets) the shifted
    problem can fail, and the unshifted problem is solved instead.  Raises
    NumericalFailure on infeasibility, unboundedness or stalling.
    """
    if basis is not None:
        return _simplex(c, A, b, basis, max_iter, False)
    try:
        return _simplex(c, A, b, None, max_iter, True)
    except NumericalFailure:
        return _simplex(c, A, b, None, max_iter, False)


def _simplex(c, A, b, basis, max_iter, perturb):
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    iters = 0
    b_work = b
    if basis is None:
        scale = max(1.0, np.abs(b).max()) if m else 1.0
        golden = (np.arange(m) * 0.6180339887498949) % 1.0
        b_work = b + PERTURB * scale * (1.0 + golden) if perturb else b
        basis = np.full(m, -1, np.int64)
        for j in range(n):
            col = A[:, j]
            nz = np.flatnonzero(col)
            if nz.size == 1 and col[nz[0]] == 1.0 and basis[nz[0]] < 0:
                basis[nz[0]] = j
        need = np.flatnonzero(basis < 0)
        if need.size:
            k = need.size
            A1 = np.hstack([A, np.zeros((m, k))])
            A1[need, n + np.arange(k)] = 1.0
            basis[need] = n + np.arange(k)
            c1 = np.zeros(n + k)
            c1[n:] = 1.0
            T, status, it = _run(A1, b_work, c1, basis, n + k, max_iter)
            iters += it
            if status != 0:
                raise NumericalFailure("phase one did not terminate")
            if -T[0, -1] > 1e-7 * scale:
                raise NumericalFailure("LP is infeasible")
            # drive remaining artificials out of the basis
            keep = np.ones(m, bool)
            for i in range(m):
                if basis[i] >= n:
                    row = T[i + 1, :n]
                    cand = np.flatnonzero(np.abs(row) > 1e-9)
                    if cand.size:
                        _pivot(T, i + 1, int(cand[0]))
                        basis[i] = cand[0]
                    else:
                        keep[i] = False
            A, b, b_work = A[keep], b[keep], b_work[keep]
            basis = basis[keep]
            m = A.shape[0]
    basis = np.asarray(basis, dtype=np.int64).copy()
    if np.any(_tableau(A, b_work, c, basis)[1:, -1] < -1e-9):
        # the shift can make a degenerate but feasible problem infeasible;
        # phase two then runs on the original right-hand side
        if b_work is b or np.any(_tableau(A, b, c, basis)[1:, -1] < -1e-9):
            raise NumericalFailure("starting basis is not primal feasible")
        b_work = b
    T, status, it = _run(A, b_work, c, basis, n, max_iter)
    iters += it
    if status == 1:
        raise NumericalFailure("LP is unbounded")
    if status == 2:
        raise NumericalFailure("simplex iteration limit reached")
    xb = np.linalg.solve(A[:, basis], b)
    if np.any(xb < -1e-7 * max(1.0, np.abs(xb).max())):
        raise NumericalFailure("optimal basis is infeasible for the unperturbed problem")
    x = np.zeros(n)
    x[basis] = np.maximum(xb, 0.0)
    red = T[0, :n].copy()
    # optimality certificate on the returned basis
    if np.any(red < -10 * COST_TOL * np.maximum(1.0, np.abs(T[1:, :n]).max(axis=0))):
        raise NumericalFailure("reduced costs are not nonnegative at termination")
    return LpResult(x, float(c @ x), basis, red, iters)


# ---------------------------------------------------------------------------
# worst case over a weighted L1 ball


def lp_worst_case(z, pbar, w, xi, support=None):
    """min p^T z over the simplex and ||p - pbar||_{1,w} <= xi, as an LP.

    Variables (p, l) with l >= |p - pbar| componentwise and w^T l = xi
    (l absorbs slack, so equality loses nothing).  Entries outside the
    support are fixed to zero by dropping their columns.
    """
    z = np.asarray(z, dtype=np.float64)
    pbar = np.asarray(pbar, dtype=np.float64)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), z.shape)
    if xi < 0:
        raise NegativeBudget(xi)
    S = z.shape[0]
    idx = np.arange(S) if support is None else np.flatnonzero(np.asarray(support, bool))
    zc, pc, wc = z[idx], pbar[idx], w[idx]
    n = idx.size
    # columns: p (n), l (n), s (n), t (n)
    #   p_i - l_i + s_i = pbar_i      (p - pbar <= l)
    #  -p_i - l_i + t_i = -pbar_i     (pbar - p <= l)
    #   sum p = 1,  w^T l = xi
    I = np.eye(n)
    Z = np.zeros((n, n))
    A = np.block([[I, -I, I, Z], [-I, -I, Z, I]])
    A = np.vstack([A, np.concatenate([np.ones(n), np.zeros(3 * n)]),
                   np.concatenate([np.zeros(n), wc, np.zeros(2 * n)])])
    b = np.concatenate([pc, -pc, [1.0, float(xi)]])
    c = np.concatenate([zc, np.zeros(3 * n)])
    # crash basis: all p, the l of the heaviest-weight entry, its two slacks,
    # and s for every other entry (a nondegenerate-feasible vertex at p = pbar)
    k = int(np.argmax(wc))
    basis = list(range(n)) + [n + k, 2 * n + k, 3 * n + k] + \
        [2 * n + i for i in range(n) if i != k]
    # simplex() flips rows with negative rhs, so apply the same flip here
    try:
        res = simplex(c, A, b, basis=np.array(basis))
    except NumericalFailure:
        # the crash basis can be badly conditioned; start over from phase one
        res = simplex(c, A, b)
    p = np.zeros(S)
    p[idx] = res.x[:n]
    return float(zc @ res.x[:n]), p


def brute_force_response(z, pbar, w, xi_grid, support=None):
    """lp_worst_case evaluated on every budget of a grid."""
    return np.array([lp_worst_case(z, pbar, w, x, support)[0] for x in xi_grid])


def grid_worst_case(z, pbar, w, xi, step=1e-3):
    """Exhaustive search over a grid on the 3-simplex (S = 3 only)."""
    z = np.asarray(z, float)
    pbar = np.asarray(pbar, float)
    w = np.broadcast_to(np.asarray(w, float), z.shape)
    if z.shape != (3,):
        raise ValueError("grid search is implemented for S = 3")
    k = int(round(1.0 / step))
    a, b = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    ok = a + b <= k
    P = np.stack([a[ok], b[ok], k - a[ok] - b[ok]], axis=1) / k
    P = np.vstack([P, pbar])  # the nominal keeps the search nonempty
    dist = np.abs(P - pbar) @ w
    feas = dist <= xi + 1e-12
    return float((P[feas] @ z).min())


# ---------------------------------------------------------------------------
# s-rectangular LPs


def _state_data(model, amb, v, s):
    """Per-action (z, pbar, w) restricted to the support if configured."""
    out = []
    W = amb.weight_matrix(model)
    S = model.n_states
    for a in range(model.n_actions[s]):
        r = model.state_ptr[s] + a
        cols, p, rw = model.row(s, a)
        wr = W[r] if W.shape[0] > 1 else W[0]
        z = model.discount * np.asarray(v, float)
        pb = np.zeros(S)
        z = z.copy()
        z[cols] = rw + model.discount * v[cols]
        pb[cols] = p
        idx = np.flatnonzero(pb > 0) if amb.support_restricted else np.arange(S)
        out.append((z[idx], pb[idx], wr[idx]))
    return out


def lp_s_value(data, kappa):
    """Optimal value of the s-rectangular dual LP for per-action (z, pbar, w).

    max  sum_a (x_a + pbar_a^T (yn_a - yp_a)) - kappa lam
    s.t. 1^T d = 1,  -yp_a + yn_a + x_a 1 <= d_a z_a,  yp_a + yn_a <= lam w_a,
         d, yp, yn, lam >= 0,  x free.
    Returns (value, d).
    """
    A = len(data)
    sizes = [len(z) for z, _, _ in data]
    N = sum(sizes)
    # columns: d (A), x+ (A), x- (A), lam (1), yp (N), yn (N)
    nd, nx, nl = 0, A, 3 * A
    nyp, nyn = 3 * A + 1, 3 * A + 1 + N
    ncol = 3 * A + 1 + 2 * N
    c = np.zeros(ncol)
    c[nx:nx + A] = -1.0
    c[nx + A:nx + 2 * A] = 1.0
    c[nl] = kappa
    A_ub = np.zeros((2 * N, ncol))
    off = 0
    for a, (z, pb, w) in enumerate(data):
        for i in range(len(z)):
            e = off + i
            c[nyp + e] = pb[i]
            c[nyn + e] = -pb[i]
            A_ub[e, nyp + e] = -1.0
            A_ub[e, nyn + e] = 1.0
            A_ub[e, nx + a] = 1.0
            A_ub[e, nx + A + a] = -1.0
            A_ub[e, nd + a] = -z[i]
            A_ub[N + e, nyp + e] = 1.0
            A_ub[N + e, nyn + e] = 1.0
            A_ub[N + e, nl] = -w[i]
        off += len(z)
    A_eq = np.zeros((1, ncol))
    A_eq[0, :A] = 1.0
    res = LpProblem(c, A_eq, np.ones(1), A_ub, np.zeros(2 * N)).solve()
    return -res.value, res.x[:A]


def lp_s_bellman(model, amb, v, s):
    """(L v)_s of an s-rectangular model computed by the dual LP."""
    if amb.kind != "s":
        raise ModelError("lp_s_bellman needs an s-rectangular configuration")
    return lp_s_value(_state_data(model, amb, np.asarray(v, float), s), amb.budgets[s])[0]


def lp_policy_value(data, pi, kappa):
    """min sum_a pi_a z_a^T p_a with |p_a - pbar_a| <= theta_a, sum w_a^T theta_a <= kappa."""
    A = len(data)
    sizes = [len(z) for z, _, _ in data]
    N = sum(sizes)
    # columns: p (N), theta (N)
    c = np.zeros(2 * N)
    A_eq = np.zeros((A, 2 * N))
    A_ub = np.zeros((2 * N + 1, 2 * N))
    b_ub = np.zeros(2 * N + 1)
    off = 0
    for a, (z, pb, w) in enumerate(data):
        n = len(z)
        sl = slice(off, off + n)
        c[sl] = pi[a] * z
        A_eq[a, sl] = 1.0
        for i in range(n):
            e = off + i
            A_ub[e, e] = 1.0
            A_ub[e, N + e] = -1.0
            b_ub[e] = pb[i]
            A_ub[N + e, e] = -1.0
            A_ub[N + e, N + e] = -1.0
            b_ub[N + e] = -pb[i]
        A_ub[2 * N, N + off:N + off + n] = w
        off += n
    b_ub[2 * N] = kappa
    return LpProblem(c, A_eq, np.ones(A), A_ub, b_ub).solve().value


def lp_s_bellman_policy(model, amb, v, pi_s, s):
    if amb.kind != "s":
        raise ModelError("lp_s_bellman_policy needs an s-rectangular configuration")
    return lp_policy_value(_state_data(model, amb, np.asarray(v, float), s),
                           np.asarray(pi_s, float), amb.budgets[s])


def lp_sa_bellman(model, amb, v, s):
    """(L v)_s of an sa-rectangular model, one LP per action."""
    if amb.kind != "sa":
        raise ModelError("lp_sa_bellman needs an sa-rectangular configuration")
    best = -np.inf
    for a, (z, pb, w) in enumerate(_state_data(model, amb, np.asarray(v, float), s)):
        best = max(best, lp_worst_case(z, pb, w, amb.budgets[model.state_ptr[s] + a])[0])
    return best


def lp_bellman(model, amb, v, states=None):
    """Optimality operator through the LP oracle for the listed states."""
    states = range(model.n_states) if states is None else states
    f = lp_sa_bellman if amb.kind == "sa" else lp_s_bellman
    return np.array([f(model, amb, v, s) for s in states])
