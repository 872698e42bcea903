"""Compiled numeric kernels shared by the operator modules.

Everything here works on flat numpy arrays so that the same code serves the
single-call Python API and the whole-model Jacobi sweeps.

A traced response is stored as
  xi[0..T], q[0..T]    breakpoints and values (xi[0] = 0)
  donor, recv, kind    per segment; kind 1 = C1 pair, 2 = C2 pair
  mass, slope          mass moved over the segment and its slope
n_full counts the leading segments that were traced to their end; only the
last segment of an early-terminated trace can be partial.
"""
import numpy as np
from numba import njit, prange
from numba.typed import List

TIE_RTOL = 1e-12
BREAK_RTOL = 1e-12


@njit(cache=True)
def nondominated(z, w):
    # lexicographic order on (z, w, index) via two stable sorts
    o1 = np.argsort(w, kind="mergesort")
    o2 = np.argsort(z[o1], kind="mergesort")
    order = o1[o2]
    out = np.empty(z.shape[0], np.int64)
    m = 0
    minw = np.inf
    for k in range(order.shape[0]):
        i = order[k]
        if w[i] < minw:
            out[m] = i
            m += 1
            minw = w[i]
    return out[:m]


@njit(cache=True)
def trace(z, pbar, w, limit, prune):
    n = z.shape[0]
    if prune:
        rec = nondominated(z, w)
        donors = np.empty(n, np.int64)
        ndon = 0
        for j in range(n):
            if pbar[j] > 0.0:
                donors[ndon] = j
                ndon += 1
    else:
        rec = np.arange(n)
        donors = np.arange(n)
        ndon = n
    nr = rec.shape[0]
    cap = nr * ndon + nr * nr
    cs = np.empty(cap)
    ci = np.empty(cap, np.int64)
    cj = np.empty(cap, np.int64)
    ck = np.empty(cap, np.int8)
    m = 0
    for a in range(nr):
        i = rec[a]
        zi = z[i]
        wi = w[i]
        for b in range(ndon):
            j = donors[b]
            if z[j] > zi:
                cs[m] = (zi - z[j]) / (wi + w[j])
                ci[m] = i
                cj[m] = j
                ck[m] = 1
                m += 1
        for b in range(nr):
            j = rec[b]
            if wi > w[j] and zi < z[j]:
                cs[m] = (zi - z[j]) / (wi - w[j])
                ci[m] = i
                cj[m] = j
                ck[m] = 2
                m += 1
    order = np.argsort(cs[:m], kind="mergesort")

    p = pbar.copy()
    q = 0.0
    for k in range(n):
        q += pbar[k] * z[k]
    xi_out = np.empty(m + 1)
    q_out = np.empty(m + 1)
    sd = np.empty(m, np.int64)
    sr = np.empty(m, np.int64)
    sk = np.empty(m, np.int8)
    smass = np.empty(m)
    sslope = np.empty(m)
    xi_out[0] = 0.0
    q_out[0] = q
    T = 0
    n_full = 0
    xi = 0.0
    stop = limit <= 0.0
    pend = np.empty(m, np.int64)
    g = 0
    while g < m and not stop:
        s0 = cs[order[g]]
        tol = TIE_RTOL * max(1.0, abs(s0))
        h = g + 1
        while h < m and cs[order[h]] - s0 <= tol:
            h += 1
        npend = h - g
        for t in range(npend):
            pend[t] = order[g + t]
        while npend > 0 and not stop:
            moved = False
            keep = 0
            for t in range(npend):
                k = pend[t]
                i = ci[k]
                j = cj[k]
                if ck[k] == 1:
                    ok = p[i] >= pbar[i] and p[j] <= pbar[j]
                    mass = p[j]
                    dxi = mass * (w[i] + w[j])
                else:
                    ok = p[i] >= pbar[i] and p[j] >= pbar[j]
                    mass = p[j] - pbar[j]
                    dxi = mass * (w[i] - w[j])
                if not ok:
                    pend[keep] = k
                    keep += 1
                    continue
                if dxi <= 0.0:
                    continue
                full = True
                if xi + dxi >= limit:
                    stop = True
                    if xi + dxi > limit:
                        full = False
                        mass = mass * ((limit - xi) / dxi)
                        dxi = limit - xi
                        if dxi <= 0.0:
                            break
                p[i] += mass
                if full:
                    if ck[k] == 1:
                        p[j] = 0.0
                    else:
                        p[j] = pbar[j]
                    n_full += 1
                else:
                    p[j] -= mass
                q += mass * (z[i] - z[j])
                xi = xi + dxi if full else limit
                xi_out[T + 1] = xi
                q_out[T + 1] = q
                sd[T] = j
                sr[T] = i
                sk[T] = ck[k]
                smass[T] = mass
                sslope[T] = cs[k]
                T += 1
                moved = True
                if stop:
                    break
            npend = keep
            if not moved:
                break
        g = h
    complete = not stop
    if complete:
        zmin = np.inf
        for k in range(n):
            if z[k] < zmin:
                zmin = z[k]
        if abs(q_out[T] - zmin) <= 1e-9 * (1.0 + abs(zmin)):
            q_out[T] = zmin
    return (xi_out[:T + 1].copy(), q_out[:T + 1].copy(), sd[:T].copy(), sr[:T].copy(),
            sk[:T].copy(), smass[:T].copy(), sslope[:T].copy(), p, complete, n_full)


@njit(cache=True)
def replay(pbar, xi, sd, sr, sk, smass, n_full, target):
    p = pbar.copy()
    T = sd.shape[0]
    for t in range(T):
        if target <= xi[t]:
            break
        if target >= xi[t + 1] and t < n_full:
            p[sr[t]] += smass[t]
            if sk[t] == 1:
                p[sd[t]] = 0.0
            else:
                p[sd[t]] = pbar[sd[t]]
        else:
            span = xi[t + 1] - xi[t]
            frac = min(1.0, (target - xi[t]) / span)
            mm = smass[t] * frac
            p[sr[t]] += mm
            p[sd[t]] -= mm
            break
    return p


@njit(cache=True)
def eval_q(xi, q, target):
    T = xi.shape[0] - 1
    if target >= xi[T]:
        return q[T]
    k = np.searchsorted(xi, target, side="right") - 1
    frac = (target - xi[k]) / (xi[k + 1] - xi[k])
    return q[k] + (q[k + 1] - q[k]) * frac


@njit(cache=True)
def inverse_q(xi, q, u):
    T = xi.shape[0] - 1
    if u >= q[0]:
        return 0.0
    if u < q[T]:
        return np.inf
    if u == q[T]:
        return xi[T]
    # q strictly decreasing: find k with q[k] > u >= q[k+1]
    lo = 0
    hi = T
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if q[mid] > u:
            lo = mid
        else:
            hi = mid
    frac = (q[lo] - u) / (q[lo] - q[hi])
    return xi[lo] + frac * (xi[hi] - xi[lo])


@njit(cache=True)
def _total_inverse(xi_all, q_all, boff, u):
    s = 0.0
    for a in range(boff.shape[0] - 1):
        s += inverse_q(xi_all[boff[a]:boff[a + 1]], q_all[boff[a]:boff[a + 1]], u)
    return s


@njit(cache=True)
def bisect_exact_flat(xi_all, q_all, boff, kappa):
    K = np.unique(q_all)
    if _total_inverse(xi_all, q_all, boff, K[0]) <= kappa:
        return K[0]
    lo = 0
    hi = K.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _total_inverse(xi_all, q_all, boff, K[mid]) <= kappa:
            hi = mid
        else:
            lo = mid
    u_min = K[lo]
    u_max = K[hi]
    s_min = _total_inverse(xi_all, q_all, boff, u_min)
    s_max = _total_inverse(xi_all, q_all, boff, u_max)
    if not np.isfinite(s_min) or s_max == s_min:
        return u_max
    alpha = (kappa - s_min) / (s_max - s_min)
    return (1.0 - alpha) * u_min + alpha * u_max


@njit(cache=True)
def bisect_eps_flat(xi_all, q_all, boff, kappa, eps, u_min, u_max):
    while u_max - u_min > 2.0 * eps:
        u = 0.5 * (u_min + u_max)
        if u <= u_min or u >= u_max:
            break
        if _total_inverse(xi_all, q_all, boff, u) <= kappa:
            u_max = u
        else:
            u_min = u
    return 0.5 * (u_min + u_max)


@njit(cache=True)
def recover_flat(xi_all, q_all, boff, slope_all, kappa, u, tol):
    """Greedy action distribution for the bisection value u.

    Returns (d, xi_star, in_c, case, lam); case 0 is the zero-budget shortcut,
    1 a deterministic saturated action, 2 the slope-weighted mix.
    """
    A = boff.shape[0] - 1
    d = np.zeros(A)
    xs = np.zeros(A)
    in_c = np.zeros(A, np.bool_)
    for a in range(A):
        xa = xi_all[boff[a]:boff[a + 1]]
        qa = q_all[boff[a]:boff[a + 1]]
        x = inverse_q(xa, qa, u)
        if not np.isfinite(x):
            x = xa[xa.shape[0] - 1]
        xs[a] = x
        in_c[a] = abs(eval_q(xa, qa, x) - u) <= tol
    if kappa <= 0.0:
        best = 0
        for a in range(A):
            if q_all[boff[a]] > q_all[boff[best]]:
                best = a
        d[best] = 1.0
        return d, xs, in_c, 0, 0.0
    for a in range(A):
        if in_c[a] and q_all[boff[a + 1] - 1] >= u - tol:
            d[a] = 1.0
            return d, xs, in_c, 1, 0.0
    total = 0.0
    for a in range(A):
        if in_c[a]:
            qa = q_all[boff[a]:boff[a + 1]]
            cnt = 0
            for t in range(qa.shape[0]):
                if qa[t] >= u - tol:
                    cnt += 1
            k = cnt - 1
            f = slope_all[boff[a] - a + k]
            d[a] = -1.0 / f
            total += d[a]
    for a in range(A):
        d[a] /= total
    return d, xs, in_c, 2, 1.0 / total


@njit(cache=True)
def _alloc_at(xi_all, boff, slope_all, pi, lam):
    A = boff.shape[0] - 1
    ks = np.zeros(A, np.int64)
    s = 0.0
    for a in range(A):
        if pi[a] <= 0.0:
            continue
        lo = boff[a] - a
        T = boff[a + 1] - boff[a] - 1
        k = 0
        while k < T and pi[a] * slope_all[lo + k] < -lam:
            k += 1
        ks[a] = k
        s += xi_all[boff[a] + k]
    return ks, s


@njit(cache=True)
def policy_update_flat(xi_all, q_all, boff, slope_all, pi, kappa):
    """Exact min of sum_a pi_a q_a(xi_a) over xi >= 0, sum xi <= kappa.

    Maximizes the concave piecewise-affine dual over its finite breakpoint
    set; returns the value and a primal allocation.
    """
    A = boff.shape[0] - 1
    n_c = 1
    for a in range(A):
        if pi[a] > 0.0:
            n_c += boff[a + 1] - boff[a] - 1
    cand = np.empty(n_c)
    cand[0] = 0.0
    c = 1
    for a in range(A):
        if pi[a] > 0.0:
            lo = boff[a] - a
            for t in range(boff[a + 1] - boff[a] - 1):
                cand[c] = -pi[a] * slope_all[lo + t]
                c += 1
    lam_set = np.unique(cand)
    # smallest lambda whose strictly-steeper allocation fits in the budget
    ks, s = _alloc_at(xi_all, boff, slope_all, pi, lam_set[0])
    if s <= kappa:
        i_star = 0
    else:
        lo = 0
        hi = lam_set.shape[0] - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            ks, s = _alloc_at(xi_all, boff, slope_all, pi, lam_set[mid])
            if s <= kappa:
                hi = mid
            else:
                lo = mid
        i_star = hi
    lam = lam_set[i_star]
    ks, s = _alloc_at(xi_all, boff, slope_all, pi, lam)
    value = 0.0
    alloc = np.zeros(A)
    for a in range(A):
        if pi[a] > 0.0:
            alloc[a] = xi_all[boff[a] + ks[a]]
            value += pi[a] * q_all[boff[a] + ks[a]] + lam * alloc[a]
    value -= lam * kappa
    # spread the leftover budget over segments whose scaled slope equals -lam
    left = kappa - s
    if lam > 0.0:
        tol = TIE_RTOL * max(1.0, lam) * 16.0
        for a in range(A):
            if left <= 0.0:
                break
            if pi[a] <= 0.0:
                continue
            T = boff[a + 1] - boff[a] - 1
            k = ks[a]
            while k < T and left > 0.0 and abs(pi[a] * slope_all[boff[a] - a + k] + lam) <= tol:
                seg = xi_all[boff[a] + k + 1] - xi_all[boff[a] + k]
                take = min(seg, left)
                alloc[a] += take
                left -= take
                k += 1
    return value, alloc


# ---------------------------------------------------------------------------
# whole-model sweeps


@njit(cache=True)
def gather(r, row_ptr, col, prob, rew, gamma, v, W, restricted):
    lo = row_ptr[r]
    hi = row_ptr[r + 1]
    wrow = W[r] if W.shape[0] > 1 else W[0]
    if restricted:
        m = 0
        for e in range(lo, hi):
            if prob[e] > 0.0:
                m += 1
        ent = np.empty(m, np.int64)
        z = np.empty(m)
        pb = np.empty(m)
        w = np.empty(m)
        m = 0
        for e in range(lo, hi):
            if prob[e] > 0.0:
                s2 = col[e]
                ent[m] = e
                z[m] = rew[e] + gamma * v[s2]
                pb[m] = prob[e]
                w[m] = wrow[s2]
                m += 1
        return ent, z, pb, w
    S = v.shape[0]
    z = gamma * v
    pb = np.zeros(S)
    for e in range(lo, hi):
        z[col[e]] = rew[e] + gamma * v[col[e]]
        pb[col[e]] = prob[e]
    return np.arange(S), z, pb, wrow.copy()


@njit(cache=True)
def _row_reward(r, row_ptr, col, rew, p, ent, restricted):
    # expected reward of the row under a (compact) distribution p
    acc = 0.0
    if restricted:
        for m in range(ent.shape[0]):
            acc += p[m] * rew[ent[m]]
    else:
        for e in range(row_ptr[r], row_ptr[r + 1]):
            acc += p[col[e]] * rew[e]
    return acc


@njit(cache=True, parallel=True)
def sweep_sa(state_ptr, row_ptr, col, prob, rew, gamma, v, budgets, W, restricted,
             pi, mode, out_v, out_act, nat_vals, nat_dense, nat_r):
    """sa-rectangular sweep.

    mode 0: optimality operator (out_v, out_act)
    mode 1: policy update for pi (out_v)
    mode 2: policy update plus nature's response written to nat_*
    """
    S = state_ptr.shape[0] - 1
    for s in prange(S):
        best = -np.inf
        best_a = 0
        acc = 0.0
        racc = 0.0
        for r in range(state_ptr[s], state_ptr[s + 1]):
            if mode != 0 and pi[r] <= 0.0:
                continue
            ent, z, pb, w = gather(r, row_ptr, col, prob, rew, gamma, v, W, restricted)
            res = trace(z, pb, w, budgets[r], True)
            qs = res[1]
            val = qs[qs.shape[0] - 1]
            if mode == 0:
                if val > best:
                    best = val
                    best_a = r - state_ptr[s]
            else:
                acc += pi[r] * val
                if mode == 2:
                    p = res[7]
                    racc += pi[r] * _row_reward(r, row_ptr, col, rew, p, ent, restricted)
                    if restricted:
                        for m in range(ent.shape[0]):
                            nat_vals[ent[m]] = pi[r] * p[m]
                    else:
                        for k in range(S):
                            nat_dense[s, k] += pi[r] * p[k]
        if mode == 0:
            out_v[s] = best
            out_act[s] = best_a
        else:
            out_v[s] = acc
            if mode == 2:
                nat_r[s] = racc


@njit(cache=True)
def _state_traces(s, state_ptr, row_ptr, col, prob, rew, gamma, v, W, restricted):
    r0 = state_ptr[s]
    A = state_ptr[s + 1] - r0
    xs = List()
    qs = List()
    sl = List()
    tr = List()
    ents = List()
    pbs = List()
    boff = np.zeros(A + 1, np.int64)
    for a in range(A):
        ent, z, pb, w = gather(r0 + a, row_ptr, col, prob, rew, gamma, v, W, restricted)
        res = trace(z, pb, w, np.inf, True)
        xs.append(res[0])
        qs.append(res[1])
        sl.append(res[6])
        tr.append((res[2], res[3], res[4], res[5], res[9]))
        ents.append(ent)
        pbs.append(pb)
        boff[a + 1] = boff[a] + res[0].shape[0]
    xi_all = np.empty(boff[A])
    q_all = np.empty(boff[A])
    slope_all = np.empty(boff[A] - A)
    for a in range(A):
        xi_all[boff[a]:boff[a + 1]] = xs[a]
        q_all[boff[a]:boff[a + 1]] = qs[a]
        slope_all[boff[a] - a:boff[a + 1] - a - 1] = sl[a]
    return xi_all, q_all, boff, slope_all, tr, ents, pbs


@njit(cache=True, parallel=True)
def sweep_s(state_ptr, row_ptr, col, prob, rew, gamma, v, budgets, W, restricted,
            pi, mode, tol, out_v, out_d, nat_vals, nat_dense, nat_r):
    """s-rectangular sweep; modes as in sweep_sa (mode 0 writes d* to out_d)."""
    S = state_ptr.shape[0] - 1
    for s in prange(S):
        r0 = state_ptr[s]
        A = state_ptr[s + 1] - r0
        xi_all, q_all, boff, slope_all, tr, ents, pbs = _state_traces(
            s, state_ptr, row_ptr, col, prob, rew, gamma, v, W, restricted)
        kappa = budgets[s]
        if mode == 0:
            u = bisect_exact_flat(xi_all, q_all, boff, kappa)
            d, xs, in_c, case, lam = recover_flat(xi_all, q_all, boff, slope_all, kappa, u, tol)
            out_v[s] = u
            for a in range(A):
                out_d[r0 + a] = d[a]
        else:
            pis = pi[r0:r0 + A].copy()
            val, alloc = policy_update_flat(xi_all, q_all, boff, slope_all, pis, kappa)
            out_v[s] = val
            if mode == 2:
                racc = 0.0
                for a in range(A):
                    if pis[a] <= 0.0:
                        continue
                    sd, sr, sk, smass, n_full = tr[a]
                    p = replay(pbs[a], xi_all[boff[a]:boff[a + 1]], sd, sr, sk, smass,
                               n_full, alloc[a])
                    ent = ents[a]
                    racc += pis[a] * _row_reward(r0 + a, row_ptr, col, rew, p, ent, restricted)
                    if restricted:
                        for m in range(ent.shape[0]):
                            nat_vals[ent[m]] = pis[a] * p[m]
                    else:
                        for k in range(S):
                            nat_dense[s, k] += pis[a] * p[k]
                nat_r[s] = racc


@njit(cache=True, parallel=True)
def sweep_nominal(state_ptr, row_ptr, col, prob, rew, gamma, v, out_v, out_act):
    S = state_ptr.shape[0] - 1
    for s in prange(S):
        best = -np.inf
        best_a = 0
        for r in range(state_ptr[s], state_ptr[s + 1]):
            acc = 0.0
            for e in range(row_ptr[r], row_ptr[r + 1]):
                acc += prob[e] * (rew[e] + gamma * v[col[e]])
            if acc > best:
                best = acc
                best_a = r - state_ptr[s]
        out_v[s] = best
        out_act[s] = best_a


@njit(cache=True)
def count_pairs(state_ptr, row_ptr, prob, restricted, S):
    """Number of homotopy calls and total traced entries of one sweep."""
    n = 0
    for r in range(row_ptr.shape[0] - 1):
        if restricted:
            for e in range(row_ptr[r], row_ptr[r + 1]):
                if prob[e] > 0.0:
                    n += 1
        else:
            n += S
    return row_ptr.shape[0] - 1, n
