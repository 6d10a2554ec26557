"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation and are used when the
compiled extension is unavailable (or disabled via ``IMPATIENTQ_PURE=1``).
"""
from __future__ import annotations

import heapq
import math

import numpy as np

# rescale the running sums once their magnitude passes this
RESCALE_AT = 1e200


def jump_coefficients(k, lam1, lam2, mu1, mu2, x):
    """Nonzero entries of A_1(x), A_2(x) and their x-derivatives.

    Returns arrays shaped ``(m, k)`` / ``(m, k-1)`` for ``m = len(x)``:
    ``d1, u1`` (diagonal and superdiagonal of A_1), ``d2, l2`` (diagonal and
    subdiagonal of A_2) and the matching derivative arrays.
    ``u1[:, i]`` sits at (i, i+1); ``l2[:, i]`` sits at (i+1, i).
    Object arrays (multiprecision scalars) are kept as they are.
    """
    x = np.asarray(x)
    kind = object if x.dtype == object else float
    x = x.astype(kind)[:, None]
    i = np.arange(k).astype(kind)[None, :]
    # class-1 admission leaves (i+1) class-1 and (k-1-i) class-2 servers busy
    a = (i + 1) * mu1
    b = (k - 1 - i) * mu2
    den1 = x + a + b
    d1 = lam1 * (x + b) / den1
    dd1 = lam1 * a / den1 ** 2
    u1 = -lam1 * b[:, :-1] / den1[:, :-1]
    du1 = lam1 * b[:, :-1] / den1[:, :-1] ** 2
    # class-2 admission leaves i class-1 and (k-i) class-2 servers busy
    c = i * mu1
    e = (k - i) * mu2
    den2 = x + c + e
    d2 = lam2 * (x + c) / den2
    dd2 = lam2 * e / den2 ** 2
    r = i[:, 1:]
    l2 = -lam2 * r * mu1 / den2[:, 1:]
    dl2 = lam2 * r * mu1 / den2[:, 1:] ** 2
    return d1, u1, d2, l2, dd1, du1, dd2, dl2


def _upper_apply(d, u, C):
    # (bidiagonal upper matrix) @ C for a batch; d: (m,k), u: (m,k-1), C: (m,k,k)
    out = d[:, :, None] * C
    out[:, :-1, :] += u[:, :, None] * C[:, 1:, :]
    return out


def _lower_apply(d, l, C):
    out = d[:, :, None] * C
    out[:, 1:, :] += l[:, :, None] * C[:, :-1, :]
    return out


def matrix_series(k, lam1, lam2, mu1, mu2, th1, th2, s, tol, max_diag, min_diag=0):
    """Path sums over the lattice points with i+j >= 1, by anti-diagonals.

    The origin term is left to the caller, so light-load results keep their
    relative accuracy.  Returns ``(sums, mags, n_used, tail, log_scale,
    converged)``.  ``sums`` stacks sum C, sum C/x, sum C/x^2, sum C' and
    sum C'/x; ``mags`` stacks the entrywise sums of |C| and |C'|, the scale
    of the rounding error in each entry.  True values are ``exp(log_scale)``
    times the stored ones.
    """
    C_prev = np.eye(k)[None, :, :].copy()
    Cp_prev = np.zeros((1, k, k))
    x_prev = np.array([s], dtype=float)
    # path sums only; the caller adds the boundary term D(s) = I + Q/s
    S0 = np.zeros((k, k))
    S1 = np.zeros((k, k))
    S2 = np.zeros((k, k))
    T0 = np.zeros((k, k))
    T1 = np.zeros((k, k))
    mags = np.zeros((2, k, k))
    tot_c = 0.0
    tot_p = 0.0
    m_c_prev = float(k)
    m_p_prev = 0.0
    log_scale = 0.0
    tail = 0.0
    converged = False
    n = 0
    while n < max_diag:
        n += 1
        d1, u1, d2, l2, dd1, du1, dd2, dl2 = jump_coefficients(k, lam1, lam2, mu1, mu2, x_prev)
        xp = x_prev[:, None]
        # H = A/x and H' = A'/x - A/x^2
        h1d, h1u, h2d, h2l = d1 / xp, u1 / xp, d2 / xp, l2 / xp
        g1d = dd1 / xp - d1 / xp ** 2
        g1u = du1 / xp - u1 / xp ** 2
        g2d = dd2 / xp - d2 / xp ** 2
        g2l = dl2 / xp - l2 / xp ** 2
        X1 = _upper_apply(h1d, h1u, C_prev)
        X2 = _lower_apply(h2d, h2l, C_prev)
        Y1 = _upper_apply(h1d, h1u, Cp_prev) + _upper_apply(g1d, g1u, C_prev)
        Y2 = _lower_apply(h2d, h2l, Cp_prev) + _lower_apply(g2d, g2l, C_prev)
        C_new = np.zeros((n + 1, k, k))
        Cp_new = np.zeros((n + 1, k, k))
        # i counts class-1 steps: H_1 moves (i-1, j) -> (i, j), H_2 moves (i, j-1) -> (i, j)
        C_new[1:] += X1
        C_new[:-1] += X2
        Cp_new[1:] += Y1
        Cp_new[:-1] += Y2
        idx = np.arange(n + 1, dtype=float)
        x_new = s + idx * th1 + (n - idx) * th2
        w1 = (1.0 / x_new)[:, None, None]
        S0 += C_new.sum(axis=0)
        S1 += (C_new * w1).sum(axis=0)
        S2 += (C_new * w1 * w1).sum(axis=0)
        T0 += Cp_new.sum(axis=0)
        T1 += (Cp_new * w1).sum(axis=0)
        abs_c, abs_p = np.abs(C_new), np.abs(Cp_new)
        mags[0] += abs_c.sum(axis=0)
        mags[1] += abs_p.sum(axis=0)
        m_c = float(abs_c.sum())
        m_p = float(abs_p.sum())
        tot_c += m_c
        tot_p += m_p
        if tot_c > RESCALE_AT or tot_p > RESCALE_AT:
            f = 1.0 / max(tot_c, tot_p)
            C_new *= f
            Cp_new *= f
            S0 *= f
            S1 *= f
            S2 *= f
            T0 *= f
            T1 *= f
            mags *= f
            tot_c *= f
            tot_p *= f
            m_c *= f
            m_p *= f
            m_c_prev *= f
            m_p_prev *= f
            log_scale -= math.log(f)
        C_prev, Cp_prev, x_prev = C_new, Cp_new, x_new
        if n >= min_diag:
            stop, tail = stop_rule(m_c, m_c_prev, tot_c, m_p, m_p_prev, tot_p, tol)
            if stop:
                converged = True
                break
        m_c_prev, m_p_prev = m_c, m_p
    return np.stack([S0, S1, S2, T0, T1]), mags, n, tail, log_scale, converged


def stop_rule(m_c, m_c_prev, tot_c, m_p, m_p_prev, tot_p, tol):
    """Relative diagonal size below tol on a decreasing stretch; geometric tail."""
    tail = 0.0
    for m, m_prev, tot in ((m_c, m_c_prev, tot_c), (m_p, m_p_prev, tot_p)):
        if m == 0.0:
            continue
        if tot == 0.0 or m > tol * tot or m_prev == 0.0 or m >= m_prev:
            return False, 0.0
        r = m / m_prev
        tail = max(tail, m * r / (1.0 - r) / tot)
    return True, tail


def fcfs_waits(t, svc, pat, k):
    """Virtual waiting time seen by each arrival of a k-server FCFS queue.

    Customers whose patience is shorter than the wait abandon and never
    occupy a server.  Returns ``(wait, served)``.
    """
    n = len(t)
    wait = np.empty(n)
    served = np.zeros(n, dtype=np.uint8)
    free = [0.0] * k
    heapq.heapify(free)
    t = t.tolist()
    svc = svc.tolist()
    pat = pat.tolist()
    for m in range(n):
        tm = t[m]
        w = free[0] - tm
        if w < 0.0:
            w = 0.0
        wait[m] = w
        if pat[m] > w:
            served[m] = 1
            heapq.heapreplace(free, tm + w + svc[m])
    return wait, served


# --- double-double variant --------------------------------------------------
# Pairs (hi, lo) of float arrays; error-free transformations after Dekker and
# Knuth.  numpy has no fused multiply-add, hence the splitting product.

_SPLIT = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    t = _SPLIT * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def dd_add(a, b):
    s, e = _two_sum(a[0], b[0])
    t, f = _two_sum(a[1], b[1])
    s, e = _quick(s, e + t)
    return _quick(s, e + f)


def dd_neg(a):
    return -a[0], -a[1]


def dd_mul(a, b):
    p, e = _two_prod(a[0], b[0])
    return _quick(p, e + (a[0] * b[1] + a[1] * b[0]))


def dd_div(a, b):
    q1 = a[0] / b[0]
    r = dd_add(a, dd_neg(dd_mul(b, (q1, 0.0 * q1))))
    q2 = r[0] / b[0]
    r = dd_add(r, dd_neg(dd_mul(b, (q2, 0.0 * q2))))
    q3 = r[0] / b[0]
    return dd_add(_quick(q1, q2), (q3, 0.0 * q3))


def _dd(a):
    a = np.asarray(a, dtype=float)
    return a, np.zeros_like(a)


def _dd_coefficients(k, lam1, lam2, mu1, mu2, x):
    """H_i = A_i/x and H_i' entries in double-double; ``x`` is a dd pair of (m,) arrays."""
    m = x[0].shape[0]
    x = (np.repeat(x[0][:, None], k, axis=1), np.repeat(x[1][:, None], k, axis=1))
    i = np.broadcast_to(np.arange(k, dtype=float)[None, :], (m, k))
    a = _two_prod(i + 1.0, np.full((m, k), mu1))
    b = _two_prod(k - 1.0 - i, np.full((m, k), mu2))
    c = _two_prod(i, np.full((m, k), mu1))
    e = _two_prod(k - i, np.full((m, k), mu2))
    l1 = _dd(np.full((m, k), lam1))
    l2 = _dd(np.full((m, k), lam2))
    out = []
    for lam, den_parts, num_diag, num_off, num_dd in (
            (l1, (a, b), b, b, a), (l2, (c, e), c, c, e)):
        den = dd_add(dd_add(x, den_parts[0]), den_parts[1])
        dx = dd_mul(den, x)
        sq = dd_mul(dd_mul(den, den), x)
        hd = dd_div(dd_mul(lam, dd_add(x, num_diag)), dx)
        ho = dd_neg(dd_div(dd_mul(lam, num_off), dx))
        gd = dd_add(dd_div(dd_mul(lam, num_dd), sq), dd_neg(dd_div(hd, x)))
        go = dd_add(dd_div(dd_mul(lam, num_off), sq), dd_neg(dd_div(ho, x)))
        out.append((hd, ho, gd, go))
    (h1d, h1u, g1d, g1u), (h2d, h2l, g2d, g2l) = out
    # superdiagonal of A_1 uses rows 0..k-2, subdiagonal of A_2 rows 1..k-1
    cut = lambda v, sl: (v[0][:, sl], v[1][:, sl])
    up, lo = slice(0, k - 1), slice(1, k)
    return (h1d, cut(h1u, up), h2d, cut(h2l, lo),
            g1d, cut(g1u, up), g2d, cut(g2l, lo))


def _dd_bidiag(d, off, C, upper):
    # batched (bidiagonal) @ C in double-double
    out = dd_mul((d[0][:, :, None], d[1][:, :, None]), C)
    out = [out[0].copy(), out[1].copy()]
    if C[0].shape[1] > 1:
        o = (off[0][:, :, None], off[1][:, :, None])
        if upper:
            part = dd_mul(o, (C[0][:, 1:, :], C[1][:, 1:, :]))
            tgt = np.s_[:, :-1, :]
        else:
            part = dd_mul(o, (C[0][:, :-1, :], C[1][:, :-1, :]))
            tgt = np.s_[:, 1:, :]
        s = dd_add((out[0][tgt], out[1][tgt]), part)
        out[0][tgt], out[1][tgt] = s
    return out[0], out[1]


def _dd_sum_rows(t):
    # pairwise reduction over the leading axis
    hi, lo = t
    while hi.shape[0] > 1:
        if hi.shape[0] % 2:
            hi = np.concatenate([hi, np.zeros_like(hi[:1])])
            lo = np.concatenate([lo, np.zeros_like(lo[:1])])
        h = hi.shape[0] // 2
        hi, lo = dd_add((hi[:h], lo[:h]), (hi[h:], lo[h:]))
    return hi[0], lo[0]


def _dd_shift_add(n, top, bottom, shape):
    # new diagonal: entries 1..n from ``top`` plus entries 0..n-1 from ``bottom``
    hi = np.zeros(shape)
    lo = np.zeros(shape)
    hi[1:], lo[1:] = top
    s = dd_add((hi[:-1], lo[:-1]), bottom)
    hi[:-1], lo[:-1] = s
    return hi, lo


def matrix_series_dd(k, lam1, lam2, mu1, mu2, th1, th2, s, tol, max_diag, min_diag=0):
    """Double-double path sums; same contract as the compiled ``matrix_series_dd``."""
    eye = np.eye(k)
    C = (eye[None].copy(), np.zeros((1, k, k)))
    P = (np.zeros((1, k, k)), np.zeros((1, k, k)))
    sums = np.zeros((5, k, k, 2))
    mags = np.zeros((2, k, k))
    tot_c, tot_p = 0.0, 0.0
    m_c_prev, m_p_prev = float(k), 0.0
    exp2 = 0
    tail = 0.0
    converged = False
    n = 0

    def abscissa(idx, m):
        x = dd_add(_dd(s), _two_prod(idx, np.full(idx.shape, th1)))
        return dd_add(x, _two_prod(m - idx, np.full(idx.shape, th2)))

    while n < max_diag:
        n += 1
        idx = np.arange(n, dtype=float)
        h1d, h1u, h2d, h2l, g1d, g1u, g2d, g2l = _dd_coefficients(
            k, lam1, lam2, mu1, mu2, abscissa(idx, n - 1.0))
        X1 = _dd_bidiag(h1d, h1u, C, True)
        X2 = _dd_bidiag(h2d, h2l, C, False)
        Y1 = dd_add(_dd_bidiag(h1d, h1u, P, True), _dd_bidiag(g1d, g1u, C, True))
        Y2 = dd_add(_dd_bidiag(h2d, h2l, P, False), _dd_bidiag(g2d, g2l, C, False))
        shape = (n + 1, k, k)
        C = _dd_shift_add(n, X1, X2, shape)
        P = _dd_shift_add(n, Y1, Y2, shape)
        w = dd_div(_dd(np.ones(n + 1)), abscissa(np.arange(n + 1, dtype=float), float(n)))
        w = (w[0][:, None, None], w[1][:, None, None])
        Cw = dd_mul(C, w)
        terms = (C, Cw, dd_mul(Cw, w), P, dd_mul(P, w))
        for j, t in enumerate(terms):
            acc = dd_add((sums[j, :, :, 0], sums[j, :, :, 1]), _dd_sum_rows(t))
            sums[j, :, :, 0], sums[j, :, :, 1] = acc
        abs_c, abs_p = np.abs(C[0]), np.abs(P[0])
        mags[0] += abs_c.sum(axis=0)
        mags[1] += abs_p.sum(axis=0)
        m_c = float(abs_c.sum())
        m_p = float(abs_p.sum())
        tot_c += m_c
        tot_p += m_p
        if tot_c > RESCALE_AT or tot_p > RESCALE_AT:
            ex = math.frexp(max(tot_c, tot_p))[1]
            f = math.ldexp(1.0, -ex)
            C = (C[0] * f, C[1] * f)
            P = (P[0] * f, P[1] * f)
            sums *= f
            mags *= f
            tot_c *= f
            tot_p *= f
            m_c *= f
            m_p *= f
            m_c_prev *= f
            m_p_prev *= f
            exp2 += ex
        if n >= min_diag:
            stop, tail = stop_rule(m_c, m_c_prev, tot_c, m_p, m_p_prev, tot_p, tol)
            if stop:
                converged = True
                break
        m_c_prev, m_p_prev = m_c, m_p
    return sums, mags, n, tail, exp2, converged
