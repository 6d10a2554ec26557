# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the anti-diagonal matrix series and the FCFS wait recursion."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, fma, frexp, ldexp, log

cnp.import_array()

cdef double RESCALE_AT = 1e200


cdef inline void _coeffs(int k, double lam1, double lam2, double mu1, double mu2, double x,
                         double[:] d1, double[:] u1, double[:] d2, double[:] l2,
                         double[:] g1d, double[:] g1u, double[:] g2d, double[:] g2l) noexcept nogil:
    # H = A/x and H' = A'/x - A/x^2 for the bidiagonal jump matrices
    cdef int i
    cdef double a, b, c, e, den1, den2, ad, au, bd, bl, x2 = x * x
    for i in range(k):
        a = (i + 1) * mu1
        b = (k - 1 - i) * mu2
        den1 = x + a + b
        ad = lam1 * (x + b) / den1
        d1[i] = ad / x
        g1d[i] = lam1 * a / (den1 * den1) / x - ad / x2
        if i < k - 1:
            au = -lam1 * b / den1
            u1[i] = au / x
            g1u[i] = lam1 * b / (den1 * den1) / x - au / x2
        c = i * mu1
        e = (k - i) * mu2
        den2 = x + c + e
        bd = lam2 * (x + c) / den2
        d2[i] = bd / x
        g2d[i] = lam2 * e / (den2 * den2) / x - bd / x2
        if i > 0:
            bl = -lam2 * i * mu1 / den2
            l2[i - 1] = bl / x
            g2l[i - 1] = lam2 * i * mu1 / (den2 * den2) / x - bl / x2


def matrix_series(int k, double lam1, double lam2, double mu1, double mu2,
                  double th1, double th2, double s, double tol, int max_diag,
                  int min_diag=0):
    """Compiled ``_pykernels.matrix_series``: path sums over i+j >= 1."""
    cdef int cap = 64
    prev_np = np.zeros((cap, k, k))
    prevp_np = np.zeros((cap, k, k))
    new_np = np.zeros((cap, k, k))
    newp_np = np.zeros((cap, k, k))
    cdef double[:, :, ::1] Cprev = prev_np
    cdef double[:, :, ::1] Pprev = prevp_np
    cdef double[:, :, ::1] Cnew = new_np
    cdef double[:, :, ::1] Pnew = newp_np
    cdef double[:, :, ::1] tmp
    # path sums only; the caller adds the boundary term D(s) = I + Q/s
    S0_np = np.zeros((k, k))
    S1_np = np.zeros((k, k))
    S2_np = np.zeros((k, k))
    T0_np = np.zeros((k, k))
    T1_np = np.zeros((k, k))
    cdef double[:, ::1] S0 = S0_np
    cdef double[:, ::1] S1 = S1_np
    cdef double[:, ::1] S2 = S2_np
    cdef double[:, ::1] T0 = T0_np
    cdef double[:, ::1] T1 = T1_np
    mags_np = np.zeros((2, k, k))
    cdef double[:, :, ::1] mags = mags_np
    cdef double[:] d1 = np.zeros(k), u1 = np.zeros(max(k - 1, 1))
    cdef double[:] d2 = np.zeros(k), l2 = np.zeros(max(k - 1, 1))
    cdef double[:] g1d = np.zeros(k), g1u = np.zeros(max(k - 1, 1))
    cdef double[:] g2d = np.zeros(k), g2l = np.zeros(max(k - 1, 1))
    cdef int n = 0, i, r, c, j
    cdef double x, w, v, vp, m_c, m_p, f
    cdef double tot_c = 0.0, tot_p = 0.0, m_c_prev = k, m_p_prev = 0.0
    cdef double log_scale = 0.0, tail = 0.0
    cdef bint converged = False
    for r in range(k):
        Cprev[0, r, r] = 1.0
    while n < max_diag:
        n += 1
        if n + 1 > cap:
            cap = 2 * cap
            grown = np.zeros((cap, k, k)); grown[:n] = prev_np[:n]; prev_np = grown
            grown = np.zeros((cap, k, k)); grown[:n] = prevp_np[:n]; prevp_np = grown
            new_np = np.zeros((cap, k, k))
            newp_np = np.zeros((cap, k, k))
            Cprev = prev_np
            Pprev = prevp_np
            Cnew = new_np
            Pnew = newp_np
        with nogil:
            for i in range(n + 1):
                for r in range(k):
                    for c in range(k):
                        Cnew[i, r, c] = 0.0
                        Pnew[i, r, c] = 0.0
            for i in range(n):
                # point (i, n-1-i) of the previous diagonal
                x = s + i * th1 + (n - 1 - i) * th2
                _coeffs(k, lam1, lam2, mu1, mu2, x, d1, u1, d2, l2, g1d, g1u, g2d, g2l)
                for r in range(k):
                    for c in range(k):
                        v = d1[r] * Cprev[i, r, c]
                        vp = d1[r] * Pprev[i, r, c] + g1d[r] * Cprev[i, r, c]
                        if r < k - 1:
                            v = v + u1[r] * Cprev[i, r + 1, c]
                            vp = vp + u1[r] * Pprev[i, r + 1, c] + g1u[r] * Cprev[i, r + 1, c]
                        Cnew[i + 1, r, c] += v
                        Pnew[i + 1, r, c] += vp
                        v = d2[r] * Cprev[i, r, c]
                        vp = d2[r] * Pprev[i, r, c] + g2d[r] * Cprev[i, r, c]
                        if r > 0:
                            v = v + l2[r - 1] * Cprev[i, r - 1, c]
                            vp = vp + l2[r - 1] * Pprev[i, r - 1, c] + g2l[r - 1] * Cprev[i, r - 1, c]
                        Cnew[i, r, c] += v
                        Pnew[i, r, c] += vp
            m_c = 0.0
            m_p = 0.0
            for i in range(n + 1):
                x = s + i * th1 + (n - i) * th2
                w = 1.0 / x
                for r in range(k):
                    for c in range(k):
                        v = Cnew[i, r, c]
                        vp = Pnew[i, r, c]
                        S0[r, c] += v
                        S1[r, c] += v * w
                        S2[r, c] += v * w * w
                        T0[r, c] += vp
                        T1[r, c] += vp * w
                        mags[0, r, c] += fabs(v)
                        mags[1, r, c] += fabs(vp)
                        m_c += fabs(v)
                        m_p += fabs(vp)
            tot_c += m_c
            tot_p += m_p
            if tot_c > RESCALE_AT or tot_p > RESCALE_AT:
                f = 1.0 / (tot_c if tot_c > tot_p else tot_p)
                for i in range(n + 1):
                    for r in range(k):
                        for c in range(k):
                            Cnew[i, r, c] *= f
                            Pnew[i, r, c] *= f
                for r in range(k):
                    for c in range(k):
                        S0[r, c] *= f
                        S1[r, c] *= f
                        S2[r, c] *= f
                        T0[r, c] *= f
                        T1[r, c] *= f
                        mags[0, r, c] *= f
                        mags[1, r, c] *= f
                tot_c *= f
                tot_p *= f
                m_c *= f
                m_p *= f
                m_c_prev *= f
                m_p_prev *= f
                log_scale -= log(f)
        tmp = Cprev; Cprev = Cnew; Cnew = tmp
        tmp = Pprev; Pprev = Pnew; Pnew = tmp
        prev_np, new_np = new_np, prev_np
        prevp_np, newp_np = newp_np, prevp_np
        if n >= min_diag:
            stop, tail = _stop_rule(m_c, m_c_prev, tot_c, m_p, m_p_prev, tot_p, tol)
            if stop:
                converged = True
                break
        m_c_prev = m_c
        m_p_prev = m_p
    sums = np.stack([S0_np, S1_np, S2_np, T0_np, T1_np])
    return sums, mags_np, n, tail, log_scale, bool(converged)


# --- double-double variant --------------------------------------------------
# Values are unevaluated sums hi + lo with |lo| <= ulp(hi)/2, giving roughly
# 32 significant digits.  Used when the boundary system is too ill-conditioned
# for plain doubles.

cdef struct dd:
    double hi
    double lo


cdef inline dd _quick(double a, double b) noexcept nogil:
    cdef dd r
    r.hi = a + b
    r.lo = b - (r.hi - a)
    return r


cdef inline dd _add(dd a, dd b) noexcept nogil:
    cdef double s, e, t, f, bb
    s = a.hi + b.hi
    bb = s - a.hi
    e = (a.hi - (s - bb)) + (b.hi - bb)
    t = a.lo + b.lo
    bb = t - a.lo
    f = (a.lo - (t - bb)) + (b.lo - bb)
    e += t
    cdef dd r = _quick(s, e)
    return _quick(r.hi, r.lo + f)


cdef inline dd _neg(dd a) noexcept nogil:
    cdef dd r
    r.hi = -a.hi
    r.lo = -a.lo
    return r


cdef inline dd _mul(dd a, dd b) noexcept nogil:
    cdef double p = a.hi * b.hi
    cdef double e = fma(a.hi, b.hi, -p)
    e += a.hi * b.lo + a.lo * b.hi
    return _quick(p, e)


cdef inline dd _div(dd a, dd b) noexcept nogil:
    cdef double q1 = a.hi / b.hi
    cdef dd r = _add(a, _neg(_mul(b, _d(q1))))
    cdef double q2 = r.hi / b.hi
    r = _add(r, _neg(_mul(b, _d(q2))))
    cdef double q3 = r.hi / b.hi
    r = _quick(q1, q2)
    return _add(r, _d(q3))


cdef inline dd _d(double a) noexcept nogil:
    cdef dd r
    r.hi = a
    r.lo = 0.0
    return r


cdef inline dd _scale(dd a, double f) noexcept nogil:
    # f is a power of two, so this is exact
    cdef dd r
    r.hi = a.hi * f
    r.lo = a.lo * f
    return r


cdef inline dd _ld(double[:, :, :, ::1] A, int i, int r, int c) noexcept nogil:
    cdef dd v
    v.hi = A[i, r, c, 0]
    v.lo = A[i, r, c, 1]
    return v


cdef inline void _st(double[:, :, :, ::1] A, int i, int r, int c, dd v) noexcept nogil:
    A[i, r, c, 0] = v.hi
    A[i, r, c, 1] = v.lo


cdef inline void _acc(double[:, :, :, ::1] A, int i, int r, int c, dd v) noexcept nogil:
    _st(A, i, r, c, _add(_ld(A, i, r, c), v))


cdef inline void _coeffs_dd(int k, double lam1, double lam2, double mu1, double mu2, dd x,
                            dd* h1d, dd* h1u, dd* h2d, dd* h2l,
                            dd* g1d, dd* g1u, dd* g2d, dd* g2l) noexcept nogil:
    cdef int i
    cdef dd a, b, c, e, den1, den2, sq, t, one = _d(1.0)
    for i in range(k):
        a = _mul(_d(i + 1.0), _d(mu1))
        b = _mul(_d(k - 1.0 - i), _d(mu2))
        den1 = _add(_add(x, a), b)
        sq = _mul(_mul(den1, den1), x)
        t = _div(_mul(_d(lam1), _add(x, b)), _mul(den1, x))
        h1d[i] = t
        g1d[i] = _add(_div(_mul(_d(lam1), a), sq), _neg(_div(t, x)))
        if i < k - 1:
            t = _neg(_div(_mul(_d(lam1), b), _mul(den1, x)))
            h1u[i] = t
            g1u[i] = _add(_div(_mul(_d(lam1), b), sq), _neg(_div(t, x)))
        c = _mul(_d(<double>i), _d(mu1))
        e = _mul(_d(<double>(k - i)), _d(mu2))
        den2 = _add(_add(x, c), e)
        sq = _mul(_mul(den2, den2), x)
        t = _div(_mul(_d(lam2), _add(x, c)), _mul(den2, x))
        h2d[i] = t
        g2d[i] = _add(_div(_mul(_d(lam2), e), sq), _neg(_div(t, x)))
        if i > 0:
            t = _neg(_div(_mul(_d(lam2), c), _mul(den2, x)))
            h2l[i - 1] = t
            g2l[i - 1] = _add(_div(_mul(_d(lam2), c), sq), _neg(_div(t, x)))


cdef inline dd _abscissa(double s, int i, double th1, int j, double th2) noexcept nogil:
    return _add(_add(_d(s), _mul(_d(<double>i), _d(th1))), _mul(_d(<double>j), _d(th2)))


def matrix_series_dd(int k, double lam1, double lam2, double mu1, double mu2,
                     double th1, double th2, double s, double tol, int max_diag,
                     int min_diag=0):
    """Double-double path sums.

    Returns ``(sums, mags, n, tail, exp2, converged)`` where ``sums`` has
    shape ``(5, k, k, 2)`` holding (hi, lo) parts of sum C_ij, sum C_ij/x,
    sum C_ij/x^2, sum C'_ij and sum C'_ij/x over the points with i+j >= 1,
    and ``mags`` the entrywise sums of |C| and |C'|, all scaled by 2**-exp2.
    """
    cdef int cap = 64
    prev_np = np.zeros((cap, k, k, 2))
    prevp_np = np.zeros((cap, k, k, 2))
    new_np = np.zeros((cap, k, k, 2))
    newp_np = np.zeros((cap, k, k, 2))
    sums_np = np.zeros((5, k, k, 2))
    mags_np = np.zeros((2, k, k))
    cdef double[:, :, ::1] M = mags_np
    cdef double[:, :, :, ::1] Cprev = prev_np
    cdef double[:, :, :, ::1] Pprev = prevp_np
    cdef double[:, :, :, ::1] Cnew = new_np
    cdef double[:, :, :, ::1] Pnew = newp_np
    cdef double[:, :, :, ::1] S = sums_np
    cdef double[:, :, :, ::1] tmp
    coef_np = np.zeros((8, k, 2))
    cdef double[:, :, ::1] coef = coef_np
    cdef dd* h1d = <dd*> &coef[0, 0, 0]
    cdef dd* h1u = <dd*> &coef[1, 0, 0]
    cdef dd* h2d = <dd*> &coef[2, 0, 0]
    cdef dd* h2l = <dd*> &coef[3, 0, 0]
    cdef dd* g1d = <dd*> &coef[4, 0, 0]
    cdef dd* g1u = <dd*> &coef[5, 0, 0]
    cdef dd* g2d = <dd*> &coef[6, 0, 0]
    cdef dd* g2l = <dd*> &coef[7, 0, 0]
    cdef int n = 0, i, r, c, ex
    cdef dd x, w, v, vp, cc, pc, zero = _d(0.0)
    cdef double m_c, m_p, f
    cdef double tot_c = 0.0, tot_p = 0.0, m_c_prev = k, m_p_prev = 0.0
    cdef double tail = 0.0
    cdef long exp2 = 0
    cdef bint converged = False
    for r in range(k):
        Cprev[0, r, r, 0] = 1.0
    while n < max_diag:
        n += 1
        if n + 1 > cap:
            cap = 2 * cap
            grown = np.zeros((cap, k, k, 2)); grown[:n] = prev_np[:n]; prev_np = grown
            grown = np.zeros((cap, k, k, 2)); grown[:n] = prevp_np[:n]; prevp_np = grown
            new_np = np.zeros((cap, k, k, 2))
            newp_np = np.zeros((cap, k, k, 2))
            Cprev = prev_np
            Pprev = prevp_np
            Cnew = new_np
            Pnew = newp_np
        with nogil:
            for i in range(n + 1):
                for r in range(k):
                    for c in range(k):
                        _st(Cnew, i, r, c, zero)
                        _st(Pnew, i, r, c, zero)
            for i in range(n):
                x = _abscissa(s, i, th1, n - 1 - i, th2)
                _coeffs_dd(k, lam1, lam2, mu1, mu2, x, h1d, h1u, h2d, h2l, g1d, g1u, g2d, g2l)
                for r in range(k):
                    for c in range(k):
                        cc = _ld(Cprev, i, r, c)
                        pc = _ld(Pprev, i, r, c)
                        v = _mul(h1d[r], cc)
                        vp = _add(_mul(h1d[r], pc), _mul(g1d[r], cc))
                        if r < k - 1:
                            v = _add(v, _mul(h1u[r], _ld(Cprev, i, r + 1, c)))
                            vp = _add(vp, _add(_mul(h1u[r], _ld(Pprev, i, r + 1, c)),
                                               _mul(g1u[r], _ld(Cprev, i, r + 1, c))))
                        _acc(Cnew, i + 1, r, c, v)
                        _acc(Pnew, i + 1, r, c, vp)
                        v = _mul(h2d[r], cc)
                        vp = _add(_mul(h2d[r], pc), _mul(g2d[r], cc))
                        if r > 0:
                            v = _add(v, _mul(h2l[r - 1], _ld(Cprev, i, r - 1, c)))
                            vp = _add(vp, _add(_mul(h2l[r - 1], _ld(Pprev, i, r - 1, c)),
                                               _mul(g2l[r - 1], _ld(Cprev, i, r - 1, c))))
                        _acc(Cnew, i, r, c, v)
                        _acc(Pnew, i, r, c, vp)
            m_c = 0.0
            m_p = 0.0
            for i in range(n + 1):
                w = _div(_d(1.0), _abscissa(s, i, th1, n - i, th2))
                for r in range(k):
                    for c in range(k):
                        v = _ld(Cnew, i, r, c)
                        vp = _ld(Pnew, i, r, c)
                        _acc(S, 0, r, c, v)
                        _acc(S, 1, r, c, _mul(v, w))
                        _acc(S, 2, r, c, _mul(_mul(v, w), w))
                        _acc(S, 3, r, c, vp)
                        _acc(S, 4, r, c, _mul(vp, w))
                        M[0, r, c] += fabs(v.hi)
                        M[1, r, c] += fabs(vp.hi)
                        m_c += fabs(v.hi)
                        m_p += fabs(vp.hi)
            tot_c += m_c
            tot_p += m_p
            if tot_c > RESCALE_AT or tot_p > RESCALE_AT:
                frexp(tot_c if tot_c > tot_p else tot_p, &ex)
                f = ldexp(1.0, -ex)
                for i in range(n + 1):
                    for r in range(k):
                        for c in range(k):
                            _st(Cnew, i, r, c, _scale(_ld(Cnew, i, r, c), f))
                            _st(Pnew, i, r, c, _scale(_ld(Pnew, i, r, c), f))
                for i in range(5):
                    for r in range(k):
                        for c in range(k):
                            _st(S, i, r, c, _scale(_ld(S, i, r, c), f))
                for i in range(2):
                    for r in range(k):
                        for c in range(k):
                            M[i, r, c] *= f
                tot_c *= f
                tot_p *= f
                m_c *= f
                m_p *= f
                m_c_prev *= f
                m_p_prev *= f
                exp2 += ex
        tmp = Cprev; Cprev = Cnew; Cnew = tmp
        tmp = Pprev; Pprev = Pnew; Pnew = tmp
        prev_np, new_np = new_np, prev_np
        prevp_np, newp_np = newp_np, prevp_np
        if n >= min_diag:
            stop, tail = _stop_rule(m_c, m_c_prev, tot_c, m_p, m_p_prev, tot_p, tol)
            if stop:
                converged = True
                break
        m_c_prev = m_c
        m_p_prev = m_p
    return sums_np, mags_np, n, tail, exp2, bool(converged)


cdef tuple _stop_rule(double m_c, double m_c_prev, double tot_c,
                      double m_p, double m_p_prev, double tot_p, double tol):
    cdef double tail = 0.0, r, m, mp, tot
    cdef int q
    for q in range(2):
        if q == 0:
            m, mp, tot = m_c, m_c_prev, tot_c
        else:
            m, mp, tot = m_p, m_p_prev, tot_p
        if m == 0.0:
            continue
        if tot == 0.0 or m > tol * tot or mp == 0.0 or m >= mp:
            return False, 0.0
        r = m / mp
        tail = max(tail, m * r / (1.0 - r) / tot)
    return True, tail


cdef inline void _sift_down(double* h, int k) noexcept nogil:
    cdef int pos = 0, child
    cdef double item = h[0]
    while True:
        child = 2 * pos + 1
        if child >= k:
            break
        if child + 1 < k and h[child + 1] < h[child]:
            child += 1
        if h[child] < item:
            h[pos] = h[child]
            pos = child
        else:
            break
    h[pos] = item


def fcfs_waits(double[::1] t, double[::1] svc, double[::1] pat, int k):
    cdef Py_ssize_t n = t.shape[0], m
    wait_np = np.empty(n)
    served_np = np.zeros(n, dtype=np.uint8)
    free_np = np.zeros(k)
    cdef double[::1] wait = wait_np
    cdef unsigned char[::1] served = served_np
    cdef double[::1] free = free_np
    cdef double w, tm
    with nogil:
        for m in range(n):
            tm = t[m]
            w = free[0] - tm
            if w < 0.0:
                w = 0.0
            wait[m] = w
            if pat[m] > w:
                served[m] = 1
                free[0] = tm + w + svc[m]
                _sift_down(&free[0], k)
    return wait_np, served_np
