"""Path sums at arbitrary binary precision (gmpy2), for boundary systems that
double-double arithmetic cannot resolve.

Same recursion and stopping rule as ``_pykernels.matrix_series_dd``, run on
numpy object arrays of ``gmpy2.mpfr``.  The exponent range of mpfr makes
rescaling unnecessary.
"""
from __future__ import annotations

import gmpy2
import numpy as np

from ._pykernels import _lower_apply, _upper_apply, jump_coefficients, stop_rule


def _filled(shape, value):
    out = np.empty(shape, dtype=object)
    out.fill(value)
    return out


def matrix_series_mp(k, lam1, lam2, mu1, mu2, th1, th2, s, tol, max_diag, min_diag, bits):
    """Sums (C, C/x, C/x^2, C', C'/x) over the lattice points with i+j >= 1.

    Returns ``(sums, mags, n_used, tail, converged)`` with ``sums`` a list of
    five k x k object arrays of mpfr at ``bits`` bits and ``mags`` the
    entrywise sums of |C| and |C'|.
    """
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        F = gmpy2.mpfr
        zero = F(0)
        lam1, lam2, mu1, mu2, th1, th2, s = (F(v) for v in (lam1, lam2, mu1, mu2, th1, th2, s))
        C = _filled((1, k, k), zero)
        for i in range(k):
            C[0, i, i] = F(1)
        P = _filled((1, k, k), zero)
        x_prev = np.array([s], dtype=object)
        sums = [_filled((k, k), zero) for _ in range(5)]
        mags = [_filled((k, k), zero) for _ in range(2)]
        tot_c, tot_p = 0.0, 0.0
        m_c_prev, m_p_prev = float(k), 0.0
        tail = 0.0
        converged = False
        n = 0
        while n < max_diag:
            n += 1
            d1, u1, d2, l2, dd1, du1, dd2, dl2 = jump_coefficients(k, lam1, lam2, mu1, mu2, x_prev)
            xp = x_prev[:, None]
            h1d, h1u, h2d, h2l = d1 / xp, u1 / xp, d2 / xp, l2 / xp
            g1d = dd1 / xp - d1 / (xp * xp)
            g1u = du1 / xp - u1 / (xp * xp)
            g2d = dd2 / xp - d2 / (xp * xp)
            g2l = dl2 / xp - l2 / (xp * xp)
            C_new = _filled((n + 1, k, k), zero)
            P_new = _filled((n + 1, k, k), zero)
            C_new[1:] += _upper_apply(h1d, h1u, C)
            C_new[:-1] += _lower_apply(h2d, h2l, C)
            P_new[1:] += _upper_apply(h1d, h1u, P) + _upper_apply(g1d, g1u, C)
            P_new[:-1] += _lower_apply(h2d, h2l, P) + _lower_apply(g2d, g2l, C)
            x_new = np.array([s + i * th1 + (n - i) * th2 for i in range(n + 1)], dtype=object)
            w = (1 / x_new)[:, None, None]
            Cw = C_new * w
            for j, t in enumerate((C_new, Cw, Cw * w, P_new, P_new * w)):
                sums[j] = sums[j] + t.sum(axis=0)
            abs_c, abs_p = np.abs(C_new).sum(axis=0), np.abs(P_new).sum(axis=0)
            mags[0] = mags[0] + abs_c
            mags[1] = mags[1] + abs_p
            # kept as mpfr: without rescaling the totals can pass the double range
            m_c = abs_c.sum()
            m_p = abs_p.sum()
            tot_c += m_c
            tot_p += m_p
            C, P, x_prev = C_new, P_new, x_new
            if n >= min_diag:
                stop, tail = stop_rule(m_c, m_c_prev, tot_c, m_p, m_p_prev, tot_p, tol)
                if stop:
                    converged = True
                    break
            m_c_prev, m_p_prev = m_c, m_p
    return sums, mags, n, float(tail), converged
