# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled round kernels for the fire-sales and auxiliary processes.

Same contract as :mod:`firesale._pykernels`. The sales function is passed as a
:class:`firesale.model.SalesFunction`; its ``kernel_spec()`` tuple selects the
scalar evaluation branch below.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

DEF IND = 0
DEF POW = 1
DEF LEVLIN = 2
DEF LEVPRICE = 3
DEF TABLIN = 4
DEF TABSTEP = 5


cdef inline Py_ssize_t _last_le(const double[::1] us, double u) noexcept nogil:
    # largest k with us[k] <= u, -1 if none
    cdef Py_ssize_t lo = 0, hi = us.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if us[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


cdef inline Py_ssize_t _last_lt(const double[::1] us, double u) noexcept nogil:
    # largest k with us[k] < u, -1 if none
    cdef Py_ssize_t lo = 0, hi = us.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if us[mid] < u:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


cdef inline double _table(double u, int step, int left,
                          const double[::1] us, const double[::1] vs) noexcept nogil:
    cdef Py_ssize_t k, last = us.shape[0] - 1
    cdef double val, lo, hi
    if left:
        k = _last_lt(us, u)
    else:
        k = _last_le(us, u)
    if k < 0:
        return 0.0
    if step or k == last:
        return vs[k]
    lo = vs[k]
    hi = vs[k + 1]
    val = lo + (u - us[k]) / (us[k + 1] - us[k]) * (hi - lo)
    if val < lo:
        val = lo
    if val > hi:
        val = hi
    return val


cdef inline double _rho(double u, int code, double p0, double p1, int left, double cap,
                        const double[::1] us, const double[::1] vs) noexcept nogil:
    cdef double uu, val
    if u > 1.0:
        # rho(u) = rho(1) beyond 1 for both the right- and left-continuous versions
        uu = 1.0
        left = 0
    else:
        uu = u
    if code == IND:
        if left:
            val = 1.0 if uu > 1.0 else 0.0
        else:
            val = 1.0 if uu >= 1.0 else 0.0
    elif code == POW:
        val = pow(uu, p0)
    elif code == LEVLIN:
        val = 1.0 - (1.0 - uu) * p0
    elif code == LEVPRICE:
        val = 1.0 - p1 * (1.0 - (p0 - 1.0) / (p0 - uu))
    elif code == TABLIN:
        val = _table(uu, 0, left, us, vs)
    else:
        val = _table(uu, 1, left, us, vs)
    if val < 0.0:
        val = 0.0
    if val > 1.0:
        val = 1.0
    if val > cap:
        val = cap
    return val


def evaluate_sales(rho, double[::1] u, double[::1] out):
    """Evaluate ``rho`` elementwise into ``out`` (used to cross-check backends)."""
    cdef int code, left
    cdef double p0, p1, cap
    code, p0, p1, us_obj, vs_obj, left, cap = rho.kernel_spec()
    cdef const double[::1] us = us_obj
    cdef const double[::1] vs = vs_obj
    cdef Py_ssize_t i
    with nogil:
        for i in range(u.shape[0]):
            out[i] = _rho(u[i], code, p0, p1, left, cap, us, vs)


def exposure(const double[:, ::1] x, const double[::1] h, double[::1] out):
    cdef Py_ssize_t i, m, n = x.shape[0], M = x.shape[1]
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for m in range(M):
                s = s + x[i, m] * h[m]
            out[i] = s


def sold_totals(const double[:, ::1] x, const double[::1] frac, double[::1] out):
    cdef Py_ssize_t i, m, n = x.shape[0], M = x.shape[1]
    cdef double f
    with nogil:
        for m in range(M):
            out[m] = 0.0
        for i in range(n):
            f = frac[i]
            if f != 0.0:
                for m in range(M):
                    out[m] = out[m] + x[i, m] * f


def aux_fractions(const double[:, ::1] x, const double[::1] ell, const double[::1] c,
                  const double[::1] h, rho, double[::1] frac_out):
    cdef int code, left
    cdef double p0, p1, cap
    code, p0, p1, us_obj, vs_obj, left, cap = rho.kernel_spec()
    cdef const double[::1] us = us_obj
    cdef const double[::1] vs = vs_obj
    cdef Py_ssize_t i, m, n = x.shape[0], M = x.shape[1]
    cdef double xh, a
    with nogil:
        for i in range(n):
            xh = 0.0
            for m in range(M):
                xh = xh + x[i, m] * h[m]
            a = ell[i] + xh
            frac_out[i] = _rho(a / c[i], code, p0, p1, left, cap, us, vs)


def real_round(const double[:, ::1] x, const double[::1] ell, const double[::1] c,
               const double[::1] h, rho, double[::1] frac, double[::1] realized,
               double[::1] loss_out):
    cdef int code, left
    cdef double p0, p1, cap
    code, p0, p1, us_obj, vs_obj, left, cap = rho.kernel_spec()
    cdef const double[::1] us = us_obj
    cdef const double[::1] vs = vs_obj
    cdef Py_ssize_t i, m, n = x.shape[0], M = x.shape[1]
    cdef double xh, corr, loss, newf
    with nogil:
        for i in range(n):
            xh = 0.0
            for m in range(M):
                xh = xh + x[i, m] * h[m]
            corr = frac[i] * xh - realized[i]
            if corr < 0.0:
                corr = 0.0
            # l + (xh - corr) <= l + xh by monotone rounding; exact l when all is sold
            loss = ell[i] + (xh - corr)
            newf = _rho(loss / c[i], code, p0, p1, left, cap, us, vs)
            if newf < frac[i]:
                newf = frac[i]
            realized[i] = realized[i] + (newf - frac[i]) * xh
            frac[i] = newf
            loss_out[i] = loss
