# cython: language_level=3
"""Compiled hot kernels: tau-averaged kernel K and the even-difference accumulation."""
from cython.parallel cimport prange
from libc.math cimport pow, fabs, sqrt

import numpy as np

cdef double[16] GL_X
cdef double[16] GL_W
cdef double[12] GL12_X
cdef double[12] GL12_W
cdef double[8] GL8_X
cdef double[8] GL8_W

_x, _w = np.polynomial.legendre.leggauss(16)
for _i in range(16):
    GL_X[_i] = 0.5 * (_x[_i] + 1.0)
    GL_W[_i] = 0.5 * _w[_i]
_x, _w = np.polynomial.legendre.leggauss(12)
for _i in range(12):
    GL12_X[_i] = 0.5 * (_x[_i] + 1.0)
    GL12_W[_i] = 0.5 * _w[_i]
_x, _w = np.polynomial.legendre.leggauss(8)
for _i in range(8):
    GL8_X[_i] = 0.5 * (_x[_i] + 1.0)
    GL8_W[_i] = 0.5 * _w[_i]

cdef double PANEL_SPAN = 1.5
cdef double SPAN8 = 0.4
cdef double SPAN12 = 0.9
# series branch when (half span)^2 / (1 + midpoint^2) stays below this
cdef double SERIES_Q = 0.09
cdef double SERIES_TOL = 1e-17


cdef inline double _kseries(double c, double w2, double s) noexcept nogil:
    """Mean of (1+q^2)^-s over [c-w, c+w]: Gegenbauer expansion around the midpoint.

    (1 + (c+t)^2)^-s = A^-s sum_n C_n^s(c/sqrt A) (-t/sqrt A)^n with A = 1 + c^2;
    averaging over t keeps the even terms with weight 1/(n+1).
    """
    cdef double A = 1.0 + c * c
    cdef double x = c / sqrt(A)
    cdef double z = w2 / A
    cdef double cm2 = 1.0, cm1 = 2.0 * s * x, cn
    cdef double zp = 1.0, total = 1.0, bound = 2.0 * s
    cdef int n = 2
    while True:
        cn = (2.0 * x * (n + s - 1.0) * cm1 - (n + 2.0 * s - 2.0) * cm2) / n
        bound = bound * (2.0 * s + n - 1.0) / n
        zp = zp * z
        total = total + cn * zp / (n + 1.0)
        if bound * zp < SERIES_TOL * total or n > 200:
            break
        cm2 = cn
        cm1 = (2.0 * x * (n + s) * cn - (n + 2.0 * s - 1.0) * cm1) / (n + 1.0)
        bound = bound * (2.0 * s + n) / (n + 1.0)
        n += 2
    return pow(A, -s) * total


cdef inline double _kval(double pm, double pp, double s) noexcept nogil:
    cdef double span = pm + pp
    cdef double aspan = fabs(span)
    cdef double total = 0.0
    cdef double acc, tau, q, step
    cdef int j, k, npanel
    cdef double mid = 0.5 * (pm - pp)
    if 0.25 * span * span <= SERIES_Q * (1.0 + mid * mid):
        return _kseries(mid, 0.25 * span * span, s)
    if aspan <= SPAN8:
        for k in range(8):
            q = GL8_X[k] * span - pp
            total = total + GL8_W[k] * pow(1.0 + q * q, -s)
        return total
    if aspan <= SPAN12:
        for k in range(12):
            q = GL12_X[k] * span - pp
            total = total + GL12_W[k] * pow(1.0 + q * q, -s)
        return total
    npanel = 1 + <int>(aspan / PANEL_SPAN)
    step = 1.0 / npanel
    for j in range(npanel):
        acc = 0.0
        for k in range(16):
            tau = (j + GL_X[k]) * step
            q = tau * span - pp
            acc = acc + GL_W[k] * pow(1.0 + q * q, -s)
        total = total + step * acc
    return total


def kernel_K(pm, pp, double s, int nthreads=1):
    cdef double[::1] a = np.ascontiguousarray(pm, dtype=np.float64).ravel()
    cdef double[::1] b = np.ascontiguousarray(pp, dtype=np.float64).ravel()
    cdef Py_ssize_t n = a.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        out[i] = _kval(a[i], b[i], s)
    return out_arr


def even_accumulate(double[::1] out, const double[::1] u0, const double[::1] um,
                    const double[::1] up, double r, double c, double s, int nthreads=1):
    cdef Py_ssize_t n = out.shape[0], i
    cdef double inv_r = 1.0 / r
    cdef double x0, xm, xp
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        x0 = u0[i]
        xm = um[i]
        xp = up[i]
        out[i] += c * (2.0 * x0 - xm - xp) * _kval((xm - x0) * inv_r, (xp - x0) * inv_r, s)


def even_accumulate_rows(double[::1] out, const double[::1] u0, const double[:, ::1] um,
                         const double[:, ::1] up, const double[::1] r, const double[::1] c,
                         double s, int nthreads=1):
    """Row-batched ``even_accumulate``; every node sums its rows in row order."""
    cdef Py_ssize_t n = out.shape[0], m = um.shape[0], i, j
    cdef double x0, xm, xp, inv_r, cj
    for j in range(m):
        inv_r = 1.0 / r[j]
        cj = c[j]
        for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
            x0 = u0[i]
            xm = um[j, i]
            xp = up[j, i]
            out[i] += cj * (2.0 * x0 - xm - xp) * _kval((xm - x0) * inv_r, (xp - x0) * inv_r, s)
