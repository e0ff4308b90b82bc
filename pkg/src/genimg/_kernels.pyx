# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled statistical kernels; see ``_kernels_py`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, fabs, isfinite, isnan, lgamma, log, log1p, sqrt, INFINITY, NAN, M_PI

cnp.import_array()

cdef double[6] A = [-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                    1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00]
cdef double[5] B = [-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                    6.680131188771972e+01, -1.328068155288572e+01]
cdef double[6] C = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                    -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00]
cdef double[4] D = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                    3.754408661907416e+00]
cdef double P_LOW = 0.02425
cdef int BETACF_MAXIT = 500
cdef double BETACF_EPS = 1e-16
cdef double TINY = 1e-300


cdef double _ppf(double p) nogil:
    cdef double q, r, x, e, u
    if p <= 0.0:
        return -INFINITY
    if p >= 1.0:
        return INFINITY
    if p > 0.5:
        # 1 - p is exact here; avoids cancellation in the refinement step
        return -_ppf(1.0 - p)
    if p < P_LOW:
        q = sqrt(-2.0 * log(p))
        x = ((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
             / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
             / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0))
    e = 0.5 * erfc(-x / sqrt(2.0)) - p
    u = e * sqrt(2.0 * M_PI) * exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def norm_ppf(p):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(np.asarray(p, dtype=np.float64).ravel())
    cdef cnp.ndarray[double, ndim=1] out = np.empty(flat.shape[0])
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _ppf(flat[i])
    return out.reshape(np.shape(p))


cdef double _betacf(double a, double b, double x) nogil:
    cdef double qab = a + b, qap = a + 1.0, qam = a - 1.0
    cdef double c = 1.0, d, h, aa, delta
    cdef int m, m2
    d = 1.0 - qab * x / qap
    if fabs(d) < TINY:
        d = TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETACF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if fabs(c) < TINY:
            c = TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if fabs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < BETACF_EPS:
            break
    return h


cdef double _betainc(double a, double b, double x) nogil:
    cdef double log_front
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - exp(log_front) * _betacf(b, a, 1.0 - x) / b


def betainc_reg(double a, double b, x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(np.asarray(x, dtype=np.float64).ravel())
    cdef cnp.ndarray[double, ndim=1] out = np.empty(flat.shape[0])
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _betainc(a, b, flat[i])
    return out.reshape(np.shape(x))


def t_pvalue_two_sided(t, double df):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(np.asarray(t, dtype=np.float64).ravel())
    cdef cnp.ndarray[double, ndim=1] out = np.empty(flat.shape[0])
    cdef Py_ssize_t i
    cdef double v, x, half = 0.5 * df
    with nogil:
        for i in range(flat.shape[0]):
            v = flat[i]
            if isnan(v):
                out[i] = NAN
                continue
            x = df / (df + v * v) if isfinite(v) else 0.0
            out[i] = _betainc(half, 0.5, x)
    return out.reshape(np.shape(t))


def clump_greedy(order, pvals, chrom, pos, gstd_t, double p1, double p2, double r2_min, long long window_bp):
    cdef cnp.int64_t[::1] order_v = np.ascontiguousarray(order, dtype=np.int64)
    cdef double[::1] p = np.ascontiguousarray(pvals, dtype=np.float64)
    cdef cnp.int64_t[::1] ch = np.ascontiguousarray(chrom, dtype=np.int64)
    cdef cnp.int64_t[::1] ps = np.ascontiguousarray(pos, dtype=np.int64)
    cdef double[:, ::1] g = np.ascontiguousarray(gstd_t, dtype=np.float64)
    cdef Py_ssize_t s = p.shape[0], n = g.shape[1]
    clump_arr = np.full(s, -1, dtype=np.int64)
    index_arr = np.zeros(s, dtype=np.int8)
    cdef cnp.int64_t[::1] clump_of = clump_arr
    cdef cnp.int8_t[::1] is_index = index_arr
    cdef Py_ssize_t oi, j, k, t
    cdef long long n_clumps = 0, dpos
    cdef double r
    with nogil:
        for oi in range(order_v.shape[0]):
            j = order_v[oi]
            if p[j] > p1:
                break
            if clump_of[j] >= 0:
                continue
            clump_of[j] = n_clumps
            is_index[j] = 1
            for k in range(s):
                if clump_of[k] >= 0 or p[k] > p2 or ch[k] != ch[j]:
                    continue
                dpos = ps[k] - ps[j]
                if dpos < 0:
                    dpos = -dpos
                if dpos > window_bp:
                    continue
                r = 0.0
                for t in range(n):
                    r += g[j, t] * g[k, t]
                if r * r >= r2_min:
                    clump_of[k] = n_clumps
            n_clumps += 1
    return clump_arr, index_arr
