"""Pure-Python implementations of the statistical kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``GENIMG_PURE_PYTHON=1`` is set. Results agree with the compiled versions
to floating-point rounding.
"""
import math

import numpy as np

# rational approximation coefficients for the standard normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425

_BETACF_MAXIT = 500
_BETACF_EPS = 1e-16
_TINY = 1e-300


def _ppf_scalar(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p > 0.5:
        # 1 - p is exact here; avoids cancellation in the refinement step
        return -_ppf_scalar(1.0 - p)
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    # one Halley step against the exact CDF
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def norm_ppf(p):
    """Standard normal quantile function, elementwise."""
    p = np.asarray(p, dtype=np.float64)
    return np.array([_ppf_scalar(float(v)) for v in p.ravel()]).reshape(p.shape)


def _betacf(a, b, x):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            break
    return h


def _betainc_scalar(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def betainc_reg(a, b, x):
    """Regularised incomplete beta ``I_x(a, b)`` (scalar a, b; array x)."""
    x = np.asarray(x, dtype=np.float64)
    return np.array([_betainc_scalar(float(a), float(b), float(v)) for v in x.ravel()]).reshape(x.shape)


def t_pvalue_two_sided(t, df):
    """Two-sided Student-t tail probability ``P(|T| >= |t|)``."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty(t.size)
    half = 0.5 * df
    for i, v in enumerate(t.ravel()):
        v = float(v)
        if math.isnan(v):
            out[i] = math.nan
            continue
        x = df / (df + v * v) if math.isfinite(v) else 0.0
        out[i] = _betainc_scalar(half, 0.5, x)
    return out.reshape(t.shape)


def clump_greedy(order, pvals, chrom, pos, gstd_t, p1, p2, r2_min, window_bp):
    """Greedy LD clumping.

    ``order`` lists SNP indices by ascending p (ties pre-broken); ``gstd_t``
    holds one centred unit-norm dosage row per SNP, so a dot product is a
    Pearson correlation. Returns ``(clump_of, is_index)``; unassigned SNPs
    get ``-1``.
    """
    s = len(pvals)
    clump_of = np.full(s, -1, dtype=np.int64)
    is_index = np.zeros(s, dtype=np.int8)
    n_clumps = 0
    eligible = np.asarray(pvals) <= p2
    for j in order:
        if pvals[j] > p1:
            break
        if clump_of[j] >= 0:
            continue
        clump_of[j] = n_clumps
        is_index[j] = 1
        cand = np.flatnonzero((clump_of < 0) & eligible & (chrom == chrom[j])
                              & (np.abs(pos - pos[j]) <= window_bp))
        if len(cand):
            r = gstd_t[cand] @ gstd_t[j]
            clump_of[cand[r * r >= r2_min]] = n_clumps
        n_clumps += 1
    return clump_of, is_index
