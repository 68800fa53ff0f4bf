"""Special functions for distribution modeling: regularized incomplete gamma,
error function complement, and Gaussian/Gamma quantile functions.

Everything here is vectorized over numpy arrays and works in float64. Scalar
inputs return Python floats.
"""

import numpy as np

_EPS = 1e-15
_FPMIN = 1e-300
_MAX_ITER = 600

# Lanczos approximation, g=7, n=9
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])


def log_gamma(x):
    """Natural log of the gamma function for x > 0 (Lanczos approximation)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("log_gamma requires x > 0")
    z = x - 1.0
    series = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        series = series + _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return 0.5 * np.log(2.0 * np.pi) + (z + 0.5) * np.log(t) - t + np.log(series)


def _lower_gamma_series(a, x, log_gamma_a=None):
    """Regularized lower incomplete gamma by power series; wants x < a + 1."""
    # sum_{n>=0} x^n / (a (a+1) ... (a+n)), scaled by x^a e^-x / Gamma(a)
    if log_gamma_a is None:
        log_gamma_a = log_gamma(a)
    term = 1.0 / a
    total = term.copy()
    ap = a.copy()
    for _ in range(_MAX_ITER):
        ap = ap + 1.0
        term = term * x / ap
        total = total + term
        if np.all(np.abs(term) < np.abs(total) * _EPS):
            break
    return total * np.exp(a * np.log(x) - x - log_gamma_a)


def _upper_gamma_contfrac(a, x, log_gamma_a=None):
    """Regularized upper incomplete gamma by Lentz continued fraction; wants x >= a + 1."""
    if log_gamma_a is None:
        log_gamma_a = log_gamma(a)
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / _FPMIN)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = b + an / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < _EPS):
            break
    return h * np.exp(a * np.log(x) - x - log_gamma_a)


def _reg_lower_core(a, x, log_gamma_a):
    """reg_lower_gamma on validated flat arrays with precomputed log gamma."""
    out = np.zeros(a.shape)
    pos = x > 0
    series = pos & (x < a + 1.0)
    tail = pos & ~series
    if np.any(series):
        out[series] = _lower_gamma_series(a[series], x[series], log_gamma_a[series])
    if np.any(tail):
        out[tail] = 1.0 - _upper_gamma_contfrac(a[tail], x[tail], log_gamma_a[tail])
    return np.clip(out, 0.0, 1.0)


def _reg_upper_core(a, x, log_gamma_a):
    """reg_upper_gamma on validated arrays; keeps tiny upper tails exact
    by evaluating the continued fraction directly instead of 1 - P."""
    out = np.ones(a.shape)
    pos = x > 0
    series = pos & (x < a + 1.0)
    tail = pos & ~series
    if np.any(series):
        out[series] = 1.0 - _lower_gamma_series(a[series], x[series], log_gamma_a[series])
    if np.any(tail):
        out[tail] = _upper_gamma_contfrac(a[tail], x[tail], log_gamma_a[tail])
    return np.clip(out, 0.0, 1.0)


def reg_lower_gamma(a, x):
    """Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(a <= 0):
        raise ValueError("reg_lower_gamma requires a > 0")
    if np.any(x < 0):
        raise ValueError("reg_lower_gamma requires x >= 0")
    a, x = np.broadcast_arrays(a, x)
    out = _reg_lower_core(a, x, log_gamma(a))
    return float(out) if out.ndim == 0 else out


def reg_upper_gamma(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(a <= 0):
        raise ValueError("reg_upper_gamma requires a > 0")
    if np.any(x < 0):
        raise ValueError("reg_upper_gamma requires x >= 0")
    a, x = np.broadcast_arrays(a, x)
    out = _reg_upper_core(a, x, log_gamma(a))
    return float(out) if out.ndim == 0 else out


def erfc(x):
    """Complementary error function via the incomplete gamma identity."""
    x = np.asarray(x, dtype=float)
    z = x * x
    upper = reg_upper_gamma(0.5, np.asarray(z))
    lower = 1.0 - upper
    out = np.where(x >= 0, upper, 1.0 + lower)
    return float(out) if out.ndim == 0 else out


def gaussian_cdf(x):
    """Standard normal CDF."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(-x / np.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


# Acklam's rational approximation for the normal quantile (initial guess only;
# refined below to full double precision).
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)
_ACK_SPLIT = 0.02425
_ACK_SPLIT_R2 = (0.5 - _ACK_SPLIT) ** 2


def _gaussian_inv_cdf_approx(p):
    a, b, c, d = _ACK_A, _ACK_B, _ACK_C, _ACK_D
    p_safe = np.clip(p, 1e-300, 1.0 - 1e-16)

    q = np.sqrt(-2.0 * np.log(np.minimum(p_safe, _ACK_SPLIT)))
    low = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
          ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)

    q = np.sqrt(-2.0 * np.log(np.minimum(1.0 - p_safe, _ACK_SPLIT)))
    high = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)

    q = p_safe - 0.5
    r = np.clip(q * q, 0.0, _ACK_SPLIT_R2)
    mid = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
          (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)

    out = np.where(p_safe < _ACK_SPLIT, low, np.where(p_safe > 1.0 - _ACK_SPLIT, high, mid))
    return out


def gaussian_inv_cdf(p):
    """Standard normal quantile function for p in (0, 1).

    Rational approximation refined by two Newton steps on the CDF; absolute
    error well below 1e-8 across the clipped quantile range.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("gaussian_inv_cdf requires p strictly inside (0, 1)")
    x = _gaussian_inv_cdf_approx(p_arr)
    for _ in range(2):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        err = gaussian_cdf(x) - p_arr
        x = x - err / np.maximum(pdf, _FPMIN)
    return float(x) if np.ndim(x) == 0 else x


def gamma_inv_cdf(p, shape, scale):
    """Quantile of the Gamma(shape, scale) distribution for p in (0, 1).

    Solves the regularized lower incomplete gamma equation by a safeguarded
    Newton iteration (bisection fallback); relative error below 1e-9.
    """
    p_arr = np.asarray(p, dtype=float)
    k = np.asarray(shape, dtype=float)
    th = np.asarray(scale, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("gamma_inv_cdf requires p strictly inside (0, 1)")
    if np.any(~np.isfinite(k)) or np.any(k <= 0.0):
        raise ValueError("gamma_inv_cdf requires shape > 0")
    if np.any(~np.isfinite(th)) or np.any(th <= 0.0):
        raise ValueError("gamma_inv_cdf requires scale > 0")
    p_arr, k, th = np.broadcast_arrays(p_arr, k, th)
    scalar = p_arr.ndim == 0
    out_shape = p_arr.shape
    p_flat = np.atleast_1d(p_arr).astype(float).ravel()
    k_flat = np.atleast_1d(k).astype(float).ravel()
    th_flat = np.atleast_1d(th).astype(float).ravel()
    log_gamma_k = log_gamma(k_flat)

    # Wilson-Hilferty start; small-x asymptotic where that degenerates
    z = gaussian_inv_cdf(p_flat)
    wh = k_flat * (1.0 - 1.0 / (9.0 * k_flat) + z / (3.0 * np.sqrt(k_flat))) ** 3
    asymp = np.exp((np.log(p_flat) + log_gamma_k + np.log(k_flat)) / k_flat)
    y = np.where((wh > 0) & (k_flat >= 0.3), wh, asymp)
    y = np.maximum(y, _FPMIN)

    lo = np.zeros_like(y)
    hi = np.full_like(y, np.inf)
    # safeguarded Newton on the active (unconverged) subset only
    active = np.arange(y.size)
    for _ in range(120):
        ka = k_flat[active]
        ya = y[active]
        pa = p_flat[active]
        lga = log_gamma_k[active]
        f = _reg_lower_core(ka, ya, lga) - pa
        lo_a = lo[active]
        hi_a = hi[active]
        hi_a = np.where(f >= 0, np.minimum(hi_a, ya), hi_a)
        lo_a = np.where(f < 0, np.maximum(lo_a, ya), lo_a)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            log_pdf = (ka - 1.0) * np.log(np.maximum(ya, _FPMIN)) - ya - lga
            pdf = np.exp(np.clip(log_pdf, -745.0, 700.0))
        y_new = ya - np.where(pdf > 0, f / np.maximum(pdf, _FPMIN), 0.0)
        # fall back to bisection/doubling when Newton leaves the bracket
        bad = (y_new <= lo_a) | (y_new >= hi_a) | ~np.isfinite(y_new)
        bisect = np.where(np.isfinite(hi_a), 0.5 * (lo_a + hi_a), 2.0 * np.maximum(ya, 1.0))
        y_new = np.where(bad, bisect, y_new)
        done = np.abs(y_new - ya) <= 1e-11 * np.maximum(y_new, _FPMIN)
        y[active] = y_new
        lo[active] = lo_a
        hi[active] = hi_a
        active = active[~done]
        if active.size == 0:
            break
    out = (y * th_flat).reshape(out_shape) if not scalar else None
    return float(y[0] * th_flat[0]) if scalar else out


class GammaQuantileTable:
    """Inverse-CDF lookup table for Gamma distributions.

    Stores exact quantiles at equally spaced probabilities (clipped away from
    0 and 1) and inverts by linear interpolation in probability. Vectorized
    over channels: shape and scale may be arrays, one table row per channel.
    Interpolation error only matters between grid nodes, so this is a sampling
    aid, not a replacement for gamma_inv_cdf where full precision is needed.
    """

    QUANTILE_CLIP = 1e-7

    def __init__(self, shape, scale, size=10000):
        if size < 2:
            raise ValueError("table size must be >= 2")
        k = np.atleast_1d(np.asarray(shape, dtype=float))
        th = np.atleast_1d(np.asarray(scale, dtype=float))
        k, th = np.broadcast_arrays(k, th)
        self.probs = np.linspace(self.QUANTILE_CLIP, 1.0 - self.QUANTILE_CLIP, size)
        self.x = gamma_inv_cdf(self.probs[None, :], k[:, None], th[:, None])

    def invert(self, p):
        """Per-row quantiles: p has shape [rows, n] matching the table rows."""
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        for i in range(self.x.shape[0]):
            pi = np.clip(p[i], self.probs[0], self.probs[-1])
            out[i] = np.interp(pi, self.probs, self.x[i])
        return out
