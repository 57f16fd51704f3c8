"""Normal, central-t and noncentral-t distribution kernels.

The normal and central-t functions wrap the Cephes routines in
:mod:`scipy.special`. The noncentral-t cdf is evaluated here with the
Poisson-mixture series over regularized incomplete beta functions,
summed outward from the largest term so that large noncentrality
parameters do not underflow.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, special

from .errors import ConvergenceError, DomainError

__all__ = [
    "std_normal_cdf",
    "std_normal_quantile",
    "t_cdf",
    "t_quantile",
    "noncentral_t_cdf",
    "noncentral_t_logcdf",
]

SERIES_RTOL = 1e-12
MAX_TERMS = 10_000


def _check_finite(x: float, name: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x}")
    return x


def _check_open_unit(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return p


def _check_df(df: float) -> float:
    df = float(df)
    if not (df > 0 and math.isfinite(df)):
        raise DomainError(f"degrees of freedom must be positive and finite, got {df}")
    return df


def std_normal_cdf(x: float) -> float:
    """Standard normal cumulative distribution function."""
    return float(special.ndtr(_check_finite(x)))


def std_normal_quantile(p: float) -> float:
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    return float(special.ndtri(_check_open_unit(p)))


def t_cdf(x: float, df: float) -> float:
    """Central Student-t cdf; ``df`` may be fractional."""
    return float(special.stdtr(_check_df(df), _check_finite(x)))


def t_quantile(p: float, df: float) -> float:
    """Quantile of the central t distribution with ``df`` degrees of freedom."""
    p = _check_open_unit(p)
    df = _check_df(df)
    if p == 0.5:
        return 0.0
    return float(special.stdtrit(df, p))


def _nct_upper_series(x: float, df: float, ncp: float) -> float:
    """F(x; df, ncp) for x >= 0.

    F = Phi(-ncp) + 1/2 * sum_j [P_j I_y(j + 1/2, df/2) + Q_j I_y(j + 1, df/2)]
    with y = x^2 / (x^2 + df), P_j Poisson(ncp^2/2) weights and
    Q_j = exp(-lam) lam^j ncp / (sqrt(2) Gamma(j + 3/2)).
    """
    base = float(special.ndtr(-ncp))
    if x == 0.0:
        return base
    y = x * x / (x * x + df)
    lam = 0.5 * ncp * ncp
    mode = int(lam)
    half_width = int(12.0 * math.sqrt(lam) + 40.0)

    while True:
        lo = max(0, mode - half_width)
        hi = mode + half_width
        if hi - lo + 1 > MAX_TERMS:
            raise ConvergenceError(
                f"noncentral t series needs more than {MAX_TERMS} terms (ncp={ncp})"
            )
        j = np.arange(lo, hi + 1, dtype=float)
        if lam > 0:
            log_p = -lam + j * math.log(lam) - special.gammaln(j + 1.0)
            log_q = (
                -lam + j * math.log(lam) - special.gammaln(j + 1.5)
                + math.log(abs(ncp)) - 0.5 * math.log(2.0)
            )
            p_w = np.exp(log_p)
            q_w = math.copysign(1.0, ncp) * np.exp(log_q)
        else:
            p_w = (j == 0).astype(float)
            q_w = np.zeros_like(j)
        terms = p_w * special.betainc(j + 0.5, 0.5 * df, y) + q_w * special.betainc(
            j + 1.0, 0.5 * df, y
        )
        total = float(terms.sum())
        scale = max(abs(total), float(np.abs(terms).max()), 1e-300)
        # Poisson weights decay on both sides of the mode, so the edge terms
        # bound the truncation error.
        left_ok = lo == 0 or abs(terms[0]) <= SERIES_RTOL * scale
        right_ok = abs(terms[-1]) <= SERIES_RTOL * scale
        if left_ok and right_ok:
            break
        half_width *= 2

    value = base + 0.5 * total
    return min(1.0, max(0.0, value))


def noncentral_t_cdf(x: float, df: float, ncp: float) -> float:
    """Cumulative distribution function of the noncentral t distribution.

    Args:
        x: Evaluation point.
        df: Degrees of freedom, any positive real.
        ncp: Noncentrality parameter.

    Returns:
        Pr(T <= x) for T ~ t'(df, ncp).

    Raises:
        DomainError: If ``df`` is not positive or an argument is not finite.
        ConvergenceError: If the series needs more than 10^4 terms.
    """
    x = _check_finite(x)
    df = _check_df(df)
    ncp = _check_finite(ncp, "ncp")
    if ncp == 0.0:
        return t_cdf(x, df)
    if x >= 0.0:
        return _nct_upper_series(x, df, ncp)
    return 1.0 - _nct_upper_series(-x, df, -ncp)


def _log_chi_density(u, df):
    """Log density of sqrt(V / df) for V ~ chi-square(df)."""
    k = 0.5 * df
    return (
        math.log(2.0) + k * math.log(k) - special.gammaln(k)
        + (df - 1.0) * np.log(u) - k * u * u
    )


def noncentral_t_logcdf(x: float, df: float, ncp: float) -> float:
    """Natural log of the noncentral-t cdf, accurate far into the lower tail.

    Where the cdf is representable it is the log of
    :func:`noncentral_t_cdf`. Below that, Pr(T <= x) is written as
    E[Phi(x U - ncp)] with U = sqrt(V / df), and the integrand, which is
    log-concave in U, is integrated on the log scale around its mode.
    """
    direct = noncentral_t_cdf(x, df, ncp)
    if direct > 1e-250:
        return math.log(direct)
    x, df, ncp = float(x), float(df), float(ncp)

    def h(u):
        return float(special.log_ndtr(x * u - ncp) + _log_chi_density(u, df))

    hi = 10.0 + 60.0 / math.sqrt(df) + (2.0 * abs(ncp) / abs(x) if x != 0 else 0.0)
    res = optimize.minimize_scalar(lambda u: -h(u), bounds=(1e-12, hi), method="bounded",
                                   options={"xatol": 1e-12})
    mode = float(res.x)
    peak = h(mode)
    step = 1e-4 * max(mode, 1e-3)
    curv = (h(mode + step) - 2.0 * peak + h(mode - step)) / step**2 if mode > step else -1.0
    width = 1.0 / math.sqrt(max(-curv, 1e-12))
    lo, up = max(0.0, mode - 40.0 * width), mode + 40.0 * width
    val, _ = integrate.quad(lambda u: math.exp(h(u) - peak) if u > 0 else 0.0, lo, up,
                            points=[mode], limit=200, epsabs=0.0, epsrel=1e-10)
    if not val > 0:
        raise ConvergenceError("log-scale noncentral t integral vanished")
    return peak + math.log(val)
