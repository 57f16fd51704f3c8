"""Power, sample size and limiting EUII for fixed-sample z- and t-tests.

Sample sizes are real numbers throughout; nothing is rounded. Two-sided
tests follow the one-tail power convention: rejection in the direction
opposite to the true effect is ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

from scipy import special

from .dist import (
    noncentral_t_cdf,
    noncentral_t_logcdf,
    std_normal_cdf,
    std_normal_quantile,
    t_quantile,
)
from .errors import DomainError

Arms = Literal["one", "two"]
Sidedness = Literal["one", "two"]
TestFamily = Literal["z", "t"]


def _arms(arms) -> str:
    key = {1: "one", 2: "two", "1": "one", "2": "two"}.get(arms, arms)
    if key not in ("one", "two"):
        raise DomainError(f"arms must be 'one' or 'two', got {arms!r}")
    return key


def _sided(sidedness) -> str:
    key = {1: "one", 2: "two", "1": "one", "2": "two"}.get(sidedness, sidedness)
    if key not in ("one", "two"):
        raise DomainError(f"sidedness must be 'one' or 'two', got {sidedness!r}")
    return key


def one_tail_level(alpha: float, sidedness: Sidedness = "two") -> float:
    """Level of the single tail that carries the power, alpha/2 if two-sided."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha / 2.0 if _sided(sidedness) == "two" else alpha


@dataclass(frozen=True)
class DesignPoint:
    """One fixed-sample design.

    ``n_total`` counts units over all arms. For two arms ``allocation``
    holds (n1, n2); when omitted the arms are balanced.
    """

    delta: float
    n_total: float
    alpha: float = 0.05
    arms: Arms = "one"
    sidedness: Sidedness = "two"
    test: TestFamily = "z"
    allocation: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "arms", _arms(self.arms))
        object.__setattr__(self, "sidedness", _sided(self.sidedness))
        if self.test not in ("z", "t"):
            raise DomainError(f"test must be 'z' or 't', got {self.test!r}")
        if not math.isfinite(self.delta):
            raise DomainError("delta must be finite")
        if not self.n_total > 0:
            raise DomainError(f"n_total must be positive, got {self.n_total}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.allocation is not None:
            if self.arms != "two":
                raise DomainError("allocation only applies to two-arm designs")
            n1, n2 = self.allocation
            if n1 <= 0 or n2 <= 0:
                raise DomainError("group sizes must be positive")
            if not math.isclose(n1 + n2, self.n_total, rel_tol=1e-12):
                raise DomainError("allocation must sum to n_total")

    @property
    def groups(self) -> Tuple[float, float]:
        if self.allocation is not None:
            return self.allocation
        return (self.n_total / 2.0, self.n_total / 2.0)

    @property
    def effective_n(self) -> float:
        """Information in units of one-sample observations."""
        if self.arms == "one":
            return self.n_total
        n1, n2 = self.groups
        return n1 * n2 / (n1 + n2)


def required_n(
    delta: float,
    alpha: float,
    beta: float,
    arms: Arms = "one",
    sidedness: Sidedness = "two",
) -> float:
    """Unrounded total sample size (u + v)^2 / delta^2 of a z-test.

    Two balanced arms need four times the one-sample size.
    """
    if delta == 0 or not math.isfinite(delta):
        raise DomainError("delta must be finite and nonzero (n is infinite at delta = 0)")
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")
    u = std_normal_quantile(1.0 - beta)
    v = std_normal_quantile(1.0 - one_tail_level(alpha, sidedness))
    n = (u + v) ** 2 / delta**2
    return 4.0 * n if _arms(arms) == "two" else n


def power_z(point: DesignPoint) -> float:
    """Power of the z-test, Phi(delta * sqrt(n_eff) - z_{alpha'})."""
    if point.test != "z":
        raise DomainError("power_z requires a z-test design point")
    crit = std_normal_quantile(1.0 - one_tail_level(point.alpha, point.sidedness))
    return std_normal_cdf(point.delta * math.sqrt(point.effective_n) - crit)


def power_z_unequal(
    delta: float, n1: float, n2: float, alpha: float = 0.05, sidedness: Sidedness = "two"
) -> float:
    if n1 <= 0 or n2 <= 0:
        raise DomainError("group sizes must be positive")
    crit = std_normal_quantile(1.0 - one_tail_level(alpha, sidedness))
    return std_normal_cdf(delta * math.sqrt(n1 * n2 / (n1 + n2)) - crit)


def power_t(point: DesignPoint) -> float:
    """Power of the t-test from the noncentral t distribution.

    One arm uses df = n - 1; two arms use the pooled-variance df = n - 2.
    Only the tail in the direction of ``delta`` is counted.
    """
    if point.test != "t":
        raise DomainError("power_t requires a t-test design point")
    if point.arms == "one":
        if point.n_total < 2:
            raise DomainError("one-sample t-test needs n >= 2")
        df = point.n_total - 1.0
    else:
        if min(point.groups) < 2:
            raise DomainError("two-sample t-test needs at least 2 units per arm")
        df = point.n_total - 2.0
    level = one_tail_level(point.alpha, point.sidedness)
    crit = t_quantile(1.0 - level, df)
    ncp = abs(point.delta) * math.sqrt(point.effective_n)
    return 1.0 - noncentral_t_cdf(crit, df, ncp)


def power(point: DesignPoint) -> float:
    """Dispatch on ``point.test``."""
    return power_z(point) if point.test == "z" else power_t(point)


def log_power_odds(point: DesignPoint) -> float:
    """log(power / (1 - power)), finite even when power rounds to 1."""
    level = one_tail_level(point.alpha, point.sidedness)
    if point.test == "z":
        x = point.delta * math.sqrt(point.effective_n) - std_normal_quantile(1.0 - level)
        return float(special.log_ndtr(x) - special.log_ndtr(-x))
    if point.arms == "one":
        df = point.n_total - 1.0
    else:
        df = point.n_total - 2.0
    if df < 1:
        raise DomainError("too few units for a t-test")
    crit = t_quantile(1.0 - level, df)
    log_miss = noncentral_t_logcdf(crit, df, abs(point.delta) * math.sqrt(point.effective_n))
    return math.log(-math.expm1(log_miss)) - log_miss


def euii_design(point: DesignPoint) -> float:
    """Fixed-design EUII, DOR^(1/n), with the DOR taken on the log scale.

    The Type-I error rate entering the DOR is ``point.alpha``.
    """
    log_dor = log_power_odds(point) - math.log(point.alpha / (1.0 - point.alpha))
    return math.exp(log_dor / point.n_total)


def euii_asymptote(delta: float, arms: Arms = "one") -> float:
    """Limit of the fixed-n EUII as n grows: exp(d^2/2) or exp(d^2/8)."""
    if not math.isfinite(delta):
        raise DomainError("delta must be finite")
    divisor = 2.0 if _arms(arms) == "one" else 8.0
    return math.exp(delta * delta / divisor)
