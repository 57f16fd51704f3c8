"""Likelihood ratios, diagnostic odds ratio and the fixed-n EUII."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateEvidenceError, DomainError


def odds(p: float) -> float:
    """Probability to odds. ``p`` must be below 1."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"odds need a probability in [0, 1), got {p}")
    return p / (1.0 - p)


def prob(o: float) -> float:
    """Odds to probability; infinite odds map to 1."""
    if o < 0:
        raise DomainError(f"odds must be nonnegative, got {o}")
    if math.isinf(o):
        return 1.0
    return o / (1.0 + o)


@dataclass(frozen=True)
class LikelihoodRatios:
    lr_plus: float
    lr_minus: float

    @property
    def dor(self) -> float:
        return self.lr_plus / self.lr_minus


@dataclass(frozen=True)
class EvidenceSummary:
    dor: float
    euii: float
    n_basis: float


def _check_rates(power: float, t1e: float) -> None:
    if not 0.0 < t1e < 1.0:
        raise DomainError(f"Type-I error rate must lie in (0, 1), got {t1e}")
    if not 0.0 <= power <= 1.0:
        raise DomainError(f"power must lie in [0, 1], got {power}")
    if power in (0.0, 1.0):
        raise DegenerateEvidenceError(
            f"power of exactly {power} gives a zero or infinite likelihood ratio"
        )


def likelihood_ratios(power: float, t1e: float) -> LikelihoodRatios:
    """LR+ = power / T1E and LR- = (1 - power) / (1 - T1E)."""
    _check_rates(power, t1e)
    return LikelihoodRatios(power / t1e, (1.0 - power) / (1.0 - t1e))


def dor(power: float, t1e: float) -> float:
    """Diagnostic odds ratio: power odds divided by Type-I error odds."""
    _check_rates(power, t1e)
    return odds(power) / odds(t1e)


def euii_fixed(dor_value: float, n: float) -> float:
    """n-th root of the diagnostic odds ratio."""
    if not dor_value > 0:
        raise DomainError(f"DOR must be positive, got {dor_value}")
    if not n > 0:
        raise DomainError(f"n must be positive, got {n}")
    return math.exp(math.log(dor_value) / n)


def summarize(power: float, t1e: float, n: float) -> EvidenceSummary:
    d = dor(power, t1e)
    return EvidenceSummary(dor=d, euii=euii_fixed(d, n), n_basis=n)


def update_odds(prior_h1: float, lr: float) -> float:
    """Posterior Pr(H1) after multiplying the prior odds by ``lr``."""
    if prior_h1 == 1.0:
        raise DomainError("prior Pr(H1) = 1 has infinite odds")
    if not lr > 0:
        raise DomainError(f"likelihood ratio must be positive, got {lr}")
    return prob(lr * odds(prior_h1))
