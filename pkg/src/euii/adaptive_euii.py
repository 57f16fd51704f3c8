"""EUII when the sample size is random.

An adaptive design is summarized by the sample-size distribution in the
four cells hypothesis x outcome. Given a prior Pr(H1), the cells are
mixed into the moments of N for significant and for nonsignificant
results, and those feed the first- and second-order EUII.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from .errors import DataInsufficiencyError, DomainError
from .evidence import odds, prob, update_odds

DEFAULT_PRIORS = (0.01, 0.1, 0.5)


@dataclass(frozen=True)
class Cell:
    """Sample-size distribution of one (hypothesis, outcome) cell.

    ``mass`` is the probability of the outcome given the hypothesis.
    Empty cells carry ``mean_n = var_n = None``.
    """

    mean_n: Optional[float]
    var_n: Optional[float]
    mass: float
    count: Optional[int] = None

    @property
    def empty(self) -> bool:
        return self.mass <= 0.0 or self.mean_n is None or self.count == 0

    @classmethod
    def empty_cell(cls, count: Optional[int] = None) -> "Cell":
        return cls(None, None, 0.0, count)


@dataclass(frozen=True)
class OutcomeCells:
    h0_sig: Cell
    h0_nonsig: Cell
    h1_sig: Cell
    h1_nonsig: Cell

    def __post_init__(self):
        for a, b in ((self.h0_sig, self.h0_nonsig), (self.h1_sig, self.h1_nonsig)):
            if abs(a.mass + b.mass - 1.0) > 1e-8:
                raise DomainError("outcome masses under each hypothesis must sum to 1")
        for c in (self.h0_sig, self.h0_nonsig, self.h1_sig, self.h1_nonsig):
            if c.var_n is not None and c.var_n < 0:
                raise DomainError("cell variance must be nonnegative")

    @property
    def t1e(self) -> float:
        return self.h0_sig.mass

    @property
    def power(self) -> float:
        return self.h1_sig.mass


@dataclass(frozen=True)
class Moments:
    e_plus: float
    var_plus: float
    e_minus: float
    var_minus: float

    @property
    def cv_plus(self) -> float:
        return math.sqrt(self.var_plus) / self.e_plus

    @property
    def cv_minus(self) -> float:
        return math.sqrt(self.var_minus) / self.e_minus


@dataclass(frozen=True)
class AdaptiveEuii:
    euii_first: float
    euii_second: float
    e_n_plus: float
    e_n_minus: float
    cv_n_plus: float
    cv_n_minus: float
    pr_h1_given_sig: float = math.nan
    pr_h1_given_nonsig: float = math.nan


def posterior_weights(prior_h1: float, lr_plus: float, dor: float) -> Tuple[float, float]:
    """Pr(H1 | significant) and Pr(H1 | nonsignificant).

    The nonsignificant posterior follows from the significant one by
    dividing its odds by the DOR, so the prior cancels in their ratio.
    """
    if not 0.0 <= prior_h1 < 1.0:
        raise DomainError(f"prior Pr(H1) must lie in [0, 1), got {prior_h1}")
    if not dor > 0:
        raise DomainError("DOR must be positive")
    pr_sig = update_odds(prior_h1, lr_plus)
    if pr_sig >= 1.0:
        return pr_sig, prob(odds(prior_h1) * lr_plus / dor)
    return pr_sig, prob(odds(pr_sig) / dor)


def _mix(c0: Cell, c1: Cell, w1: float, label: str) -> Tuple[float, float]:
    w0 = 1.0 - w1
    parts = []
    for cell, w, name in ((c0, w0, "H0"), (c1, w1, "H1")):
        if cell.empty:
            if w > 0:
                raise DataInsufficiencyError(
                    f"{name} {label} cell is empty but has posterior weight {w:.3g}"
                )
            continue
        parts.append((cell, w))
    if not parts:
        raise DataInsufficiencyError(f"both {label} cells are empty")
    mean = sum(w * c.mean_n for c, w in parts)
    within = sum(w * c.var_n for c, w in parts)
    between = sum(w * (c.mean_n - mean) ** 2 for c, w in parts)
    return mean, within + between


def mixture_moments(cells: OutcomeCells, weights: Tuple[float, float]) -> Moments:
    """Posterior-weighted moments of N for significant and nonsignificant results.

    Args:
        cells: Per-cell sample-size moments.
        weights: (Pr(H1 | significant), Pr(H1 | nonsignificant)).

    Returns:
        Mixture mean and total variance (within + between) of N+ and N-.

    Raises:
        DataInsufficiencyError: If a cell with positive weight is empty.
    """
    w_sig, w_nonsig = weights
    e_plus, v_plus = _mix(cells.h0_sig, cells.h1_sig, w_sig, "significant")
    e_minus, v_minus = _mix(cells.h0_nonsig, cells.h1_nonsig, w_nonsig, "nonsignificant")
    return Moments(e_plus, v_plus, e_minus, v_minus)


def euii_adaptive(
    lr_plus: float,
    lr_minus: float,
    moments: Moments,
    weights: Tuple[float, float] = (math.nan, math.nan),
) -> AdaptiveEuii:
    if not (moments.e_plus > 0 and moments.e_minus > 0):
        raise DomainError("expected sample sizes must be positive")
    if not (lr_plus > 0 and lr_minus > 0):
        raise DomainError("likelihood ratios must be positive")
    log_plus, log_minus = math.log(lr_plus), math.log(lr_minus)
    cv_p, cv_m = moments.cv_plus, moments.cv_minus
    first = math.exp(log_plus / moments.e_plus - log_minus / moments.e_minus)
    second = math.exp(
        log_plus * (1.0 + cv_p**2) / moments.e_plus
        - log_minus * (1.0 + cv_m**2) / moments.e_minus
    )
    return AdaptiveEuii(
        euii_first=first,
        euii_second=second,
        e_n_plus=moments.e_plus,
        e_n_minus=moments.e_minus,
        cv_n_plus=cv_p,
        cv_n_minus=cv_m,
        pr_h1_given_sig=weights[0],
        pr_h1_given_nonsig=weights[1],
    )


def euii_from_cells(
    cells: OutcomeCells, prior_h1: float, t1e: float = None, power: float = None
) -> AdaptiveEuii:
    """Full chain: rates -> likelihood ratios -> posterior weights -> EUII.

    ``t1e`` and ``power`` default to the cell masses; the simulator passes
    clamped empirical rates instead.
    """
    t1e = cells.t1e if t1e is None else t1e
    power = cells.power if power is None else power
    if not (0.0 < t1e < 1.0 and 0.0 < power < 1.0):
        raise DomainError("rates must lie strictly inside (0, 1)")
    lr_plus = power / t1e
    lr_minus = (1.0 - power) / (1.0 - t1e)
    weights = posterior_weights(prior_h1, lr_plus, lr_plus / lr_minus)
    return euii_adaptive(lr_plus, lr_minus, mixture_moments(cells, weights), weights)
