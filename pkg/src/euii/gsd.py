"""Group-sequential designs with efficacy boundaries only.

Boundary-crossing probabilities come from the stagewise recursion on
the score scale. With information fractions t_1 < ... < t_k = 1 and
drift theta (the mean of the final z-statistic), the score S_i = Z_i
sqrt(t_i) has independent increments S_i - S_{i-1} ~ N(theta dt, dt).
The sub-density of S_i on the continuation region is carried on a
Simpson grid from look to look; crossing masses at each look are
integrated against the exact normal tail of the next increment.

Nominal levels are on the p-value scale of the test: one-tail
probabilities for one-sided designs, two-sided p-values otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from .adaptive_euii import Cell, OutcomeCells
from .errors import ConvergenceError, DomainError
from .fixed_design import required_n

FAMILIES = ("pocock", "obrien_fleming", "haybittle_peto", "custom")

GRID_POINTS = 2001
# Root searches evaluate the recursion many times; 801 nodes already put
# the overall crossing probability within ~2e-11 of the 2001-node value.
SOLVE_GRID_POINTS = 801
GRID_SPAN = 8.0  # half-width of the grid in marginal standard deviations
ROOT_MAXITER = 200


def equal_fractions(k: int) -> Tuple[float, ...]:
    return tuple((i + 1) / k for i in range(k))


@dataclass(frozen=True)
class GsdSpec:
    nominal_levels: Tuple[float, ...]
    info_fractions: Optional[Tuple[float, ...]] = None
    family: str = "custom"
    sidedness: str = "one"
    n_max: float = 1.0

    def __post_init__(self):
        levels = tuple(float(a) for a in self.nominal_levels)
        k = len(levels)
        if k < 1:
            raise DomainError("a design needs at least one look")
        fr = self.info_fractions
        fr = equal_fractions(k) if fr is None else tuple(float(t) for t in fr)
        if len(fr) != k:
            raise DomainError("one information fraction per look is required")
        if any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] <= 0:
            raise DomainError("information fractions must be positive and strictly increasing")
        if abs(fr[-1] - 1.0) > 1e-12:
            raise DomainError("the last information fraction must be 1")
        if any(not 0.0 < a < 1.0 for a in levels):
            raise DomainError("nominal levels must lie in (0, 1)")
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.sidedness not in ("one", "two"):
            raise DomainError("sidedness must be 'one' or 'two'")
        if not self.n_max > 0:
            raise DomainError("n_max must be positive")
        object.__setattr__(self, "nominal_levels", levels)
        object.__setattr__(self, "info_fractions", fr)

    @property
    def k(self) -> int:
        return len(self.nominal_levels)

    @property
    def bounds(self) -> np.ndarray:
        """Critical values on the z scale."""
        a = np.asarray(self.nominal_levels)
        if self.sidedness == "two":
            a = a / 2.0
        return -special.ndtri(a)

    @property
    def stage_n(self) -> np.ndarray:
        return self.n_max * np.asarray(self.info_fractions)

    def with_n_max(self, n_max: float) -> "GsdSpec":
        return GsdSpec(self.nominal_levels, self.info_fractions, self.family, self.sidedness, n_max)


@dataclass(frozen=True)
class StagewiseResult:
    efficacy_upper: np.ndarray
    efficacy_lower: np.ndarray
    continue_mass: float
    stage_n: np.ndarray
    futility_stop_prob: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.futility_stop_prob is None:
            object.__setattr__(self, "futility_stop_prob", np.zeros_like(self.efficacy_upper))

    @property
    def efficacy_stop_prob(self) -> np.ndarray:
        return self.efficacy_upper + self.efficacy_lower

    @property
    def overall_reject(self) -> float:
        return float(self.efficacy_stop_prob.sum())

    @property
    def total_mass(self) -> float:
        return self.overall_reject + float(self.futility_stop_prob.sum()) + self.continue_mass

    @property
    def e_n_reject(self) -> Optional[float]:
        p = self.efficacy_stop_prob
        if p.sum() <= 0:
            return None
        return float(p @ self.stage_n / p.sum())

    @property
    def var_n_reject(self) -> Optional[float]:
        p = self.efficacy_stop_prob
        if p.sum() <= 0:
            return None
        m = p @ self.stage_n / p.sum()
        return float(max(p @ (self.stage_n - m) ** 2 / p.sum(), 0.0))

    @property
    def e_n_accept(self) -> Optional[float]:
        return float(self.stage_n[-1]) if self.continue_mass > 0 else None

    @property
    def var_n_accept(self) -> Optional[float]:
        return 0.0 if self.continue_mass > 0 else None

    def cells(self) -> Tuple[Cell, Cell]:
        """(significant, nonsignificant) cells for this drift."""
        rej = self.overall_reject
        sig = Cell(self.e_n_reject, self.var_n_reject, rej) if rej > 0 else Cell.empty_cell()
        acc = 1.0 - rej
        if acc > 0 and self.continue_mass > 0:
            nonsig = Cell(self.e_n_accept, self.var_n_accept, acc)
        else:
            nonsig = Cell.empty_cell()
        return sig, nonsig


def _simpson_weights(m: int, h: float) -> np.ndarray:
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def crossing_probabilities(
    spec: GsdSpec, drift: float, grid_points: int = GRID_POINTS
) -> StagewiseResult:
    """Stagewise rejection probabilities under a given drift.

    Args:
        spec: The design. One-sided designs reject on the upper boundary
            only; two-sided designs use symmetric boundaries and count
            crossings of either.
        drift: Mean of the final-look z-statistic, delta * sqrt(n_max)
            for a one-sample design.
        grid_points: Odd number of Simpson nodes per look.

    Returns:
        Per-look crossing masses and the mass that never crosses.
    """
    if grid_points % 2 == 0 or grid_points < 3:
        raise DomainError("grid_points must be odd and at least 3")
    theta = float(drift)
    t = np.asarray(spec.info_fractions)
    c = spec.bounds
    two = spec.sidedness == "two"
    k = spec.k
    upper = np.zeros(k)
    lower = np.zeros(k)

    x = w = f = None
    prev_t = 0.0
    for i in range(k):
        dt = t[i] - prev_t
        sd = math.sqrt(dt)
        hi = c[i] * math.sqrt(t[i])
        lo = -hi if two else -math.inf
        if i == 0:
            mean = theta * dt
            upper[i] = special.ndtr((mean - hi) / sd)
            lower[i] = special.ndtr((lo - mean) / sd) if two else 0.0
        else:
            shifted = x + theta * dt
            upper[i] = w @ (f * special.ndtr((shifted - hi) / sd))
            if two:
                lower[i] = w @ (f * special.ndtr((lo - shifted) / sd))
        if i == k - 1:
            break

        # sub-density of S_i on the continuation region
        centre = theta * t[i]
        half = GRID_SPAN * math.sqrt(t[i])
        g_lo = max(lo, centre - half)
        g_hi = min(hi, centre + half)
        if g_hi <= g_lo:
            g_lo, g_hi = lo if math.isfinite(lo) else hi - 1.0, hi
            y = np.linspace(g_lo, g_hi, grid_points)
            f_new = np.zeros_like(y)
        else:
            y = np.linspace(g_lo, g_hi, grid_points)
            if i == 0:
                f_new = np.exp(-0.5 * ((y - theta * dt) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
            else:
                z = (y[:, None] - shifted[None, :]) / sd
                kern = np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))
                f_new = kern @ (w * f)
        w = _simpson_weights(grid_points, (y[-1] - y[0]) / (grid_points - 1))
        x, f = y, f_new
        prev_t = t[i]

    if k == 1:
        cont = 1.0 - upper[0] - lower[0]
    else:
        # mass staying inside the last continuation region
        sd = math.sqrt(t[-1] - prev_t)
        hi = c[-1]
        lo = -hi if two else -math.inf
        shifted = x + theta * (t[-1] - prev_t)
        inside = special.ndtr((hi - shifted) / sd)
        if two:
            inside = inside - special.ndtr((lo - shifted) / sd)
        cont = float(w @ (f * inside))
    return StagewiseResult(upper, lower, float(cont), spec.stage_n)


def _tail(c, sidedness: str):
    p = special.ndtr(-np.asarray(c, dtype=float))
    return 2.0 * p if sidedness == "two" else p


def _solve(fn, lo: float, hi: float, what: str) -> float:
    flo, fhi = fn(lo), fn(hi)
    if flo * fhi > 0:
        raise ConvergenceError(f"could not bracket the root for {what}")
    try:
        return optimize.brentq(fn, lo, hi, xtol=1e-12, rtol=1e-13, maxiter=ROOT_MAXITER)
    except RuntimeError as exc:  # brentq signals non-convergence this way
        raise ConvergenceError(f"root search for {what} failed: {exc}") from exc


def nominal_levels(
    family: str,
    k: int,
    alpha_overall: float,
    sidedness: str = "one",
    info_fractions: Optional[Sequence[float]] = None,
    interim_level: Optional[float] = None,
    grid_points: int = SOLVE_GRID_POINTS,
) -> Tuple[float, ...]:
    """Per-look nominal significance levels.

    Pocock uses one constant critical value and O'Brien-Fleming critical
    values proportional to 1/sqrt(t_i); both are solved so that the
    overall Type-I error equals ``alpha_overall``. Haybittle-Peto uses
    a fixed small interim level (0.0005 one-sided, 0.001 two-sided by
    default) and ``alpha_overall`` at the final look, without adjustment.
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    if not 0.0 < alpha_overall < 1.0:
        raise DomainError("alpha_overall must lie in (0, 1)")
    if k == 1:
        return (float(alpha_overall),)
    fr = tuple(info_fractions) if info_fractions is not None else equal_fractions(k)
    if family == "haybittle_peto":
        a = interim_level
        if a is None:
            a = 0.0005 if sidedness == "one" else 0.001
        return tuple([float(a)] * (k - 1) + [float(alpha_overall)])
    if family == "pocock":
        shape = np.ones(k)
    elif family == "obrien_fleming":
        shape = 1.0 / np.sqrt(np.asarray(fr))
    else:
        raise DomainError(f"cannot derive nominal levels for family {family!r}")

    def excess(scale: float) -> float:
        levels = tuple(_tail(scale * shape, sidedness))
        spec = GsdSpec(levels, fr, family, sidedness)
        return crossing_probabilities(spec, 0.0, grid_points).overall_reject - alpha_overall

    z_fixed = -special.ndtri(alpha_overall / 2 if sidedness == "two" else alpha_overall)
    scale = _solve(excess, z_fixed * 0.5, z_fixed * 3.0, f"{family} critical value")
    return tuple(float(a) for a in _tail(scale * shape, sidedness))


def design(
    family: str,
    k: int,
    alpha_overall: float,
    sidedness: str = "one",
    n_max: float = 1.0,
    info_fractions: Optional[Sequence[float]] = None,
    levels: Optional[Sequence[float]] = None,
) -> GsdSpec:
    if levels is None:
        levels = nominal_levels(family, k, alpha_overall, sidedness, info_fractions)
    return GsdSpec(tuple(levels), info_fractions, family, sidedness, n_max)


def max_sample_size(
    family: str,
    k: int,
    alpha_overall: float,
    power: float,
    delta: float,
    sidedness: str = "one",
    info_fractions: Optional[Sequence[float]] = None,
    levels: Optional[Sequence[float]] = None,
) -> float:
    """Maximum (one-sample) sample size reaching ``power`` at effect ``delta``.

    Haybittle-Peto keeps the fixed-design sample size.
    """
    if not alpha_overall < power < 1.0:
        raise DomainError("power must lie in (alpha, 1)")
    if delta == 0:
        raise DomainError("delta must be nonzero")
    n_fixed = required_n(delta, alpha_overall, 1.0 - power, "one", sidedness)
    if family == "haybittle_peto":
        return n_fixed
    spec = design(family, k, alpha_overall, sidedness, 1.0, info_fractions, levels)

    def shortfall(n: float) -> float:
        drift = abs(delta) * math.sqrt(n)
        return crossing_probabilities(spec, drift, SOLVE_GRID_POINTS).overall_reject - power

    return _solve(shortfall, 0.5 * n_fixed, 3.0 * n_fixed, "maximum sample size")


def expected_sample_sizes(spec: GsdSpec, delta_alt: float, delta_null: float = 0.0) -> OutcomeCells:
    """Sample-size moments per (hypothesis, outcome) cell.

    ``spec.n_max`` sets the scale; drift is delta * sqrt(n_max).
    """
    res0 = crossing_probabilities(spec, delta_null * math.sqrt(spec.n_max))
    res1 = crossing_probabilities(spec, delta_alt * math.sqrt(spec.n_max))
    h0_sig, h0_non = res0.cells()
    h1_sig, h1_non = res1.cells()
    return OutcomeCells(h0_sig, h0_non, h1_sig, h1_non)
