"""Monte Carlo engine for sequential two-sample t-test experiments.

Each replication draws ``n_max`` observations per group, N(0, 1) for
control and N(delta, 1) for treatment, and analyses them after 8, 12,
..., n_max observations per group. All stopping methods analyse the same
data, so futility variants are paired with their counterparts.

Replication ``r`` of data condition (n_max, delta) draws from a Philox
stream keyed by a hash of (master_seed, n_max, delta) and counter ``r``.
Results therefore do not depend on how replications are split between
worker processes.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from . import gsd
from .adaptive_euii import DEFAULT_PRIORS, AdaptiveEuii, Cell, OutcomeCells, euii_from_cells
from .dist import std_normal_quantile, t_quantile
from .errors import ConvergenceError, DataInsufficiencyError, DomainError

log = logging.getLogger(__name__)

N_MAX_LEVELS = (12, 16, 20, 24, 28, 32)
DELTA_LEVELS = (0.0, 0.3, 0.5, 0.8, 1.0)
METHODS = ("n_hacking", "reinagel", "pocock", "obrien_fleming", "haybittle_peto", "fixed")
FIRST_STAGE = 8
BATCH = 4
ALPHA = 0.05
HP_INTERIM = 0.001
REINAGEL_FUTILITY_P = 0.1
PP_THRESHOLD = 0.30
DEFAULT_NSIM = 100_000

EFFICACY, FUTILITY, MAX_REACHED = 1, 2, 3
REASONS = {EFFICACY: "efficacy", FUTILITY: "futility", MAX_REACHED: "max_reached"}


def stage_sizes(n_max: int) -> Tuple[int, ...]:
    """Per-group sample sizes at each analysis: 8, 12, ..., n_max."""
    if n_max < FIRST_STAGE or (n_max - FIRST_STAGE) % BATCH:
        raise DomainError(f"n_max must be 8 + 4j, got {n_max}")
    return tuple(range(FIRST_STAGE, n_max + 1, BATCH))


@dataclass(frozen=True)
class SimCondition:
    """One cell of the simulation grid.

    ``futility`` is ``"none"``, ``"pp"`` (predictive power below
    ``pp_threshold`` at the next analysis) or ``"reinagel"`` (p > 0.1);
    the reinagel method always uses the latter. The ``fixed`` method is a
    single analysis at n_max and serves as an analytic control.
    """

    n_max_per_group: int
    delta: float
    method: str
    futility: str = "none"
    pp_threshold: float = PP_THRESHOLD

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if self.method == "reinagel":
            object.__setattr__(self, "futility", "reinagel")
        elif self.futility not in ("none", "pp"):
            raise DomainError(f"futility must be 'none' or 'pp' for {self.method}")
        if self.method == "fixed" and self.futility != "none":
            raise DomainError("the fixed design has no futility rule")
        if not 0.0 < self.pp_threshold < 1.0:
            raise DomainError("pp_threshold must lie in (0, 1)")
        stage_sizes(self.n_max_per_group)

    @property
    def stages(self) -> Tuple[int, ...]:
        if self.method == "fixed":
            return (self.n_max_per_group,)
        return stage_sizes(self.n_max_per_group)

    @property
    def variant(self) -> Tuple[str, str]:
        return (self.method, self.futility)

    @property
    def label(self) -> str:
        return f"n_max={self.n_max_per_group} delta={self.delta:g} {self.method}/{self.futility}"


@dataclass(frozen=True)
class TrialRecord:
    rejected: bool
    stop_stage: int
    n_per_group_terminal: int
    reason: str


def method_levels(method: str, stages: Sequence[int]) -> Tuple[float, ...]:
    """Two-sided nominal levels for each analysis."""
    k = len(stages)
    if method in ("n_hacking", "reinagel", "fixed") or k == 1:
        return (ALPHA,) * k
    if method == "haybittle_peto":
        return (HP_INTERIM,) * (k - 1) + (ALPHA,)
    fractions = tuple(n / stages[-1] for n in stages)
    return _gs_levels(method, fractions)


@lru_cache(maxsize=None)
def _gs_levels(method: str, fractions: Tuple[float, ...]) -> Tuple[float, ...]:
    return gsd.nominal_levels(method, len(fractions), ALPHA, "two", info_fractions=fractions)


def two_sample_t(group_a, group_b) -> Tuple[float, float]:
    """Pooled-variance t statistic and two-sided p-value.

    A zero pooled variance gives p = 1 for equal means and p = 0
    otherwise.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise DomainError("each group needs at least 2 observations")
    df = na + nb - 2
    diff = b.mean() - a.mean()
    ss = ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()
    if ss == 0.0:
        return (0.0, 1.0) if diff == 0.0 else (math.copysign(math.inf, diff), 0.0)
    se = math.sqrt(ss / df * (1.0 / na + 1.0 / nb))
    t = diff / se
    return t, float(2.0 * special.stdtr(df, -abs(t)))


def two_sample_t_p(group_a, group_b) -> float:
    return two_sample_t(group_a, group_b)[1]


def predictive_power(
    z_i, n_i: int, n_next: int, a_next: float, quantile: str = "t"
):
    """Predictive power to reject two-sided at the next analysis.

    Args:
        z_i: Current z-statistic (scalar or array).
        n_i: Current per-group sample size.
        n_next: Per-group sample size at the next analysis.
        a_next: Two-sided nominal level at the next analysis.
        quantile: ``"t"`` uses the t quantile with 2 n_next - 2 df,
            ``"z"`` the normal quantile.
    """
    if not n_next > n_i:
        raise DomainError("the next analysis must be larger than the current one (f < 1)")
    if n_i <= 0:
        raise DomainError("n_i must be positive")
    if quantile == "t":
        crit = t_quantile(1.0 - a_next / 2.0, 2 * n_next - 2)
    elif quantile == "z":
        crit = std_normal_quantile(1.0 - a_next / 2.0)
    else:
        raise DomainError("quantile must be 't' or 'z'")
    return pp_at_fraction(z_i, n_i / n_next, crit)


def pp_at_fraction(z_i, f: float, crit: float):
    """Predictive power of |Z_next| >= crit given Z = z_i at information fraction f."""
    f = np.asarray(f, dtype=float)
    if not np.all((f > 0.0) & (f < 1.0)):
        raise DomainError(f"information fraction must lie in (0, 1), got {f}")
    shift = -np.asarray(crit) / np.sqrt(1.0 / f - 1.0)
    scale = np.sqrt(1.0 - f)
    z = np.asarray(z_i, dtype=float)
    pp = special.ndtr(shift + z / scale) + special.ndtr(shift - z / scale)
    return float(pp) if pp.ndim == 0 else pp


def futility_p_threshold(
    n_i: int, n_next: int, a_next: float, pp_threshold: float, quantile: str = "t"
) -> float:
    """Two-sided p-value above which predictive power falls below ``pp_threshold``.

    Returns 1.0 when even z = 0 keeps predictive power at or above the
    threshold, i.e. futility never triggers.
    """
    if not 0.0 < pp_threshold < 1.0:
        raise DomainError("pp_threshold must lie in (0, 1)")

    def gap(z):
        return predictive_power(z, n_i, n_next, a_next, quantile) - pp_threshold

    if gap(0.0) >= 0:
        return 1.0
    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise ConvergenceError("could not bracket the futility boundary")
    try:
        z = optimize.brentq(gap, 0.0, hi, xtol=1e-13, maxiter=200)
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from exc
    return float(2.0 * special.ndtr(-z))


@dataclass(frozen=True)
class StoppingRule:
    """Per-analysis efficacy levels and futility p-value bounds.

    ``futility_p[i]`` is the p-value above which the experiment stops for
    futility after analysis i (never applied at the last analysis).
    """

    stages: Tuple[int, ...]
    levels: Tuple[float, ...]
    futility_p: Optional[Tuple[float, ...]] = None


@lru_cache(maxsize=None)
def _rule(method: str, futility: str, n_max: int, pp_threshold: float, quantile: str) -> StoppingRule:
    stages = (n_max,) if method == "fixed" else stage_sizes(n_max)
    levels = method_levels(method, stages)
    k = len(stages)
    fut = None
    if futility == "reinagel":
        fut = (REINAGEL_FUTILITY_P,) * (k - 1)
    elif futility == "pp":
        # PP is increasing in |z|, so PP < threshold <=> p above a bound
        fut = tuple(
            futility_p_threshold(stages[i], stages[i + 1], levels[i + 1], pp_threshold, quantile)
            for i in range(k - 1)
        )
    return StoppingRule(stages, levels, fut)


def stopping_rule(condition: SimCondition, quantile: str = "t") -> StoppingRule:
    """Stopping rule of a condition.

    The predictive-power rule converts the current p-value to
    z = Phi^-1(1 - p/2), so it reduces to a p-value bound per analysis.
    """
    c = condition
    return _rule(c.method, c.futility, c.n_max_per_group, c.pp_threshold, quantile)


def decide(pvals: np.ndarray, condition: SimCondition, rule: Optional[StoppingRule] = None):
    """Apply a stopping method to p-value paths.

    Args:
        pvals: Array (reps, k) of two-sided p-values at each analysis.
        condition: Supplies the method, futility rule and stage sizes.
        rule: Precomputed rule; derived from ``condition`` when omitted.

    Returns:
        (rejected, stop_stage, reason) arrays; ``stop_stage`` is 1-based.
    """
    rule = stopping_rule(condition) if rule is None else rule
    pvals = np.atleast_2d(np.asarray(pvals, dtype=float))
    k = len(rule.stages)
    if pvals.shape[1] != k:
        raise DomainError(f"expected {k} p-values per path, got {pvals.shape[1]}")

    reps = pvals.shape[0]
    rejected = np.zeros(reps, dtype=bool)
    stop = np.full(reps, k, dtype=np.int64)
    reason = np.full(reps, MAX_REACHED, dtype=np.int8)
    active = np.ones(reps, dtype=bool)
    for i in range(k):
        p = pvals[:, i]
        hit = active & (p <= rule.levels[i])
        rejected[hit] = True
        stop[hit] = i + 1
        reason[hit] = EFFICACY
        active &= ~hit
        if i == k - 1 or rule.futility_p is None:
            continue
        quit_ = active & (p > rule.futility_p[i])
        stop[quit_] = i + 1
        reason[quit_] = FUTILITY
        active &= ~quit_
    return rejected, stop, reason


def _stage_pvalues(control: np.ndarray, treatment: np.ndarray, stages: Sequence[int]) -> np.ndarray:
    """Two-sided pooled t-test p-values at each stage, vectorized over rows."""
    out = np.empty((control.shape[0], len(stages)))
    for j, n in enumerate(stages):
        a, b = control[:, :n], treatment[:, :n]
        ma, mb = a.mean(axis=1), b.mean(axis=1)
        ss = ((a - ma[:, None]) ** 2).sum(axis=1) + ((b - mb[:, None]) ** 2).sum(axis=1)
        df = 2 * n - 2
        se = np.sqrt(ss / df * (2.0 / n))
        diff = mb - ma
        with np.errstate(divide="ignore", invalid="ignore"):
            t = diff / se
        p = 2.0 * special.stdtr(df, -np.abs(t))
        p = np.where(ss == 0.0, np.where(diff == 0.0, 1.0, 0.0), p)
        out[:, j] = p
    return out


def condition_key(master_seed: int, n_max: int, delta: float) -> int:
    """64-bit key of a data condition, hashed from the master seed."""
    ss = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(int(n_max), int(round(delta * 1_000_000)))
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def replication_stream(master_seed: int, n_max: int, delta: float, rep: int) -> np.random.Generator:
    key = condition_key(master_seed, n_max, delta)
    return np.random.Generator(np.random.Philox(key=key | (int(rep) << 64)))


def draw_data(stream: np.random.Generator, n_max: int, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    x = stream.standard_normal((2, n_max))
    return x[0], x[1] + delta


def simulate_trial(condition: SimCondition, stream: np.random.Generator) -> TrialRecord:
    """Simulate and analyse one sequential experiment."""
    control, treatment = draw_data(stream, condition.n_max_per_group, condition.delta)
    p = _stage_pvalues(control[None, :], treatment[None, :], condition.stages)
    rejected, stop, reason = decide(p, condition)
    stage = int(stop[0])
    return TrialRecord(
        rejected=bool(rejected[0]),
        stop_stage=stage,
        n_per_group_terminal=condition.stages[stage - 1],
        reason=REASONS[int(reason[0])],
    )


# ---------------------------------------------------------------------------
# study engine


@dataclass
class CellStats:
    """Integer sufficient statistics of terminal total sample size."""

    count: int = 0
    sum_n: int = 0
    sum_n2: int = 0

    def add(self, other: "CellStats") -> None:
        self.count += other.count
        self.sum_n += other.sum_n
        self.sum_n2 += other.sum_n2

    def cell(self, mass: float) -> Cell:
        if self.count == 0:
            return Cell.empty_cell(0)
        mean = self.sum_n / self.count
        var = max(self.sum_n2 / self.count - mean * mean, 0.0)
        return Cell(mean, var, mass, self.count)


@dataclass
class VariantStats:
    sig: CellStats = field(default_factory=CellStats)
    nonsig: CellStats = field(default_factory=CellStats)
    futility_stops: int = 0

    def add(self, other: "VariantStats") -> None:
        self.sig.add(other.sig)
        self.nonsig.add(other.nonsig)
        self.futility_stops += other.futility_stops


def _cell_stats(n_total: np.ndarray) -> CellStats:
    n = n_total.astype(np.int64)
    return CellStats(int(n.size), int(n.sum()), int((n * n).sum()))


def _run_block(args) -> Dict[Tuple[str, str], VariantStats]:
    """Work item: replications [start, stop) of one data condition."""
    master_seed, n_max, delta, rules, start, stop = args
    key = condition_key(master_seed, n_max, delta)
    reps = stop - start
    control = np.empty((reps, n_max))
    treatment = np.empty((reps, n_max))
    for j, r in enumerate(range(start, stop)):
        g = np.random.Generator(np.random.Philox(key=key | (r << 64)))
        x = g.standard_normal((2, n_max))
        control[j] = x[0]
        treatment[j] = x[1] + delta

    seq_stages = stage_sizes(n_max)
    p_seq = _stage_pvalues(control, treatment, seq_stages)
    out = {}
    for (method, futility), rule in rules:
        cond = SimCondition(n_max, delta, method, futility)
        p = p_seq if method != "fixed" else p_seq[:, -1:]
        rejected, stop_stage, reason = decide(p, cond, rule)
        n_total = 2 * np.asarray(rule.stages)[stop_stage - 1]
        out[(method, futility)] = VariantStats(
            sig=_cell_stats(n_total[rejected]),
            nonsig=_cell_stats(n_total[~rejected]),
            futility_stops=int((reason == FUTILITY).sum()),
        )
    return out


@dataclass(frozen=True)
class ConditionSummary:
    """Operating characteristics of one condition.

    Sample sizes are totals over both groups.
    """

    condition: SimCondition
    nsim: int
    seed: int
    rejection_rate: float
    rejection_mcse: float
    mean_n: float
    mean_n_mcse: float
    sig: CellStats
    nonsig: CellStats
    futility_rate: float

    @property
    def sig_cell_mean(self) -> Optional[float]:
        return self.sig.sum_n / self.sig.count if self.sig.count else None

    @property
    def nonsig_cell_mean(self) -> Optional[float]:
        return self.nonsig.sum_n / self.nonsig.count if self.nonsig.count else None


def _summarize(cond: SimCondition, stats: VariantStats, nsim: int, seed: int) -> ConditionSummary:
    r = stats.sig.count / nsim
    total = CellStats()
    total.add(stats.sig)
    total.add(stats.nonsig)
    mean = total.sum_n / nsim
    var = max(total.sum_n2 / nsim - mean * mean, 0.0)
    return ConditionSummary(
        condition=cond,
        nsim=nsim,
        seed=seed,
        rejection_rate=r,
        rejection_mcse=math.sqrt(r * (1.0 - r) / nsim),
        mean_n=mean,
        mean_n_mcse=math.sqrt(var / nsim),
        sig=stats.sig,
        nonsig=stats.nonsig,
        futility_rate=stats.futility_stops / nsim,
    )


@dataclass(frozen=True)
class EuiiRow:
    n_max_per_group: int
    delta: float
    method: str
    futility: str
    prior_h1: float
    t1e: float
    power: float
    clamped: int
    euii: AdaptiveEuii

    @property
    def lr_plus(self) -> float:
        return self.power / self.t1e

    @property
    def lr_minus(self) -> float:
        return (1.0 - self.power) / (1.0 - self.t1e)


@dataclass
class StudyResult:
    summaries: List[ConditionSummary]
    euii: List[EuiiRow]
    clamp_count: int
    nsim: int
    seed: int

    def summary(self, n_max: int, delta: float, method: str, futility: str = "none") -> ConditionSummary:
        for s in self.summaries:
            c = s.condition
            if (c.n_max_per_group, c.delta, c.method, c.futility) == (n_max, delta, method, futility):
                return s
        raise KeyError((n_max, delta, method, futility))


def default_variants(methods: Iterable[str] = METHODS) -> List[Tuple[str, str]]:
    out = []
    for m in methods:
        if m == "reinagel":
            out.append((m, "reinagel"))
        elif m == "fixed":
            out.append((m, "none"))
        else:
            out.extend([(m, "none"), (m, "pp")])
    return out


def default_grid(methods: Iterable[str] = METHODS) -> List[SimCondition]:
    return [
        SimCondition(n, d, m, f)
        for n in N_MAX_LEVELS
        for d in DELTA_LEVELS
        for m, f in default_variants(methods)
    ]


def clamp_rate(r: float, nsim: int) -> Tuple[float, bool]:
    lo = 1.0 / (2.0 * nsim)
    c = min(max(r, lo), 1.0 - lo)
    return c, c != r


def default_workers() -> int:
    return int(os.environ.get("EUII_WORKERS", "1"))


def run_study(
    grid: Sequence[SimCondition],
    nsim: int = DEFAULT_NSIM,
    master_seed: int = 1,
    workers: Optional[int] = None,
    priors: Sequence[float] = DEFAULT_PRIORS,
    chunk: int = 5_000,
    min_nsim: int = 1_000,
) -> StudyResult:
    """Simulate every condition and assemble EUII per prior.

    EUII rows exist for each condition with delta != 0 whose delta = 0
    counterpart (same n_max and method variant) is also in the grid.

    Raises:
        DataInsufficiencyError: An outcome cell needed for EUII is empty.
    """
    if nsim < min_nsim:
        raise DomainError(f"nsim must be at least {min_nsim}")
    workers = default_workers() if workers is None else workers
    by_data: Dict[Tuple[int, float], List[Tuple[str, str]]] = {}
    for c in grid:
        by_data.setdefault((c.n_max_per_group, c.delta), [])
        if c.variant not in by_data[(c.n_max_per_group, c.delta)]:
            by_data[(c.n_max_per_group, c.delta)].append(c.variant)

    items = []
    for (n_max, delta), variants in sorted(by_data.items()):
        rules = tuple(
            (v, stopping_rule(SimCondition(n_max, delta, *v))) for v in variants
        )
        for start in range(0, nsim, chunk):
            items.append((master_seed, n_max, delta, rules, start, min(start + chunk, nsim)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, items))
    else:
        results = [_run_block(it) for it in items]

    totals: Dict[Tuple[int, float, str, str], VariantStats] = {}
    for it, res in zip(items, results):
        for variant, vs in res.items():
            totals.setdefault((it[1], it[2]) + variant, VariantStats()).add(vs)

    summaries = [
        _summarize(c, totals[(c.n_max_per_group, c.delta) + c.variant], nsim, master_seed)
        for c in grid
    ]
    lookup = {(s.condition.n_max_per_group, s.condition.delta) + s.condition.variant: s for s in summaries}

    euii_rows = []
    clamps = 0
    for s in summaries:
        c = s.condition
        if c.delta == 0:
            continue
        null = lookup.get((c.n_max_per_group, 0.0) + c.variant)
        if null is None:
            continue
        t1e, ct = clamp_rate(null.rejection_rate, nsim)
        pw, cp = clamp_rate(s.rejection_rate, nsim)
        n_clamped = int(ct) + int(cp)
        clamps += n_clamped
        cells = OutcomeCells(
            null.sig.cell(t1e),
            null.nonsig.cell(1.0 - t1e),
            s.sig.cell(pw),
            s.nonsig.cell(1.0 - pw),
        )
        for prior in priors:
            try:
                e = euii_from_cells(cells, prior)
            except DataInsufficiencyError as exc:
                raise DataInsufficiencyError(f"{c.label} prior={prior:g}: {exc}") from exc
            euii_rows.append(
                EuiiRow(c.n_max_per_group, c.delta, c.method, c.futility, prior, t1e, pw, n_clamped, e)
            )
    if clamps:
        log.warning("%d empirical rates were clamped away from 0 or 1", clamps)
    return StudyResult(summaries, euii_rows, clamps, nsim, master_seed)
