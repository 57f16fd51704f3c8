"""Post-hoc single interim analysis of completed two-group experiments.

Only the final z-statistic of each experiment is known. Given it, the
interim statistic at information fraction t is N(z2 sqrt(t), 1 - t)
whatever the true effect, so interim analyses can be simulated and
stopping rules applied after the fact.

The final z-statistic is derived from the reported standardized mean
difference as g * sqrt(n_c n_t / (n_c + n_t)); no small-sample t
correction is applied.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from . import gsd
from .dist import std_normal_quantile
from .errors import DataInsufficiencyError, DomainError
from .simulator import pp_at_fraction

log = logging.getLogger(__name__)

ALPHA = 0.05
HP_INTERIM = 0.01
FUTILITY_PP = 0.10
FAMILIES = ("haybittle_peto", "obrien_fleming", "pocock")
QUANTILES = (0.025, 0.5, 0.975)


def effective_n(n1: float, n2: float) -> float:
    """Half the harmonic mean of two group sizes."""
    if n1 <= 0 or n2 <= 0:
        raise DomainError("group sizes must be positive")
    return n1 * n2 / (n1 + n2)


def interim_split(n1: int, n2: int, rounding: str = "nearest") -> Tuple[int, int]:
    """Per-group sizes at a halfway interim analysis.

    ``nearest`` rounds n/2 half up, ``ceil`` rounds up. Since n/2 is
    either whole or ends in .5, both give the same result for integers.
    """
    out = []
    for n in (n1, n2):
        if n < 2:
            raise DomainError(f"group size {n} is too small for an interim analysis")
        if rounding == "nearest":
            m = math.floor(n / 2 + 0.5)
        elif rounding == "ceil":
            m = math.ceil(n / 2)
        else:
            raise DomainError(f"unknown rounding {rounding!r}")
        if not 1 <= m < n:
            raise DomainError(f"interim size {m} does not lie below the final size {n}")
        out.append(m)
    return out[0], out[1]


def simulate_interim_z(z2, t: float, stream: np.random.Generator, size=None):
    """Draw Z1 | Z2 = z2 ~ N(z2 sqrt(t), 1 - t)."""
    if not 0.0 < t < 1.0:
        raise DomainError(f"information fraction must lie in (0, 1), got {t}")
    return stream.normal(np.asarray(z2) * math.sqrt(t), math.sqrt(1.0 - t), size=size)


@dataclass(frozen=True)
class ExperimentRow:
    id: str
    n_control: int
    n_treatment: int
    effect: float

    def __post_init__(self):
        if self.n_control < 2 or self.n_treatment < 2:
            raise DomainError(f"experiment {self.id}: each group needs at least 2 units")
        if not math.isfinite(self.effect):
            raise DomainError(f"experiment {self.id}: effect must be finite")

    @property
    def n_total(self) -> int:
        return self.n_control + self.n_treatment

    @property
    def z_final(self) -> float:
        return self.effect * math.sqrt(effective_n(self.n_control, self.n_treatment))


@dataclass(frozen=True)
class InterimMethod:
    """A two-look design: interim at about half the units, then final."""

    family: str
    futility: bool = False
    futility_pp: float = FUTILITY_PP
    pp_quantile: str = "z"
    interim_level: float = HP_INTERIM

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if not 0.0 < self.futility_pp < 1.0:
            raise DomainError("futility_pp must lie in (0, 1)")
        if self.pp_quantile not in ("z", "t"):
            raise DomainError("pp_quantile must be 'z' or 't'")
        if not 0.0 < self.interim_level < ALPHA:
            raise DomainError("interim_level must lie in (0, alpha)")

    @property
    def name(self) -> str:
        return self.family + (" + futility" if self.futility else "")

    @property
    def levels(self) -> Tuple[float, float]:
        return _levels(self.family, self.interim_level)

    @property
    def bounds(self) -> Tuple[float, float]:
        a1, a2 = self.levels
        return std_normal_quantile(1 - a1 / 2), std_normal_quantile(1 - a2 / 2)


_LEVELS: Dict[Tuple[str, float], Tuple[float, float]] = {}


def _levels(family: str, interim_level: float = HP_INTERIM) -> Tuple[float, float]:
    """Two-sided levels; ``interim_level`` only affects Haybittle-Peto."""
    key = (family, interim_level if family == "haybittle_peto" else HP_INTERIM)
    if key not in _LEVELS:
        _LEVELS[key] = gsd.nominal_levels(family, 2, ALPHA, "two", interim_level=key[1])
    return _LEVELS[key]


def default_methods(futility_pp: float = FUTILITY_PP) -> List[InterimMethod]:
    return [InterimMethod(f, False, futility_pp) for f in FAMILIES] + [
        InterimMethod(f, True, futility_pp) for f in FAMILIES
    ]


def _final_crit(method: InterimMethod, n_total) -> np.ndarray:
    """Final critical value used inside predictive power, per experiment."""
    a2 = method.levels[1]
    if method.pp_quantile == "z":
        return np.full(np.shape(n_total), std_normal_quantile(1 - a2 / 2))
    df = np.asarray(n_total, dtype=float) - 2.0
    return special.stdtrit(df, 1 - a2 / 2)


def _outcomes(z1, z2, method: InterimMethod, t, crit_pp):
    c1, c2 = method.bounds
    eff = np.abs(z1) >= c1
    if method.futility:
        fut = ~eff & (pp_at_fraction(z1, t, crit_pp) < method.futility_pp)
    else:
        fut = np.zeros_like(eff)
    stopped = eff | fut
    rejected = eff | (~stopped & (np.abs(z2) >= c2))
    return rejected, eff, fut


def apply_single_interim(
    z1,
    z2,
    method: InterimMethod,
    t=0.5,
    crit_pp=None,
):
    """Outcome of one interim rule.

    Args:
        z1: Interim z-statistic(s).
        z2: Final z-statistic(s).
        method: Boundaries and futility rule.
        t: Information fraction of the interim analysis.
        crit_pp: Critical value used inside predictive power; defaults
            to the normal quantile of the final level.

    Returns:
        (rejected, stopped_at_interim, reason) where reason is one of
        ``"efficacy"``, ``"futility"`` or ``"final"`` (arrays for array
        input).
    """
    z1a = np.asarray(z1, dtype=float)
    z2a = np.asarray(z2, dtype=float)
    crit = method.bounds[1] if crit_pp is None else crit_pp
    rejected, eff, fut = _outcomes(z1a, z2a, method, t, crit)
    stopped = eff | fut
    reason = np.where(eff, "efficacy", np.where(fut, "futility", "final"))
    if np.ndim(rejected) == 0:
        return bool(rejected), bool(stopped), str(reason)
    return rejected, stopped, reason


@dataclass(frozen=True)
class Triple:
    median: float
    lo: float
    hi: float

    @classmethod
    def of(cls, x: np.ndarray) -> "Triple":
        lo, med, hi = np.quantile(np.asarray(x, dtype=float), QUANTILES)
        return cls(float(med), float(lo), float(hi))

    @classmethod
    def constant(cls, v: float) -> "Triple":
        return cls(v, v, v)


@dataclass(frozen=True)
class ReanalysisSummary:
    method: str
    mean_n: Triple
    rejection_pct: Triple
    interim_efficacy_pct: Triple
    interim_futility_pct: Triple
    animals_saved: Triple
    reps: int


@dataclass
class Dataset:
    rows: List[ExperimentRow]
    excluded: List[Tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True)
class _Prepared:
    rows: Tuple[ExperimentRow, ...]
    z2: np.ndarray
    t: np.ndarray
    n_full: np.ndarray
    n_interim: np.ndarray


def prepare(rows: Sequence[ExperimentRow], rounding: str = "nearest") -> Tuple[_Prepared, List[Tuple[str, str]]]:
    kept, t, ni, excluded = [], [], [], []
    for r in rows:
        try:
            m1, m2 = interim_split(r.n_control, r.n_treatment, rounding)
        except DomainError as exc:
            excluded.append((r.id, str(exc)))
            continue
        kept.append(r)
        t.append(effective_n(m1, m2) / effective_n(r.n_control, r.n_treatment))
        ni.append(m1 + m2)
    if not kept:
        raise DataInsufficiencyError("no valid experiments left after exclusions")
    return (
        _Prepared(
            tuple(kept),
            np.array([r.z_final for r in kept]),
            np.array(t),
            np.array([r.n_total for r in kept], dtype=np.int64),
            np.array(ni, dtype=np.int64),
        ),
        excluded,
    )


def baseline(rows: Sequence[ExperimentRow]) -> ReanalysisSummary:
    """Deterministic no-interim row."""
    if not rows:
        raise DataInsufficiencyError("dataset is empty")
    n = np.array([r.n_total for r in rows], dtype=float)
    z2 = np.array([r.z_final for r in rows])
    rej = 100.0 * float(np.mean(np.abs(z2) >= std_normal_quantile(1 - ALPHA / 2)))
    zero = Triple.constant(0.0)
    return ReanalysisSummary(
        "No interim analysis", Triple.constant(float(n.mean())), Triple.constant(rej), zero, zero, zero, 0
    )


def _rep_block(args):
    """Per-repetition statistics for repetitions [start, stop)."""
    seed, prep, methods, start, stop = args
    key = _stream_key(seed)
    sqrt_t = np.sqrt(prep.t)
    sd = np.sqrt(1.0 - prep.t)
    n_exp = prep.z2.size
    out = {m.name: np.empty((stop - start, 5)) for m in methods}
    crit_pp = {m.name: _final_crit(m, prep.n_full) for m in methods}
    saved_if_stop = prep.n_full - prep.n_interim
    total = int(prep.n_full.sum())
    for j, r in enumerate(range(start, stop)):
        g = np.random.Generator(np.random.Philox(key=key | (r << 64)))
        z1 = prep.z2 * sqrt_t + sd * g.standard_normal(n_exp)
        for m in methods:
            rejected, eff, fut = _outcomes(z1, prep.z2, m, prep.t, crit_pp[m.name])
            saved = int(saved_if_stop[eff | fut].sum())
            used = total - saved
            out[m.name][j] = (
                used / n_exp,
                100.0 * rejected.mean(),
                100.0 * eff.mean(),
                100.0 * fut.mean(),
                saved,
            )
    return out


def _stream_key(seed: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(0x5EA,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def reanalyze(
    rows: Sequence[ExperimentRow],
    methods: Optional[Sequence[InterimMethod]] = None,
    reps: int = 10_000,
    seed: int = 1,
    rounding: str = "nearest",
    workers: int = 1,
    chunk: int = 500,
) -> Tuple[List[ReanalysisSummary], List[Tuple[str, str]]]:
    """Simulate interim analyses for every experiment and summarize.

    Every repetition draws one interim statistic per experiment and
    applies all methods to the same draws. Per repetition the mean total
    sample size, the percentages of rejections, interim efficacy stops
    and interim futility stops, and the animals saved are recorded; the
    summary reports their median and 2.5%/97.5% quantiles.

    Returns:
        The summary rows (baseline first) and the exclusion log.
    """
    if reps < 1:
        raise DomainError("reps must be positive")
    methods = list(default_methods() if methods is None else methods)
    prep, excluded = prepare(rows, rounding)
    # solve the levels once here rather than in every worker
    for m in methods:
        _ = m.levels
    items = [(seed, prep, methods, s, min(s + chunk, reps)) for s in range(0, reps, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_rep_block, items))
    else:
        blocks = [_rep_block(it) for it in items]

    summaries = [baseline(prep.rows)]
    for m in methods:
        stats = np.concatenate([b[m.name] for b in blocks])
        summaries.append(
            ReanalysisSummary(
                m.name,
                Triple.of(stats[:, 0]),
                Triple.of(stats[:, 1]),
                Triple.of(stats[:, 2]),
                Triple.of(stats[:, 3]),
                Triple.of(stats[:, 4]),
                reps,
            )
        )
    return summaries, excluded


REQUIRED_COLUMNS = ("id", "n_control", "n_treatment", "effect")


def read_dataset(path) -> Dataset:
    """Read a delimited dataset with columns id, n_control, n_treatment, effect.

    Comma, semicolon and tab delimiters are detected. Rows with missing or
    malformed fields, or failing the row invariants, are skipped and
    listed in ``excluded`` as (row id or line number, reason).
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    if not text.strip():
        raise DataInsufficiencyError(f"{path}: zero valid rows (file is empty)")
    try:
        dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t")
    except csv.Error:
        dialect = csv.excel
    reader = csv.DictReader(text.splitlines(), dialect=dialect)
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise DataInsufficiencyError(f"{path}: missing columns {missing}")
    ds = Dataset([])
    for line, raw in enumerate(reader, start=2):
        rec = {(k or "").strip(): (v or "").strip() for k, v in raw.items() if k is not None}
        ident = rec.get("id") or f"line {line}"
        if any(not rec.get(c) for c in REQUIRED_COLUMNS[1:]):
            ds.excluded.append((ident, "missing field"))
            continue
        try:
            row = ExperimentRow(
                ident, _as_int(rec["n_control"]), _as_int(rec["n_treatment"]), float(rec["effect"])
            )
        except (ValueError, DomainError) as exc:
            ds.excluded.append((ident, str(exc)))
            continue
        ds.rows.append(row)
    if not ds.rows:
        raise DataInsufficiencyError(f"{path}: zero valid rows")
    return ds


def _as_int(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"group size {s!r} is not an integer")
    return int(v)
