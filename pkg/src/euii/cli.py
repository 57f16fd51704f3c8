"""Command-line front end.

Subcommands: ``euii``, ``gsd``, ``simulate``, ``reanalyze`` and a hidden
``dist`` for debugging quantiles. Exit codes: 0 success, 2 usage,
3 data, 4 numeric.

Stochastic subcommands write their result files plus ``manifest.json``
into ``--out``. Passing that manifest back with ``--manifest`` reruns
the command with the recorded parameters; only ``--out`` and
``--workers`` may be overridden, and neither changes the result files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__, dist, gsd, reanalysis, simulator
from .adaptive_euii import DEFAULT_PRIORS, euii_from_cells
from .errors import (
    ConvergenceError,
    DataInsufficiencyError,
    DegenerateEvidenceError,
    DomainError,
    EuiiError,
)
from .evidence import euii_fixed, likelihood_ratios
from .fixed_design import DesignPoint, euii_asymptote, power as design_power, required_n

log = logging.getLogger("euii")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST_NAME = "manifest.json"
# Keys of a manifest's parameter set that a replay may override.
REPLAY_OVERRIDES = ("out", "workers")

SIMULATE_COLUMNS = (
    "n_max_per_group", "delta", "method", "futility", "prior_h1", "nsim", "seed",
    "rejection_rate", "rejection_mcse", "mean_n", "mean_n_mcse", "futility_rate",
    "n_sig", "e_n_sig", "n_nonsig", "e_n_nonsig",
    "t1e", "power", "lr_plus", "lr_minus", "dor",
    "pr_h1_sig", "pr_h1_nonsig", "e_n_plus", "cv_n_plus", "e_n_minus", "cv_n_minus",
    "euii_first", "euii_second", "clamped",
)
"""Header of the simulation summary, one row per (condition, prior).

Sample sizes are totals over both groups. Columns from ``t1e`` onwards
are empty for delta = 0 conditions, which only serve as the null
counterpart of the other conditions.
"""

REANALYSIS_COLUMNS = tuple(
    ["method"]
    + [
        f"{q}{s}"
        for q in ("mean_n", "rejection_pct", "interim_efficacy_pct", "interim_futility_pct", "animals_saved")
        for s in ("", "_lo", "_hi")
    ]
    + ["reps"]
)


class UsageError(EuiiError):
    """Flags that are individually valid but contradict each other."""


# ---------------------------------------------------------------- output


def _human(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format(v, ".6g")
    if isinstance(v, (list, tuple)):
        return ";".join(_human(x) for x in v)
    return str(v)


def _machine(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_machine(x) for x in v)
    return str(v)


def _json_safe(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def render(rows: List[Dict[str, Any]], fmt: str, columns: Optional[Sequence[str]] = None) -> str:
    """Render rows as an aligned table, CSV or JSON."""
    columns = list(columns or (rows[0].keys() if rows else []))
    if fmt == "json":
        data = [{c: _json_safe(r.get(c)) for c in columns} for r in rows]
        return json.dumps(data, indent=2, allow_nan=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_machine(r.get(c)) for c in columns])
        return buf.getvalue()
    cells = [[_human(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _file_fmt(fmt: str) -> str:
    return "json" if fmt == "json" else "csv"


# ---------------------------------------------------------------- manifest


def write_manifest(out: Path, command: str, params: Dict[str, Any], duration: float, outputs: List[str]) -> Path:
    manifest = {
        "subcommand": command,
        "params": params,
        "seed": params.get("seed"),
        "reps": params.get("reps"),
        "version": __version__,
        "duration_s": duration,
        "outputs": outputs,
    }
    path = out / MANIFEST_NAME
    _write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _recorded_params(args: argparse.Namespace, skip: Sequence[str] = ()) -> Dict[str, Any]:
    drop = {"command", "func", "manifest", "out", *skip}
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def _apply_manifest(args: argparse.Namespace, argv_flags: set) -> None:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataInsufficiencyError(f"cannot read manifest {args.manifest}: {exc}") from exc
    if manifest.get("subcommand") != args.command:
        raise UsageError(
            f"manifest was written by {manifest.get('subcommand')!r}, not {args.command!r}"
        )
    for key, value in manifest.get("params", {}).items():
        if key in REPLAY_OVERRIDES and key in argv_flags:
            continue
        setattr(args, key, value)


# ---------------------------------------------------------------- euii


def cmd_euii(args: argparse.Namespace) -> int:
    if args.n is not None and args.beta is not None:
        raise UsageError("--n and --beta are contradictory: give the sample size or the target power")
    pw = args.power
    if args.beta is not None:
        if pw is not None and not math.isclose(pw, 1.0 - args.beta, rel_tol=0, abs_tol=1e-12):
            raise UsageError("--power and --beta disagree")
        pw = 1.0 - args.beta
    arms = "one" if args.arms == 1 else "two"
    n = args.n
    if pw is None:
        if n is None or args.delta is None:
            raise UsageError("give --power (or --beta), or both --n and --delta")
        pw = design_power(DesignPoint(args.delta, n, args.alpha, arms, args.sidedness, args.test))
    if n is None:
        if args.delta is None:
            raise UsageError("--delta is required when --n is not given")
        n = required_n(args.delta, args.alpha, 1.0 - pw, arms, args.sidedness)
    lr = likelihood_ratios(pw, args.alpha)
    row = {
        "power": pw,
        "alpha": args.alpha,
        "lr_plus": lr.lr_plus,
        "lr_minus": lr.lr_minus,
        "dor": lr.dor,
        "n": n,
        "euii": euii_fixed(lr.dor, n),
        "asymptote": None if args.delta is None else euii_asymptote(args.delta, arms),
    }
    sys.stdout.write(render([row], args.format))
    return EXIT_OK


# ---------------------------------------------------------------- gsd


def cmd_gsd(args: argparse.Namespace) -> int:
    priors = args.prior or list(DEFAULT_PRIORS)
    levels = gsd.nominal_levels(
        args.family, args.looks, args.alpha, args.sidedness, interim_level=args.interim_level
    )
    spec = gsd.GsdSpec(tuple(levels), None, args.family, args.sidedness)
    t1e = gsd.crossing_probabilities(spec, 0.0).overall_reject
    n_max = gsd.max_sample_size(
        args.family, args.looks, args.alpha, args.power, args.delta, args.sidedness, levels=levels
    )
    cells = gsd.expected_sample_sizes(spec.with_n_max(n_max), args.delta)
    rows = []
    for prior in priors:
        e = euii_from_cells(cells, prior)
        rows.append(
            {
                "family": args.family,
                "looks": args.looks,
                "nominal_levels": list(levels),
                "overall_t1e": t1e,
                "power": cells.power,
                "n_max": n_max,
                "e_n_h0_sig": cells.h0_sig.mean_n,
                "e_n_h0_nonsig": cells.h0_nonsig.mean_n,
                "e_n_h1_sig": cells.h1_sig.mean_n,
                "e_n_h1_nonsig": cells.h1_nonsig.mean_n,
                "prior_h1": prior,
                "e_n_plus": e.e_n_plus,
                "e_n_minus": e.e_n_minus,
                "euii_first": e.euii_first,
            }
        )
    sys.stdout.write(render(rows, args.format))
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def read_grid(path) -> List[simulator.SimCondition]:
    """Read a grid file with columns n_max_per_group, delta, method[, futility, pp_threshold]."""
    text = Path(path).read_text(encoding="utf-8-sig")
    reader = csv.DictReader(text.splitlines())
    need = {"n_max_per_group", "delta", "method"}
    if not reader.fieldnames or not need <= set(reader.fieldnames):
        raise DataInsufficiencyError(f"{path}: grid needs columns {sorted(need)}")
    grid = []
    for line, rec in enumerate(reader, start=2):
        try:
            grid.append(
                simulator.SimCondition(
                    int(rec["n_max_per_group"]),
                    float(rec["delta"]),
                    rec["method"].strip(),
                    (rec.get("futility") or "none").strip(),
                    float(rec.get("pp_threshold") or simulator.PP_THRESHOLD),
                )
            )
        except (ValueError, DomainError) as exc:
            raise DataInsufficiencyError(f"{path}, line {line}: {exc}") from exc
    if not grid:
        raise DataInsufficiencyError(f"{path}: grid is empty")
    return grid


def _build_grid(args) -> List[simulator.SimCondition]:
    if args.grid:
        return read_grid(args.grid)
    return [
        simulator.SimCondition(n, d, m, f)
        for n in args.n_max
        for d in args.deltas
        for m, f in simulator.default_variants(args.methods)
    ]


def simulation_rows(result: simulator.StudyResult, priors: Sequence[float]) -> List[Dict[str, Any]]:
    euii_by_key = {
        (r.n_max_per_group, r.delta, r.method, r.futility, r.prior_h1): r for r in result.euii
    }
    rows = []
    for s in result.summaries:
        c = s.condition
        for prior in priors:
            row = {
                "n_max_per_group": c.n_max_per_group,
                "delta": c.delta,
                "method": c.method,
                "futility": c.futility,
                "prior_h1": prior,
                "nsim": s.nsim,
                "seed": s.seed,
                "rejection_rate": s.rejection_rate,
                "rejection_mcse": s.rejection_mcse,
                "mean_n": s.mean_n,
                "mean_n_mcse": s.mean_n_mcse,
                "futility_rate": s.futility_rate,
                "n_sig": s.sig.count,
                "e_n_sig": s.sig_cell_mean,
                "n_nonsig": s.nonsig.count,
                "e_n_nonsig": s.nonsig_cell_mean,
            }
            e = euii_by_key.get((c.n_max_per_group, c.delta, c.method, c.futility, prior))
            if e is not None:
                a = e.euii
                row.update(
                    t1e=e.t1e,
                    power=e.power,
                    lr_plus=e.lr_plus,
                    lr_minus=e.lr_minus,
                    dor=e.lr_plus / e.lr_minus,
                    pr_h1_sig=a.pr_h1_given_sig,
                    pr_h1_nonsig=a.pr_h1_given_nonsig,
                    e_n_plus=a.e_n_plus,
                    cv_n_plus=a.cv_n_plus,
                    e_n_minus=a.e_n_minus,
                    cv_n_minus=a.cv_n_minus,
                    euii_first=a.euii_first,
                    euii_second=a.euii_second,
                    clamped=e.clamped,
                )
            rows.append(row)
    return rows


def cmd_simulate(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    out = Path(args.out)
    grid = _build_grid(args)
    workers = simulator.default_workers() if args.workers is None else args.workers
    result = simulator.run_study(grid, args.reps, args.seed, workers, args.priors)
    fmt = _file_fmt(args.format)
    rows = simulation_rows(result, args.priors)
    name = f"summary.{fmt}"
    _write(out / name, render(rows, fmt, SIMULATE_COLUMNS))
    params = _recorded_params(args)
    write_manifest(out, "simulate", params, time.perf_counter() - start, [name])
    if result.clamp_count:
        log.warning("%d rates clamped; see the 'clamped' column", result.clamp_count)
    if args.format == "table":
        show = [r for r in rows if r.get("euii_first") is not None]
        cols = ("n_max_per_group", "delta", "method", "futility", "prior_h1",
                "rejection_rate", "mean_n", "euii_first", "euii_second")
        sys.stdout.write(render(show, "table", cols))
    return EXIT_OK


# ---------------------------------------------------------------- reanalyze


def reanalysis_rows(summaries: Sequence[reanalysis.ReanalysisSummary]) -> List[Dict[str, Any]]:
    rows = []
    for s in summaries:
        row: Dict[str, Any] = {"method": s.method, "reps": s.reps}
        for key in ("mean_n", "rejection_pct", "interim_efficacy_pct", "interim_futility_pct", "animals_saved"):
            t = getattr(s, key)
            row[key], row[key + "_lo"], row[key + "_hi"] = t.median, t.lo, t.hi
        rows.append(row)
    return rows


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_reanalyze(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    out = Path(args.out)
    if getattr(args, "data_sha256", None) and _sha256(args.data) != args.data_sha256:
        raise DataInsufficiencyError(f"{args.data} differs from the file recorded in the manifest")
    ds = reanalysis.read_dataset(args.data)
    workers = simulator.default_workers() if args.workers is None else args.workers
    methods = reanalysis.default_methods(args.futility_pp)
    summaries, excluded = reanalysis.reanalyze(
        ds.rows, methods, args.reps, args.seed, args.rounding, workers
    )
    excluded = ds.excluded + excluded
    for ident, reason in excluded:
        print(f"excluded {ident}: {reason}", file=sys.stderr)
    fmt = _file_fmt(args.format)
    rows = reanalysis_rows(summaries)
    names = [f"reanalysis.{fmt}", f"exclusions.{fmt}"]
    _write(out / names[0], render(rows, fmt, REANALYSIS_COLUMNS))
    _write(
        out / names[1],
        render([{"id": i, "reason": r} for i, r in excluded], fmt, ("id", "reason")),
    )
    params = _recorded_params(args)
    params["data_sha256"] = _sha256(args.data)
    write_manifest(out, "reanalyze", params, time.perf_counter() - start, names)
    if args.format == "table":
        cols = ("method", "mean_n", "rejection_pct", "interim_efficacy_pct",
                "interim_futility_pct", "animals_saved", "animals_saved_lo", "animals_saved_hi")
        sys.stdout.write(render(rows, "table", cols))
    return EXIT_OK


# ---------------------------------------------------------------- dist


def cmd_dist(args: argparse.Namespace) -> int:
    rows = []
    for v in args.values:
        if args.fn == "quantile":
            if args.family == "normal":
                r = dist.std_normal_quantile(v)
            elif args.family == "t":
                r = dist.t_quantile(v, args.df)
            else:
                raise UsageError("quantiles are available for normal and t only")
        else:
            if args.family == "normal":
                r = dist.std_normal_cdf(v)
            elif args.family == "t":
                r = dist.t_cdf(v, args.df)
            else:
                r = dist.noncentral_t_cdf(v, args.df, args.ncp)
        rows.append({"family": args.family, "fn": args.fn, "x": v, "value": r})
    sys.stdout.write(render(rows, args.format))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _probability(s: str) -> float:
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{s} is not in (0, 1)")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{s} is not a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="euii", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"euii {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(
        dest="command", metavar="{euii,gsd,simulate,reanalyze}", required=True
    )

    def common(p, formats=("table", "csv", "json")):
        p.add_argument("--format", choices=formats, default="table",
                       help="table prints 6 significant digits; csv and json keep full precision")

    p = sub.add_parser("euii", help="fixed-design DOR and EUII")
    p.add_argument("--power", type=_probability)
    p.add_argument("--beta", type=_probability, help="Type-II error rate; sets power = 1 - beta")
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--delta", type=float, help="standardized effect size")
    p.add_argument("--arms", type=int, choices=(1, 2), default=1)
    p.add_argument("--test", choices=("z", "t"), default="z")
    p.add_argument("--sidedness", choices=("one", "two"), default="two")
    p.add_argument("--n", type=float, help="total sample size; computed from power if absent")
    common(p)
    p.set_defaults(func=cmd_euii)

    p = sub.add_parser("gsd", help="group-sequential design characteristics")
    p.add_argument("--family", choices=("pocock", "obrien_fleming", "haybittle_peto"), required=True)
    p.add_argument("--looks", type=_positive_int, default=4)
    p.add_argument("--alpha", type=_probability, default=0.025)
    p.add_argument("--sidedness", choices=("one", "two"), default="one")
    p.add_argument("--power", type=_probability, default=0.9)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--prior", type=_probability, action="append", help="Pr(H1); repeatable")
    p.add_argument("--interim-level", type=_probability, help="Haybittle-Peto interim level")
    common(p)
    p.set_defaults(func=cmd_gsd)

    p = sub.add_parser("simulate", help="Monte Carlo study of adaptive two-group designs")
    p.add_argument("--grid", help="CSV grid file; default is the full factorial grid")
    p.add_argument("--n-max", type=_positive_int, nargs="+", default=list(simulator.N_MAX_LEVELS))
    p.add_argument("--deltas", type=float, nargs="+", default=list(simulator.DELTA_LEVELS))
    p.add_argument("--methods", nargs="+", choices=simulator.METHODS, default=list(simulator.METHODS))
    p.add_argument("--reps", type=_positive_int, default=simulator.DEFAULT_NSIM)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=_positive_int, help="default: $EUII_WORKERS or 1")
    p.add_argument("--priors", type=_probability, nargs="+", default=list(DEFAULT_PRIORS))
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--manifest", help="replay a previous run")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reanalyze", help="post-hoc interim analyses of a dataset")
    p.add_argument("--data", help="CSV with id, n_control, n_treatment, effect")
    p.add_argument("--reps", type=_positive_int, default=10_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--futility-pp", type=_probability, default=reanalysis.FUTILITY_PP)
    p.add_argument("--rounding", choices=("nearest", "ceil"), default="nearest")
    p.add_argument("--workers", type=_positive_int, help="default: $EUII_WORKERS or 1")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--manifest", help="replay a previous run")
    common(p)
    p.set_defaults(func=cmd_reanalyze)

    p = sub.add_parser("dist")
    p.add_argument("fn", choices=("cdf", "quantile"))
    p.add_argument("values", type=float, nargs="+")
    p.add_argument("--family", choices=("normal", "t", "nct"), default="normal")
    p.add_argument("--df", type=float, default=math.inf)
    p.add_argument("--ncp", type=float, default=0.0)
    common(p)
    p.set_defaults(func=cmd_dist)
    return parser


def _given_flags(argv: Sequence[str]) -> set:
    return {a[2:].split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        if getattr(args, "manifest", None):
            _apply_manifest(args, _given_flags(argv))
        if args.command == "reanalyze" and not args.data:
            raise UsageError("--data is required")
        return args.func(args)
    except UsageError as exc:
        print(f"euii {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateEvidenceError, ConvergenceError) as exc:
        print(f"euii {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"euii {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataInsufficiencyError, OSError) as exc:
        print(f"euii {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, EuiiError) as exc:
        print(f"euii {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
