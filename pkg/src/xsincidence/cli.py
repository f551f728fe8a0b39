"""Command-line interface.

Exit codes: 0 success, 2 invalid input (schema, scenario or arguments),
3 estimation failure. Errors are also written to stderr as one JSON line
with ``error``, ``message`` and, where known, ``row``/``column``.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__, assay, harness
from . import io as xio
from .assay import RitaCharacteristics
from .errors import DomainError, EstimationError, SchemaError
from .estimators import estimate_with_ci, only_recent, shadow_period

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3
SEED_ENV = "XSINCIDENCE_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report("usage", message)
        raise SystemExit(EXIT_INPUT)


def _report(category, message, **extra):
    doc = {"error": category, "message": message}
    doc.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _seed(args):
    """Seed from ``--seed``, else from the environment, else None."""
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise SchemaError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# ---------------------------------------------------------------- commands


def cmd_estimate(args):
    sample = xio.read_sample_csv(args.sample)
    f = xio.read_model(args.model)
    chars = xio.read_characteristics(args.chars)
    standard = estimate_with_ci(sample, f, chars, args.level, "standard")
    enhanced_sample = only_recent(sample, chars.cutoff) if args.only_recent else sample
    enhanced = estimate_with_ci(enhanced_sample, f, chars, args.level, "enhanced")
    if args.only_recent:
        enhanced = _with_flag(enhanced, "only_recent_prior_tests")
    rows = [standard, enhanced]
    text = xio.estimates_to_json(rows) if args.format == "json" else xio.estimates_to_csv(rows)
    _emit(text, args.output)
    return EXIT_OK


def _with_flag(est, flag):
    return replace(est, flags=tuple(est.flags) + (flag,))


def cmd_simulate(args):
    fallback = args.seed if args.seed is not None else (os.environ.get(SEED_ENV) or None)
    config = xio.read_scenario(args.scenario, default_seed=fallback)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if overrides:
        try:
            config = replace(config, **overrides)
        except DomainError as exc:
            raise SchemaError(f"invalid scenario: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = harness.run_scenario(config, workers=args.workers)
    xio.write_scenario(config, out / "scenario.json")
    table.to_csv(out / "metrics.csv")
    table.to_json(out / "metrics.json")
    if not args.no_replicates:
        harness.replicate_csv(table, out / "replicates.csv")
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_calibrate(args):
    durations, recent = xio.read_calibration_csv(args.calibration)
    if not 0 <= args.frr <= 1:
        raise SchemaError(f"--frr must be a probability, got {args.frr}")
    f = assay.fit_phi_arrays(durations, recent, degree=args.degree, cutoff=args.cutoff,
                             frr_tail=args.frr)
    chars = RitaCharacteristics.from_fit(f, args.frr, args.frr_variance)
    xio.write_model(f, args.output)
    if args.chars_output is not None:
        xio.write_characteristics(chars, args.chars_output)
    half = norm.ppf(0.5 + args.level / 2.0) * np.sqrt(chars.mdri_variance)
    summary = {
        "degree": f.degree,
        "cutoff": f.cutoff,
        "n_records": int(np.sum(durations < f.cutoff)),
        "mdri_years": chars.mdri,
        "mdri_days": chars.mdri * assay.DAYS_PER_YEAR,
        "mdri_se_years": float(np.sqrt(chars.mdri_variance)),
        "level": args.level,
        "mdri_ci_years": [chars.mdri - half, chars.mdri + half],
        "mdri_ci_days": [(chars.mdri - half) * assay.DAYS_PER_YEAR,
                         (chars.mdri + half) * assay.DAYS_PER_YEAR],
    }
    sys.stdout.write(xio.dump_json(summary))
    return EXIT_OK


def cmd_shadow(args):
    f = xio.read_model(args.model)
    chars = xio.read_characteristics(args.chars)
    q, t = xio.read_prior_tests_csv(args.prior_tests)
    omega = shadow_period(f, chars, (q, t))
    sys.stdout.write(xio.dump_json({"shadow_period_years": omega,
                                    "shadow_period_days": omega * assay.DAYS_PER_YEAR}))
    return EXIT_OK


def cmd_reproduce(args):
    seed = _seed(args)
    if seed is None:
        raise SchemaError(f"reproduce needs --seed or {SEED_ENV}")
    scenarios = harness.reference_scenarios(args.replicates, seed, args.sample_size)
    names = args.scenario or list(scenarios)
    unknown = [n for n in names if n not in scenarios]
    if unknown:
        raise SchemaError(f"unknown scenarios {unknown}; choose from {sorted(scenarios)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    combined = harness.MetricsTable([])
    points = []
    for name in names:
        table = harness.run_scenario(scenarios[name], workers=args.workers, keep_replicates=False)
        combined.extend(table)
        for row in table.rows:
            if row.estimator != "standard" and np.isfinite(row.pct_mse_reduction):
                points.append((row.estimator, name, row.pct_mse_reduction))
    combined.to_csv(out / "metrics.csv")
    combined.to_json(out / "metrics.json")
    _write_points(points, out / "plot_data.csv")
    sys.stdout.write(combined.to_csv())
    return EXIT_OK


def _write_points(points, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("series", "scenario", "pct_mse_reduction"))
        for series, name, y in points:
            writer.writerow((series, name, repr(float(y))))


# ------------------------------------------------------------------ parser


def _level(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return value


def build_parser():
    parser = _Parser(prog="xsincidence", description="Cross-sectional HIV incidence estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="standard and enhanced estimates from a survey CSV")
    p.add_argument("sample", help="sample CSV")
    p.add_argument("--model", required=True, help="fitted test-recent model (JSON)")
    p.add_argument("--chars", required=True, help="assay characteristics (JSON)")
    p.add_argument("--only-recent", action="store_true",
                   help="ignore prior tests taken more than T* years ago in the enhanced estimate")
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-o", "--output", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help=f"overrides the scenario seed (default from {SEED_ENV} "
                                            "when the scenario has none)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-replicates", action="store_true", help="skip the per-replicate CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit the test-recent curve")
    p.add_argument("calibration", help="calibration CSV")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--cutoff", type=float, default=2.0)
    p.add_argument("--frr", type=float, default=0.0, help="false recent rate beyond the cutoff")
    p.add_argument("--frr-variance", type=float, default=0.0)
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("-o", "--output", required=True, help="model JSON to write")
    p.add_argument("--chars-output", help="also write assay characteristics JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("shadow", help="mean shadow period of the enhanced estimator")
    p.add_argument("prior_tests", help="prior tests CSV (or a sample CSV)")
    p.add_argument("--model", required=True)
    p.add_argument("--chars", required=True)
    p.set_defaults(func=cmd_shadow)

    p = sub.add_parser("reproduce", help="run the reference simulation scenarios")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--sample-size", type=int, default=5000)
    p.add_argument("--scenario", action="append", help="run only this scenario (repeatable)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        _report("schema", str(exc), row=exc.row, column=exc.column)
        return EXIT_INPUT
    except (DomainError, OSError) as exc:
        _report("input", str(exc))
        return EXIT_INPUT
    except EstimationError as exc:
        details = {k: (v if isinstance(v, (int, str)) else float(v)) for k, v in exc.details.items()
                   if isinstance(v, (int, float, str, np.floating, np.integer))}
        _report("estimation", str(exc), details=details or None)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
