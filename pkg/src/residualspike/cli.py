"""Command-line interface: ``residualspike {test,null,simulate,table,zone}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DegenerateError
from .harness import load_table_spec, run_spec
from .matgen import generate_pair, load_scenario, read_csv, write_csv
from .nulldist import (
    DEFAULT_MC_SAMPLES,
    histogram_csv,
    mp_special_case,
    null_summary,
    orderk_null_sample,
    residual_zone,
)
from .pipeline import TestConfig, run_test

EXIT_OK, EXIT_VALIDATION, EXIT_DEGENERATE = 0, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_test(args) -> int:
    x, y = read_csv(args.x), read_csv(args.y)
    cfg = TestConfig(
        k_override=args.k,
        alpha=args.alpha,
        moment_estimator="robust" if args.robust else "usual",
        null_replicates=args.samples,
        seed=args.seed,
        center=not args.no_center,
    )
    report = run_test(x, y, cfg)
    _emit(report.to_json(), args.out)
    if args.exports:
        report.write_exports(args.exports)
    return EXIT_OK


def cmd_null(args) -> int:
    model = mp_special_case(args.cx, args.cy, args.m, k=args.k, mc_samples=args.samples)
    sample = orderk_null_sample(model, args.samples, args.seed)
    summary = null_summary(model, sample if args.k > 1 else None)
    _emit(json.dumps(summary, indent=1, sort_keys=True) + "\n", args.out)
    if args.hist:
        prefix = Path(args.hist)
        for side, vals in (("max", sample.vmax), ("min", sample.vmin)):
            law = model.order1_law(side) if args.k == 1 else None
            path = prefix.with_name(f"{prefix.name}_{side}.csv")
            path.write_text(histogram_csv(vals, bins=args.bins, normal=law))
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = load_scenario(args.scenario)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y = generate_pair(spec, args.replicate)
    write_csv(x, out / "x.csv")
    write_csv(y, out / "y.csv")
    sys.stdout.write(f"wrote {out / 'x.csv'} ({x.m}x{x.n}) and {out / 'y.csv'} ({y.m}x{y.n})\n")
    return EXIT_OK


def cmd_table(args) -> int:
    spec = load_table_spec(
        args.spec,
        replicates=args.replicates,
        seed=args.seed,
        n_jobs=args.jobs,
        full=True if args.full else None,
    )
    result = run_spec(spec)
    _emit(result.to_csv(), args.out)
    if args.out:
        sys.stderr.write(f"{len(result.cells)} cells in {result.runtime_seconds:.1f}s\n")
    return EXIT_OK


def cmd_zone(args) -> int:
    z = residual_zone(args.cx, args.cy, args.variant)
    payload = {"format_version": 1, "variant": z.variant, "lower": z.lower, "upper": z.upper}
    sys.stdout.write(json.dumps(payload, indent=1) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="residualspike", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="two-sample covariance test on CSV matrices (variables as rows)")
    t.add_argument("x")
    t.add_argument("y")
    t.add_argument("--k", type=int, default=None, help="number of spikes to filter (default: select)")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--robust", action="store_true", help="use the conservative second moment")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--samples", type=int, default=DEFAULT_MC_SAMPLES, help="null Monte-Carlo size")
    t.add_argument("--no-center", action="store_true", help="skip double centering")
    t.add_argument("--out", help="write the JSON report here instead of stdout")
    t.add_argument("--exports", help="path prefix for CSV exports (spectrum, vectors, histograms)")
    t.set_defaults(func=cmd_test)

    n = sub.add_parser("null", help="Marcenko-Pastur null law of the extreme residual spikes")
    n.add_argument("--cx", type=float, required=True)
    n.add_argument("--cy", type=float, required=True)
    n.add_argument("--k", type=int, default=1)
    n.add_argument("--m", type=int, required=True)
    n.add_argument("--samples", type=int, default=DEFAULT_MC_SAMPLES)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--bins", type=int, default=60)
    n.add_argument("--out", help="JSON summary path (default stdout)")
    n.add_argument("--hist", help="histogram CSV prefix; writes PREFIX_max.csv and PREFIX_min.csv")
    n.set_defaults(func=cmd_null)

    s = sub.add_parser("simulate", help="generate one X/Y pair from a scenario file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    tb = sub.add_parser("table", help="run a simulation table from a spec file")
    tb.add_argument("--spec", required=True)
    tb.add_argument("--replicates", type=int, default=None)
    tb.add_argument("--seed", type=int, default=None)
    tb.add_argument("--jobs", type=int, default=None)
    tb.add_argument("--full", action="store_true", help="lift the desk-scale budget")
    tb.add_argument("--out", help="CSV path (default stdout)")
    tb.set_defaults(func=cmd_table)

    z = sub.add_parser("zone", help="residual-zone endpoints for Marcenko-Pastur spectra")
    z.add_argument("--cx", type=float, required=True)
    z.add_argument("--cy", type=float, required=True)
    z.add_argument("--variant", choices=("both_filtered", "x_filtered_only"), default="both_filtered")
    z.set_defaults(func=cmd_zone)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DegenerateError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DEGENERATE
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
