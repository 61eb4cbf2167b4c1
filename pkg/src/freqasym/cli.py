"""Command-line interface.

    freqasym run --scenario scenario6.cfg --system wscc9.sys --out results/
    freqasym analyze --input trace.csv --nominal 50 --out report/

`run` executes a seeded scenario batch and writes per-seed traces,
per-seed metrics, the aggregated results table and a JSON run summary.
`analyze` ingests a 1-second measurement CSV and writes the metrics
report (text + CSV) and the density histogram.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .analyzer import analyze, parse_frequency_csv
from .engine import Engine
from .metrics import histogram_to_csv, report_to_csv, report_to_text, trace_to_csv
from .scenarios import (
    emit_results_table,
    load_scenario,
    prepare_system,
    run_batch,
)

FULL_HORIZON_S = 48 * 3600.0


def _data_path(name: str) -> Path:
    """Resolve a file argument against the cwd, then the shipped data."""
    p = Path(name)
    if p.exists():
        return p
    shipped = Path(__file__).parent / "data" / name
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"no such file: {name}")


def _cmd_run(args) -> int:
    scenario = load_scenario(_data_path(args.scenario))
    if args.full:
        scenario = replace(scenario, horizon_s=FULL_HORIZON_S, seeds=(scenario.seeds[0],))
    if args.horizon is not None:
        scenario = replace(scenario, horizon_s=args.horizon)
    if args.dt is not None:
        scenario = replace(scenario, dt_s=args.dt)
    if args.seeds is not None:
        scenario = replace(scenario, seeds=tuple(range(args.seeds)))
    system = prepare_system(scenario, _data_path(args.system))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    batch = run_batch(scenario, system, band_half_width=args.band, workers=args.workers)

    metrics_rows = []
    for res in batch.results:
        (out / f"trace_seed{res.seed}.csv").write_text(trace_to_csv(res.trace))
        sched = Engine.build_ramp_schedule(scenario.noise, scenario.horizon_s, res.seed)
        if sched is not None:
            (out / f"ramp_schedule_seed{res.seed}.csv").write_text(sched.to_csv())
        r = res.report
        metrics_rows.append(
            f"{res.seed},{r.sigma!r},{r.sigma_minus!r},{r.sigma_plus!r},"
            f"{r.delta_sigma!r},{r.minutes_outside!r},{r.minutes_above!r},"
            f"{r.minutes_below!r}"
        )
    med = batch.median_metrics
    metrics_rows.append(
        "median,{sigma!r},{sigma_minus!r},{sigma_plus!r},{delta_sigma!r},"
        "{minutes_outside!r},{minutes_above!r},{minutes_below!r}".format(**med)
    )
    header = (
        "seed,sigma_f_hz,sigma_minus_hz,sigma_plus_hz,delta_sigma_hz,"
        "minutes_outside,minutes_above,minutes_below"
    )
    (out / "metrics.csv").write_text(header + "\n" + "\n".join(metrics_rows) + "\n")
    (out / "results_table.csv").write_text(emit_results_table({scenario.name: batch}))

    summary = {
        "scenario": scenario.name,
        "system": str(args.system),
        "horizon_s": scenario.horizon_s,
        "dt_s": scenario.dt_s,
        "seeds": list(scenario.seeds),
        "band_half_width_hz": args.band,
        "median": med,
        "failures": [list(f) for f in batch.failures],
        "wall_time_s": batch.wall_time_s,
        "per_seed_summaries": [json.loads(r.summary.to_json()) for r in batch.results],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    print(f"{scenario.name}: {len(batch.results)} seed(s) done, "
          f"median sigma_f = {med['sigma']:.4f} Hz, "
          f"delta_sigma_f = {med['delta_sigma']:.4f} Hz, "
          f"minutes outside = {med['minutes_outside']:.2f}")
    if batch.failures:
        for seed, msg in batch.failures:
            print(f"  seed {seed} FAILED: {msg}", file=sys.stderr)
        return 1
    return 0


def _cmd_analyze(args) -> int:
    trace = parse_frequency_csv(
        args.input,
        gap_policy=args.gap_policy,
        f_nominal=args.nominal,
        sample_period=args.period,
    )
    report, hist = analyze(trace, band_half_width=args.band, bin_width=args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report_to_text(report))
    (out / "metrics.csv").write_text(report_to_csv(report))
    (out / "histogram.csv").write_text(histogram_to_csv(hist))
    print(report_to_text(report), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqasym",
        description="Stochastic grid frequency simulation and asymmetry analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario batch")
    run_p.add_argument("--scenario", required=True, help="scenario .cfg file (or shipped name)")
    run_p.add_argument("--system", default="wscc9.sys", help="system .sys file (or shipped name)")
    run_p.add_argument("--seeds", type=int, default=None,
                       help="override: run seeds 0..N-1 instead of the file's list")
    run_p.add_argument("--horizon", type=float, default=None, help="override horizon, seconds")
    run_p.add_argument("--dt", type=float, default=None, help="override step size, seconds")
    run_p.add_argument("--band", type=float, default=0.1,
                       help="band half-width in Hz for the minutes-outside criterion "
                            "(band-edge samples count as inside)")
    run_p.add_argument("--workers", type=int, default=None, help="parallel seed workers")
    run_p.add_argument("--full", action="store_true",
                       help="single 48 h trajectory instead of the seeded batch")
    run_p.add_argument("--out", default="results", help="output directory")
    run_p.set_defaults(func=_cmd_run)

    an_p = sub.add_parser("analyze", help="analyze a measurement CSV")
    an_p.add_argument("--input", required=True, help="CSV with timestamp and frequency columns")
    an_p.add_argument("--nominal", type=float, default=50.0, help="nominal frequency, Hz")
    an_p.add_argument("--band", type=float, default=0.1,
                      help="band half-width in Hz (band-edge samples count as inside)")
    an_p.add_argument("--bins", type=float, default=0.005, help="histogram bin width, Hz")
    an_p.add_argument("--gap-policy", choices=("error", "drop", "hold-last"), default="error",
                      help="how to treat missing samples (default: reject the file)")
    an_p.add_argument("--period", type=float, default=None,
                      help="declared sample period, seconds (default: inferred)")
    an_p.add_argument("--out", default="report", help="output directory")
    an_p.set_defaults(func=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
