"""Command-line entry point: ``delaysindy {simulate,discover,validate,report}``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dde_sim import BENCHMARKS, HistorySegment, IntegrationDiverged, benchmark, integrate, read_trajectory
from .experiments import PRESETS, ConfigError, ExperimentConfig, preset, read_report, run_experiment, write_report
from .sindy import format_model, model_from_json, model_to_system
from .surrogate import GpFitError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("delaysindy")


def _parse_params(items) -> dict[str, float]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"parameter {item!r} must look like name=value")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"parameter {key!r} has a non-numeric value {value!r}") from None
    return out


def cmd_simulate(args) -> int:
    system, history = benchmark(args.system, _parse_params(args.param), args.history)
    traj = integrate(system, history, args.t_end, args.step, args.dt)
    traj.to_csv(args.out)
    print(f"wrote {len(traj.times)} samples of {args.system} to {args.out}")
    return EXIT_OK


def _load_config(args) -> ExperimentConfig:
    if (args.config is None) == (args.preset is None):
        raise ConfigError("give exactly one of --config or --preset")
    cfg = preset(args.preset) if args.preset else ExperimentConfig.from_json(args.config)
    overrides = {}
    for key in ("mode", "seed", "runs"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.derivatives is not None:
        overrides["derivative_source"] = args.derivatives
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def cmd_discover(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    out = Path(args.out or f"results/{cfg.name}")
    path = write_report(report, out)
    _print_summary(report.to_dict())
    grid_run = next((r for r in report.runs if r.equations), None)
    if grid_run is not None:
        print(f"\nmodel at {grid_run.strategy} optimum {grid_run.argmin}:\n{grid_run.equations}")
    print(f"\nreport written to {path}")
    failed = [r for r in report.runs if r.error]
    return EXIT_NUMERIC if failed and len(failed) == len(report.runs) else EXIT_OK


def cmd_validate(args) -> int:
    model = model_from_json(Path(args.model).read_text())
    data = read_trajectory(args.data)
    cols = list(range(model.n)) if args.observed is None else args.observed
    if len(cols) != model.n:
        raise ConfigError(f"model has {model.n} equations but {len(cols)} observed columns were given")
    truth = data.states[:, cols]
    system = model_to_system(model)
    history = HistorySegment.constant(truth[0], max(system.max_delay, args.step))
    span = data.times[-1] - data.times[0]
    sim = integrate(system, history, span, args.step, data.dt)
    lo = data.times[0] if args.start is None else args.start
    hi = data.times[-1] if args.stop is None else args.stop
    rows = (data.times >= lo - 1e-9) & (data.times <= hi + 1e-9)
    if not rows.any():
        raise ConfigError(f"no samples in the window [{lo}, {hi}]")
    dev = np.abs(sim.states[: len(truth)] - truth)[rows]
    metrics = {
        "window": [float(lo), float(hi)],
        "samples": int(rows.sum()),
        "max_abs_deviation": float(dev.max()),
        "rms_deviation": float(np.sqrt(np.mean(dev ** 2))),
        "per_variable_max": dev.max(axis=0).tolist(),
    }
    print(format_model(model))
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def _print_summary(doc: dict) -> None:
    print(f"experiment {doc['config']['name']} (grid size {doc['provenance']['feasible_grid_size']})")
    print(f"{'strategy':<9}{'runs':>5}{'failed':>7}{'success':>9}{'mean calls':>12}{'reduction %':>13}")
    for strategy, agg in doc["aggregates"].items():
        calls = "-" if agg["mean_calls"] is None else f"{agg['mean_calls']:.1f}"
        red = "-" if agg["mean_reduction"] is None else f"{agg['mean_reduction']:.1f}"
        print(f"{strategy:<9}{agg['runs']:>5}{agg['failed']:>7}{agg['success_count']:>9}{calls:>12}{red:>13}")


def cmd_report(args) -> int:
    doc = read_report(args.report)
    _print_summary(doc)
    if args.csv:
        names = [u["name"] for u in doc["config"]["unknowns"]]
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "seed", *names, "min_value", "calls", "reduction", "success",
                        "validation_error"])
            for r in doc["runs"]:
                argmin = r["argmin"] or [""] * len(names)
                w.writerow([r["strategy"], "" if r["seed"] is None else r["seed"], *argmin,
                            r["min_value"], r["calls"], r["reduction"], int(r["success"]),
                            r["validation_error"]])
        print(f"per-run table written to {args.csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaysindy",
                                description="Identify delay differential equations from time series.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate a benchmark DDE and write a CSV")
    s.add_argument("--system", required=True, choices=sorted(BENCHMARKS))
    s.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="system parameter, repeatable (e.g. --param rho=1.8 --param tau=1)")
    s.add_argument("--history", type=float, nargs="+", help="constant initial function value(s)")
    s.add_argument("--t-end", type=float, default=30.0)
    s.add_argument("--step", type=float, default=1e-3, help="integrator step")
    s.add_argument("--dt", type=float, default=0.01, help="output sampling interval")
    s.add_argument("--out", required=True, help="destination CSV")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("discover", help="search delays/parameters and fit a sparse model")
    d.add_argument("--config", help="experiment configuration (JSON)")
    d.add_argument("--preset", choices=sorted(PRESETS))
    d.add_argument("--mode", choices=("bo", "grid", "both"))
    d.add_argument("--seed", type=int)
    d.add_argument("--runs", type=int)
    d.add_argument("--derivatives", choices=("exact", "numeric"))
    d.add_argument("--out", help="report directory (default results/<experiment name>)")
    d.set_defaults(func=cmd_discover)

    v = sub.add_parser("validate", help="re-simulate a fitted model against a data CSV")
    v.add_argument("--model", required=True, help="model JSON as written in a report")
    v.add_argument("--data", required=True, help="trajectory CSV (t,x1..)")
    v.add_argument("--observed", type=int, nargs="+", help="data columns matching the model equations")
    v.add_argument("--start", type=float, help="start of the comparison window")
    v.add_argument("--stop", type=float, help="end of the comparison window")
    v.add_argument("--step", type=float, default=1e-3)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("report", help="summarize a report and export a plot-ready table")
    r.add_argument("report", help="report.json or its directory")
    r.add_argument("--csv", help="write one row per run to this CSV")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationDiverged, FloatingPointError, GpFitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
