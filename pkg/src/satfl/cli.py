"""Command-line front end: ``satfl gen-trace | fit-utility | run | sweep | report``.

Every subcommand reads an optional TOML config whose sections mirror
:class:`satfl.sim.SimConfig` (``[trace]``, ``[task]``, ``[scheduler]``,
``[scheduler.fedspace]``, ...).  Unknown keys are rejected.  Exit codes:
0 on success, 1 on usage or configuration errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import orbits, sim
from .schedulers import UtilityRegressor

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config helpers ----------------------------------------------------------


def load_config(path: str | Path | None) -> tuple[sim.SimConfig, dict]:
    """Parse a TOML config; returns the config and its optional ``[sweep]`` table."""
    if path is None:
        return sim.SimConfig(), {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    sweep_table = data.pop("sweep", {})
    return sim.config_from_dict(data), sweep_table


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_assignment(text: str) -> tuple[str, Any]:
    """``key=value`` with a TOML literal (bare words become strings)."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), _parse_value(value.strip())


def parse_grid_axis(text: str) -> tuple[str, list]:
    """``key=v1,v2,...`` for sweeps."""
    key, sep, values = text.partition("=")
    if not sep or not key.strip() or not values.strip():
        raise UsageError(f"expected KEY=V1,V2,..., got {text!r}")
    return key.strip(), [_parse_value(v.strip()) for v in values.split(",")]


def _apply_common(config: sim.SimConfig, args: argparse.Namespace) -> sim.SimConfig:
    overrides = dict(parse_assignment(a) for a in getattr(args, "set", None) or [])
    if getattr(args, "scheduler", None):
        overrides["scheduler.name"] = args.scheduler
    if getattr(args, "m", None) is not None:
        overrides["scheduler.buffer_size"] = args.m
    if getattr(args, "regressor", None):
        overrides["scheduler.regressor_path"] = args.regressor
    if getattr(args, "trace", None):
        overrides["trace.path"] = args.trace
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return sim.with_overrides(config, overrides)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -------------------------------------------------------------


def trace_stats(sets: orbits.ConnectivitySets) -> dict:
    counts, visits = orbits.connectivity_stats(sets)
    days = sets.horizon * sets.t0_seconds / 86_400.0
    return {
        "horizon": sets.horizon,
        "num_satellites": sets.num_satellites,
        "t0_seconds": sets.t0_seconds,
        "connected_per_index": counts.tolist(),
        "connected_min": int(counts.min()),
        "connected_max": int(counts.max()),
        "connected_mean": float(counts.mean()),
        "visits_per_satellite": visits.tolist(),
        "visits_per_day_min": float(visits.min() / days),
        "visits_per_day_max": float(visits.max() / days),
        "never_connected": int(np.sum(visits == 0)),
    }


def cmd_gen_trace(args: argparse.Namespace) -> int:
    config, _ = load_config(args.config)
    config = _apply_common(config, args)
    if config.trace.path is not None:
        raise UsageError("gen-trace builds a trace from the constellation; drop trace.path")
    sets = sim.build_trace(config.trace)
    out = _out_dir(args.out)
    orbits.save_contact_trace(sets, out / "trace.csv")
    stats = trace_stats(sets)
    (out / "trace_stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(
        f"wrote {out / 'trace.csv'}: {sets.horizon} indices, {sets.num_satellites} satellites, "
        f"|C_i| in [{stats['connected_min']}, {stats['connected_max']}]"
    )
    return EXIT_OK


def cmd_fit_utility(args: argparse.Namespace) -> int:
    config, _ = load_config(args.config)
    config = _apply_common(config, args)
    out = _out_dir(args.out)
    reg = sim.build_regressor(config, samples_path=out / "utility_samples.csv" if args.save_samples else None)
    path = out / "regressor.joblib"
    reg.save(path)
    report = {
        "holdout_mse": reg.holdout_mse,
        "holdout_variance": reg.holdout_variance,
        "num_samples": reg.num_samples,
        "num_satellites": reg.num_satellites,
        "s_max": reg.s_max,
        "seed": config.seed,
    }
    (out / "utility_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {path}: holdout MSE {reg.holdout_mse:.3e} vs target variance {reg.holdout_variance:.3e}")
    return EXIT_OK


def _regressor_for(config: sim.SimConfig, fit: bool) -> UtilityRegressor | None:
    if config.scheduler.name != "fedspace" or config.scheduler.regressor_path is not None or not fit:
        return None
    return sim.build_regressor(config)


def cmd_run(args: argparse.Namespace) -> int:
    config, _ = load_config(args.config)
    config = _apply_common(config, args)
    metrics = sim.run(config, _regressor_for(config, args.fit_regressor))
    path = sim.write_metrics(metrics, _out_dir(args.out))
    ttt = metrics.time_to_target_days
    print(f"wrote {path}: {metrics.global_updates} global updates, time to target {_fmt_days(ttt)} days")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config, table = load_config(args.config)
    config = _apply_common(config, args)
    grid = {k: list(v) for k, v in table.get("grid", {}).items()}
    unknown = set(table) - {"grid", "seeds"}
    if unknown:
        raise UsageError(f"unknown [sweep] keys: {sorted(unknown)}")
    grid.update(parse_grid_axis(a) for a in args.grid or [])
    seeds = args.seeds if args.seeds is not None else table.get("seeds", [config.seed])
    if not seeds:
        raise UsageError("no seeds to run")
    results = sim.sweep(config, grid, seeds, args.workers, fit_regressors=args.fit_regressor)
    out = _out_dir(args.out)
    for (point, _seed), metrics in results.items():
        sim.write_metrics(metrics, out, point)
    print(f"wrote {len(results)} runs to {out}")
    return EXIT_OK


def run_label(metrics: sim.Metrics) -> str:
    sched = metrics.config["scheduler"]
    if sched["name"] == "fedbuff":
        return f"fedbuff(M={sched['buffer_size']})"
    return sched["name"]


def _fmt_days(days: float | None) -> str:
    return "-" if days is None or not math.isfinite(days) else f"{days:.2f}"


def summarize(runs: Sequence[sim.Metrics], reference: str | None = None) -> list[dict]:
    """One row per scheduler label: median time-to-target over seeds and gain vs ``reference``.

    Unreached targets count as infinite; a median of infinity means "not reached".
    The gain of a row is its time divided by the reference time.
    """
    groups: dict[str, list[sim.Metrics]] = {}
    for m in runs:
        groups.setdefault(run_label(m), []).append(m)
    medians = {}
    for label, ms in groups.items():
        times = [m.time_to_target_days if m.time_to_target_days is not None else math.inf for m in ms]
        medians[label] = float(np.median(times))
    if reference is None:
        reference = "fedspace" if "fedspace" in groups else min(medians, key=lambda k: (medians[k], k))
    if reference not in groups:
        raise UsageError(f"reference scheduler {reference!r} has no runs")
    ref = medians[reference]
    rows = []
    for label in sorted(groups):
        t = medians[label]
        gain = t / ref if math.isfinite(t) and math.isfinite(ref) and ref > 0 else None
        rows.append({"scheduler": label, "runs": len(groups[label]), "time_to_target_days": t, "gain": gain})
    return rows


def _load_runs(directory: Path) -> list[sim.Metrics]:
    if not directory.is_dir():
        raise UsageError(f"{directory} is not a directory")
    runs = []
    for path in sorted(directory.glob("*.json")):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and "curve" in data and "staleness_histogram" in data:
            runs.append(sim.Metrics.from_dict(data))
    if not runs:
        raise UsageError(f"no metrics files in {directory}")
    return runs


def cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.metrics_dir)
    runs = _load_runs(directory)
    rows = summarize(runs, args.reference)
    out = _out_dir(args.out) if args.out else directory
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheduler", "runs", "time_to_target_days", "gain"])
        for r in rows:
            gain = "-" if r["gain"] is None else f"{r['gain']:.2f}"
            writer.writerow([r["scheduler"], r["runs"], _fmt_days(r["time_to_target_days"]), gain])
    with open(out / "staleness_histogram.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheduler", "seed", "staleness", "count"])
        for m in sorted(runs, key=lambda m: (run_label(m), m.config["seed"])):
            for s, c in sorted(m.staleness_histogram.items()):
                writer.writerow([run_label(m), m.config["seed"], s, c])
    with open(out / "idleness.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheduler", "seed", "idle", "uploads", "first_contacts", "total_contacts", "idle_fraction"])
        for m in sorted(runs, key=lambda m: (run_label(m), m.config["seed"])):
            frac = m.idle_contacts / m.total_contacts if m.total_contacts else 0.0
            writer.writerow(
                [run_label(m), m.config["seed"], m.idle_contacts, m.uploads, m.first_contacts, m.total_contacts, f"{frac:.4f}"]
            )
    width = max(len(r["scheduler"]) for r in rows)
    print(f"{'scheduler':<{width}}  runs  days  gain")
    for r in rows:
        gain = "-" if r["gain"] is None else f"{r['gain']:.2f}x"
        print(f"{r['scheduler']:<{width}}  {r['runs']:>4}  {_fmt_days(r['time_to_target_days']):>4}  {gain}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="satfl", description="Federated learning over satellite contact plans.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, out_default: str) -> None:
        p.add_argument("--config", help="TOML config file (sections mirror SimConfig)")
        p.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")

    p = sub.add_parser("gen-trace", help="compute a contact trace and its statistics")
    common(p, "out/trace")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("fit-utility", help="generate utility samples and fit the regressor")
    common(p, "out/utility")
    p.add_argument("--save-samples", action="store_true", help="also write utility_samples.csv")
    p.set_defaults(func=cmd_fit_utility)

    def run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scheduler", choices=sim.SCHEDULERS)
        p.add_argument("--m", type=int, help="FedBuff buffer size")
        p.add_argument("--regressor", help="fitted utility regressor for fedspace")
        p.add_argument("--trace", help="contact trace CSV to replay instead of the generated one")
        p.add_argument("--fit-regressor", action="store_true", help="fit the fedspace regressor in-process")

    p = sub.add_parser("run", help="run one experiment")
    common(p, "out/runs")
    run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid over seeds")
    common(p, "out/sweep")
    run_flags(p)
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2", help="grid axis over a dotted config key")
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], help="comma-separated seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a directory of metrics files")
    p.add_argument("metrics_dir")
    p.add_argument("--reference", help="scheduler label the gains are measured against (default: fedspace)")
    p.add_argument("--out", help="directory for the CSV outputs (default: the metrics directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, sim.ConfigError) as exc:
        print(f"satfl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"satfl: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
