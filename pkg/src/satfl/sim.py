"""End-to-end experiment driver over a contact plan."""

from __future__ import annotations

import dataclasses
import functools
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import learntask, orbits
from .flcore import ServerState, StepRecord, TrainingConfig, make_satellites, server_step
from .schedulers import (
    AsyncScheduler,
    FedBuffScheduler,
    FedSpaceConfig,
    FedSpaceScheduler,
    SourceTask,
    SyncScheduler,
    UtilityRegressor,
    fit_utility_regressor,
    generate_utility_samples,
    save_samples_csv,
)

SCHEDULERS = ("sync", "async", "fedbuff", "fedspace")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ConstellationConfig:
    sso_planes: int = 2
    sso_per_plane: int = 12
    sso_altitude_km: float = 500.0
    sso_inclination_deg: float = 97.4
    low_planes: int = 2
    low_per_plane: int = 12
    low_altitude_km: float = 420.0
    low_inclination_deg: float = 51.6

    @property
    def num_satellites(self) -> int:
        return self.sso_planes * self.sso_per_plane + self.low_planes * self.low_per_plane

    def build(self) -> list[orbits.OrbitalElements]:
        out = []
        if self.sso_planes:
            out += orbits.walker_constellation(
                self.sso_planes, self.sso_per_plane, self.sso_altitude_km * 1e3, math.radians(self.sso_inclination_deg)
            )
        if self.low_planes:
            out += orbits.walker_constellation(
                self.low_planes, self.low_per_plane, self.low_altitude_km * 1e3, math.radians(self.low_inclination_deg)
            )
        if not out:
            raise ConfigError("constellation has no satellites")
        return out


@dataclass(frozen=True)
class TraceConfig:
    path: str | None = None
    constellation: ConstellationConfig = ConstellationConfig()
    stations: str = "reference"  # or "none"
    alpha_min_deg: float = 5.0
    min_coverage: float = 0.5
    t0_seconds: float = 900.0
    horizon: int = 480
    substep_seconds: float = 60.0


@dataclass(frozen=True)
class TaskConfig:
    num_train: int = 20_000
    num_val: int = 4_000
    num_source: int = 10_000
    num_probe: int = 500
    dim: int = 32
    num_classes: int = 10
    class_separation: float = 2.0
    num_zones: int = 24
    zone_concentration: float = 0.1
    nuisance_dims: int = 16
    nuisance_scale: float = 5.0
    zone_half_width_deg: float = 6.0
    partition: str = "noniid"
    l2: float = 1e-4
    data_seed: int | None = None

    def __post_init__(self) -> None:
        if self.partition not in ("iid", "noniid"):
            raise ConfigError(f"partition must be 'iid' or 'noniid', got {self.partition!r}")


@dataclass(frozen=True)
class UtilityConfig:
    pretrain_rounds: int = 40
    num_samples: int = 2000
    participation: str = "mixed"
    n_trees: int = 100
    max_depth: int = 8


@dataclass(frozen=True)
class SchedulerConfig:
    name: str = "fedspace"
    buffer_size: int = 96
    fedspace: FedSpaceConfig = FedSpaceConfig()
    regressor_path: str | None = None
    utility: UtilityConfig = UtilityConfig()

    def __post_init__(self) -> None:
        if self.name not in SCHEDULERS:
            raise ConfigError(f"scheduler must be one of {SCHEDULERS}, got {self.name!r}")
        if self.buffer_size < 1:
            raise ConfigError("buffer_size must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    trace: TraceConfig = TraceConfig()
    task: TaskConfig = TaskConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    training: TrainingConfig = TrainingConfig(lr=0.2)
    alpha: float = 0.5
    eval_every: int = 4
    target_accuracy: float | None = None
    target_fraction: float | None = 0.9
    stop_at_target: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.target_accuracy is not None and not 0 < self.target_accuracy < 1:
            raise ConfigError("target_accuracy must lie in (0, 1)")
        if self.target_fraction is not None and not 0 < self.target_fraction <= 1:
            raise ConfigError("target_fraction must lie in (0, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")


@dataclass
class Metrics:
    config: dict
    t0_seconds: float
    target_accuracy: float | None
    curve: list[dict] = field(default_factory=list)
    aggregations: list[dict] = field(default_factory=list)
    staleness_histogram: dict[int, int] = field(default_factory=dict)
    idle_contacts: int = 0
    uploads: int = 0
    first_contacts: int = 0
    total_contacts: int = 0
    global_updates: int = 0
    buffered_at_end: int = 0
    steps_run: int = 0
    time_to_target_days: float | None = None

    @property
    def scheduler(self) -> str:
        return self.config["scheduler"]["name"]

    @property
    def aggregated_gradients(self) -> int:
        return sum(self.staleness_histogram.values())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["staleness_histogram"] = {str(k): v for k, v in sorted(self.staleness_histogram.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Metrics":
        d = dict(d)
        d["staleness_histogram"] = {int(k): v for k, v in d["staleness_histogram"].items()}
        return cls(**d)


def time_to_target(metrics: Metrics, target: float) -> float | None:
    """Simulated days until validation accuracy first reaches ``target``."""
    if not metrics.curve:
        raise ValueError("metrics carry no evaluations")
    for point in metrics.curve:
        if point["accuracy"] >= target:
            return point["time_index"] * metrics.t0_seconds / 86_400.0
    return None


# --- builders (cached: identical configs share traces and datasets) ----------


@functools.lru_cache(maxsize=8)
def build_trace(cfg: TraceConfig) -> orbits.ConnectivitySets:
    if cfg.path is not None:
        return orbits.load_contact_trace(cfg.path)
    stations = orbits.reference_stations() if cfg.stations == "reference" else []
    if not stations:
        raise ConfigError("trace generation needs at least one ground station")
    return orbits.compute_connectivity(
        cfg.constellation.build(),
        stations,
        math.radians(cfg.alpha_min_deg),
        cfg.t0_seconds,
        cfg.horizon,
        cfg.substep_seconds,
        cfg.min_coverage,
    )


@dataclass(frozen=True)
class TaskBundle:
    train: learntask.Dataset
    val: learntask.Dataset
    source: learntask.Dataset
    probe: learntask.Dataset
    partition: learntask.Partitioning
    source_partition: learntask.Partitioning
    ceiling: float


def _zone_visits(task: TaskConfig, trace: TraceConfig) -> np.ndarray:
    if trace.path is not None:
        raise ConfigError("non-IID partitioning needs a generated constellation, not a trace file")
    zones = orbits.grid_zones(task.num_zones, task.zone_half_width_deg)
    duration = trace.horizon * trace.t0_seconds
    return orbits.zone_visit_table(trace.constellation.build(), zones, duration)


@functools.lru_cache(maxsize=8)
def build_task(task: TaskConfig, trace: TraceConfig, num_satellites: int, seed: int) -> TaskBundle:
    data_seed = task.data_seed if task.data_seed is not None else seed
    rng = np.random.default_rng([data_seed, 0xDA7A])
    total = task.num_train + task.num_val + task.num_source + task.num_probe
    data = learntask.generate_synthetic(
        total,
        task.dim,
        task.num_classes,
        task.class_separation,
        task.num_zones,
        rng,
        task.zone_concentration,
        task.nuisance_dims,
        task.nuisance_scale,
    )
    cuts = np.cumsum([task.num_train, task.num_val, task.num_source])
    train, val, source, probe = (data.subset(idx) for idx in np.split(np.arange(total), cuts))
    part_rng = np.random.default_rng([seed, 0x9A27])
    if task.partition == "iid":
        partition = learntask.partition_iid(train, num_satellites, part_rng)
        source_partition = learntask.partition_iid(source, num_satellites, part_rng)
    else:
        visits = _zone_visits(task, trace)
        if visits.shape[1] != num_satellites:
            raise ConfigError("zone-visit table and trace disagree on the satellite count")
        partition = learntask.partition_noniid_by_visits(train, visits, part_rng)
        source_partition = learntask.partition_noniid_by_visits(source, visits, part_rng)
    ceiling = learntask.evaluate(learntask.fit_centralized(train, task.l2), val)
    return TaskBundle(train, val, source, probe, partition, source_partition, ceiling)


def _local_datasets(data: learntask.Dataset, partition: learntask.Partitioning, l2: float) -> list[learntask.LocalData]:
    out = []
    for k in range(partition.num_satellites):
        idx = partition.indices(k)
        if idx.size == 0:
            raise ConfigError(f"satellite {k} received no training samples")
        out.append(learntask.LocalData(data, idx, l2))
    return out


def initial_model(task: TaskConfig) -> np.ndarray:
    return np.zeros(learntask.model_size(task.dim, task.num_classes))


def build_source_task(config: SimConfig) -> SourceTask:
    """The held-out source split, partitioned over the satellites like the training split."""
    trace = build_trace(config.trace)
    bundle = build_task(config.task, config.trace, trace.num_satellites, config.seed)
    l2 = config.task.l2
    return SourceTask(
        _local_datasets(bundle.source, bundle.source_partition, l2),
        lambda w: learntask.dataset_loss(w, bundle.source, l2),
        initial_model(config.task),
    )


def build_regressor(config: SimConfig, samples_path: str | Path | None = None) -> UtilityRegressor:
    """Phase 1: pretrain on the source split and fit the utility regressor."""
    ucfg = config.scheduler.utility
    fcfg = config.scheduler.fedspace
    source = build_source_task(config)
    rng = np.random.default_rng([config.seed, 0x0717])
    samples = generate_utility_samples(
        source, ucfg.pretrain_rounds, ucfg.num_samples, fcfg.s_max, config.training, config.alpha, rng, ucfg.participation
    )
    if samples_path is not None:
        save_samples_csv(samples, samples_path)
    reg = fit_utility_regressor(samples, rng, ucfg.n_trees, ucfg.max_depth)
    reg.metadata.update({"seed": config.seed, "participation": ucfg.participation})
    return reg


def _make_scheduler(config: SimConfig, trace, bundle: TaskBundle, regressor) -> Any:
    sc = config.scheduler
    K = trace.num_satellites
    if sc.name == "sync":
        return SyncScheduler(K)
    if sc.name == "async":
        return AsyncScheduler()
    if sc.name == "fedbuff":
        return FedBuffScheduler(sc.buffer_size)
    if regressor is None:
        if sc.regressor_path is None:
            raise ConfigError(
                "the fedspace scheduler needs a utility regressor: run 'satfl fit-utility' "
                "and set scheduler.regressor_path (or pass --regressor)"
            )
        regressor = UtilityRegressor.load(sc.regressor_path)
    if regressor.num_satellites != K:
        raise ConfigError(f"regressor was fitted for {regressor.num_satellites} satellites, trace has {K}")
    if regressor.s_max != sc.fedspace.s_max:
        raise ConfigError("regressor s_max differs from scheduler.fedspace.s_max")
    l2 = config.task.l2
    probe = bundle.probe
    return FedSpaceScheduler(
        trace, regressor, sc.fedspace, lambda w: learntask.dataset_loss(w, probe, l2), config.seed
    )


def config_to_dict(config: SimConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: Mapping[str, Any], base: SimConfig | None = None) -> SimConfig:
    """Build a :class:`SimConfig` from nested sections; unknown keys are errors.

    Keys missing from ``data`` keep the value from ``base`` (defaults when
    ``base`` is None).
    """
    try:
        return _merge(base if base is not None else SimConfig(), data, "")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _merge(obj: Any, data: Mapping[str, Any], prefix: str) -> Any:
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a table")
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _merge(current, value, f"{prefix}{key}.")
        elif isinstance(value, Mapping):
            raise ConfigError(f"config key {prefix + key!r} is not a section")
        else:
            changes[key] = value
    return dataclasses.replace(obj, **changes)


def run(config: SimConfig, regressor: UtilityRegressor | None = None) -> Metrics:
    trace = build_trace(config.trace)
    if trace.t0_seconds != config.trace.t0_seconds and config.trace.path is None:
        raise ConfigError("trace interval mismatch")
    K = trace.num_satellites
    bundle = build_task(config.task, config.trace, K, config.seed)
    if bundle.partition.num_satellites != K:
        raise ConfigError("task partition and trace disagree on the satellite count")

    target = config.target_accuracy
    if target is None and config.target_fraction is not None:
        target = config.target_fraction * bundle.ceiling

    scheduler = _make_scheduler(config, trace, bundle, regressor)
    satellites = make_satellites(_local_datasets(bundle.train, bundle.partition, config.task.l2), config.seed)
    server = ServerState(initial_model(config.task))
    metrics = Metrics(config_to_dict(config), trace.t0_seconds, target)
    metrics.config["ceiling_accuracy"] = bundle.ceiling

    def record_eval(steps_done: int) -> bool:
        acc = learntask.evaluate(server.model, bundle.val)
        metrics.curve.append(
            {
                "time_index": steps_done,
                "hours": steps_done * trace.t0_seconds / 3600.0,
                "round": server.round,
                "accuracy": acc,
            }
        )
        if target is not None and metrics.time_to_target_days is None and acc >= target:
            metrics.time_to_target_days = steps_done * trace.t0_seconds / 86_400.0
            return True
        return False

    reached = record_eval(0)
    for i in range(trace.horizon):
        if reached and config.stop_at_target:
            break
        rec = server_step(server, trace[i], satellites, scheduler, config.training, config.alpha)
        _account(metrics, rec)
        if (i + 1) % config.eval_every == 0 or i + 1 == trace.horizon:
            reached = record_eval(i + 1) or reached
    metrics.buffered_at_end = len(server.buffer)
    plans = getattr(scheduler, "plans", None)
    if plans is not None:
        metrics.config["plans"] = [list(p.schedule.bits) for p in plans]
    return metrics


def _account(metrics: Metrics, rec: StepRecord) -> None:
    metrics.steps_run += 1
    metrics.total_contacts += len(rec.uploads) + len(rec.idle) + len(rec.first_contacts)
    metrics.uploads += len(rec.uploads)
    metrics.idle_contacts += len(rec.idle)
    metrics.first_contacts += len(rec.first_contacts)
    if rec.aggregated:
        metrics.global_updates += 1
        metrics.aggregations.append(
            {"time_index": rec.time_index, "staleness": list(rec.aggregated_staleness), "contributors": len(rec.aggregated_staleness)}
        )
        for s in rec.aggregated_staleness:
            metrics.staleness_histogram[s] = metrics.staleness_histogram.get(s, 0) + 1


# --- sweeps ------------------------------------------------------------------


def with_overrides(config: SimConfig, overrides: Mapping[str, Any]) -> SimConfig:
    """Copy of ``config`` with dotted-path fields replaced, e.g. ``{"scheduler.buffer_size": 8}``."""
    for path, value in overrides.items():
        config = _replace_path(config, path.split("."), value)
    return config


def _replace_path(obj: Any, parts: list[str], value: Any) -> Any:
    name = parts[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {name!r}")
    if len(parts) == 1:
        return dataclasses.replace(obj, **{name: value})
    return dataclasses.replace(obj, **{name: _replace_path(getattr(obj, name), parts[1:], value)})


def grid_points(grid: Mapping[str, Sequence[Any]]) -> list[tuple[tuple[str, Any], ...]]:
    if not grid:
        raise ConfigError("parameter grid is empty")
    keys = sorted(grid)
    return [tuple(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _run_point(args: tuple[SimConfig, UtilityRegressor | None, bool]) -> Metrics:
    config, regressor, fit = args
    if fit and regressor is None and config.scheduler.name == "fedspace":
        regressor = build_regressor(config)
    return run(config, regressor)


def sweep(
    base: SimConfig,
    grid: Mapping[str, Sequence[Any]],
    seeds: Sequence[int],
    workers: int = 1,
    regressor: UtilityRegressor | None = None,
    fit_regressors: bool = False,
) -> dict[tuple[tuple[tuple[str, Any], ...], int], Metrics]:
    """Run the cross product of ``grid`` and ``seeds``; results keyed by ``(grid point, seed)``.

    With ``fit_regressors`` every FedSpace run without a shared ``regressor``
    fits its own from its seed's source task.
    """
    points = grid_points(grid) if grid else [()]
    jobs = []
    for point in points:
        for seed in seeds:
            cfg = with_overrides(base, dict(point))
            jobs.append(((point, seed), (dataclasses.replace(cfg, seed=seed), regressor, fit_regressors)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, [j[1] for j in jobs]))
    else:
        results = [_run_point(j[1]) for j in jobs]
    return {key: m for (key, _), m in zip(jobs, results)}


def metrics_filename(metrics: Metrics, point: Sequence[tuple[str, Any]] = ()) -> str:
    tag = "".join(f"_{k.split('.')[-1]}-{v}" for k, v in point)
    return f"{metrics.scheduler}{tag}_seed{metrics.config['seed']}"


def write_metrics(metrics: Metrics, directory: str | Path, point: Sequence[tuple[str, Any]] = ()) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = metrics_filename(metrics, point)
    path = directory / f"{stem}.json"
    path.write_text(metrics.to_json(), encoding="utf-8")
    lines = ["time_index,hours,round,accuracy"]
    lines += [f"{p['time_index']},{p['hours']!r},{p['round']},{p['accuracy']!r}" for p in metrics.curve]
    (directory / f"{stem}_curve.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_metrics(path: str | Path) -> Metrics:
    return Metrics.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
