"""Aggregation schedulers: synchronous, asynchronous, buffered, and the forecast-driven planner.

The planner works in two phases.  Offline, it replays stale local updates
against a pretrained model sequence to learn how much loss an aggregation
with a given staleness profile removes.  Online, every ``horizon`` time
indices it forecasts the staleness each candidate aggregation pattern would
produce over the known contact plan and keeps the pattern with the highest
predicted total loss reduction.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import joblib
import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .flcore import (
    BufferEntry,
    GradientDelta,
    Objective,
    SatelliteState,
    ServerState,
    TrainingConfig,
    aggregate,
    local_train,
)
from .orbits import ConnectivitySets

REGRESSOR_FORMAT = "satfl-utility-regressor"
REGRESSOR_VERSION = 1


# --- indicator baselines -----------------------------------------------------


def sync_indicator(contributors: Iterable[int], num_satellites: int) -> int:
    return int(set(contributors) == set(range(num_satellites)))


def async_indicator(contributors: Iterable[int]) -> int:
    return int(len(set(contributors)) > 0)


def fedbuff_indicator(contributors: Iterable[int], buffer_size: int) -> int:
    if buffer_size < 1:
        raise ValueError("buffer size M must be >= 1")
    return int(len(set(contributors)) >= buffer_size)


class SyncScheduler:
    name = "sync"

    def __init__(self, num_satellites: int):
        self.num_satellites = num_satellites

    def decide(self, time_index: int, connected: Sequence[int], server: ServerState) -> int:
        return sync_indicator(server.contributors, self.num_satellites)


class AsyncScheduler:
    name = "async"

    def decide(self, time_index: int, connected: Sequence[int], server: ServerState) -> int:
        return async_indicator(server.contributors)


class FedBuffScheduler:
    name = "fedbuff"

    def __init__(self, buffer_size: int):
        if buffer_size < 1:
            raise ValueError("buffer size M must be >= 1")
        self.buffer_size = buffer_size

    def decide(self, time_index: int, connected: Sequence[int], server: ServerState) -> int:
        return fedbuff_indicator(server.contributors, self.buffer_size)


class FixedScheduler:
    """Serves a precomputed bit per time index (0 past the end)."""

    name = "fixed"

    def __init__(self, bits: Sequence[int], offset: int = 0):
        self.bits = [int(b) for b in bits]
        self.offset = offset

    def decide(self, time_index: int, connected: Sequence[int], server: ServerState) -> int:
        j = time_index - self.offset
        return self.bits[j] if 0 <= j < len(self.bits) else 0


# --- schedule and staleness types --------------------------------------------


@dataclass(frozen=True)
class ScheduleVector:
    bits: tuple[int, ...]
    start_index: int = 0

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("schedule entries must be 0 or 1")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def num_aggregations(self) -> int:
        return sum(self.bits)


@dataclass(frozen=True)
class StalenessVector:
    entries: np.ndarray  # -1 marks a satellite that does not contribute
    agg_index: int


@dataclass(frozen=True)
class Snapshot:
    """What the ground station knows at the start of a time index."""

    round: int
    base_round: tuple[int | None, ...]
    pending: tuple[bool, ...]
    buffer: tuple[tuple[int, int], ...] = ()  # (satellite_id, staleness)

    @property
    def num_satellites(self) -> int:
        return len(self.base_round)

    @classmethod
    def fresh(cls, num_satellites: int) -> "Snapshot":
        return cls(0, (None,) * num_satellites, (False,) * num_satellites)


def snapshot(server: ServerState, satellites: Sequence[SatelliteState]) -> Snapshot:
    return Snapshot(
        server.round,
        tuple(s.base_round for s in satellites),
        tuple(s.pending is not None for s in satellites),
        tuple((e.satellite_id, e.staleness) for e in server.buffer),
    )


@dataclass
class Forecast:
    staleness_vectors: list[StalenessVector] = field(default_factory=list)
    uploads: list[tuple[int, int, int]] = field(default_factory=list)  # (index, satellite, staleness)
    idle: list[tuple[int, int]] = field(default_factory=list)  # (index, satellite)
    first_contacts: list[tuple[int, int]] = field(default_factory=list)

    @property
    def idle_count(self) -> int:
        return len(self.idle)


def forecast_staleness(
    schedule: ScheduleVector | Sequence[int],
    window: Sequence[Sequence[int]],
    snap: Snapshot,
    start_index: int | None = None,
) -> Forecast:
    """Replay the contact plan under ``schedule`` without touching any model.

    Mirrors :func:`satfl.flcore.server_step`: uploads first, then the
    aggregation decision (a no-op on an empty buffer), then downloads of the
    newest model.  Staleness therefore counts aggregations between a
    satellite's base download and the delivery of its delta.
    """
    if isinstance(schedule, ScheduleVector):
        bits, start = schedule.bits, schedule.start_index
    else:
        bits, start = tuple(int(b) for b in schedule), 0
    if start_index is not None:
        start = start_index
    if len(window) != len(bits):
        raise ValueError(f"window has {len(window)} indices but schedule has {len(bits)}")
    K = snap.num_satellites
    if len(snap.pending) != K:
        raise ValueError("snapshot fields disagree on the satellite count")

    rnd = snap.round
    base = list(snap.base_round)
    pending = list(snap.pending)
    buffer = list(snap.buffer)
    out = Forecast()
    for offset, members in enumerate(window):
        l = start + offset
        for k in members:
            if not 0 <= k < K:
                raise ValueError(f"satellite id {k} outside snapshot")
            if base[k] is None:
                out.first_contacts.append((l, k))
            elif pending[k]:
                s = rnd - base[k]
                buffer.append((k, s))
                pending[k] = False
                out.uploads.append((l, k, s))
            else:
                out.idle.append((l, k))
        if bits[offset] and buffer:
            entries = np.full(K, -1, dtype=int)
            for k, s in buffer:
                entries[k] = s
            out.staleness_vectors.append(StalenessVector(entries, l))
            rnd += 1
            buffer = []
        for k in members:
            if base[k] is None or rnd > base[k]:
                base[k] = rnd
                pending[k] = True
    return out


def batch_staleness(
    bits: np.ndarray, window: Sequence[Sequence[int]], snap: Snapshot
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`forecast_staleness` over many schedules.

    ``bits`` has shape ``(trials, I0)``.  Returns ``(trial_ids, vectors)``
    with one row of ``vectors`` (length K) per effective aggregation.
    """
    bits = np.asarray(bits, dtype=bool)
    trials, horizon = bits.shape
    if len(window) != horizon:
        raise ValueError(f"window has {len(window)} indices but schedule has {horizon}")
    K = snap.num_satellites
    rnd = np.full(trials, snap.round, dtype=np.int64)
    base = np.tile(np.array([-1 if b is None else b for b in snap.base_round], dtype=np.int64), (trials, 1))
    pending = np.tile(np.array(snap.pending, dtype=bool), (trials, 1))
    buf = np.full((trials, K), -1, dtype=np.int64)
    for k, s in snap.buffer:
        buf[:, k] = s

    trial_ids, vectors = [], []
    for offset, members in enumerate(window):
        if members:
            m = np.asarray(members, dtype=int)
            b = base[:, m]
            up = (b >= 0) & pending[:, m]
            buf[:, m] = np.where(up, rnd[:, None] - b, buf[:, m])
            pending[:, m] &= ~up
        agg = bits[:, offset] & (buf >= 0).any(axis=1)
        if agg.any():
            idx = np.flatnonzero(agg)
            trial_ids.append(idx)
            vectors.append(buf[idx].copy())
            rnd[idx] += 1
            buf[idx] = -1
        if members:
            b = base[:, m]
            newer = (b < 0) | (rnd[:, None] > b)
            base[:, m] = np.where(newer, rnd[:, None], b)
            pending[:, m] |= newer
    if not trial_ids:
        return np.zeros(0, dtype=int), np.zeros((0, K), dtype=np.int64)
    return np.concatenate(trial_ids), np.concatenate(vectors)


# --- featurisation -----------------------------------------------------------


def featurize(staleness: StalenessVector | Sequence[int] | np.ndarray, status: float, s_max: int) -> np.ndarray:
    """Staleness histogram ``[#(-1), #0, ..., #s_max]`` followed by the training status."""
    entries = staleness.entries if isinstance(staleness, StalenessVector) else np.asarray(staleness)
    return featurize_batch(np.asarray(entries, dtype=int)[None, :], status, s_max)[0]


def featurize_batch(vectors: np.ndarray, status: float | np.ndarray, s_max: int) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=int)
    if vectors.size and (vectors.min() < -1 or vectors.max() > s_max):
        raise ValueError(f"staleness entries must lie in [-1, {s_max}]")
    n = len(vectors)
    hist = np.zeros((n, s_max + 2))
    rows = np.repeat(np.arange(n), vectors.shape[1])
    np.add.at(hist, (rows, vectors.ravel() + 1), 1.0)
    status_col = np.broadcast_to(np.asarray(status, dtype=float), (n,))
    return np.column_stack([hist, status_col])


# --- phase 1: utility samples and regressor ----------------------------------


@dataclass(frozen=True)
class UtilitySample:
    features: np.ndarray
    delta_f: float


@dataclass
class SourceTask:
    """Source-domain stand-in for the deployment task.

    ``partitions`` play the role of the K satellites; ``loss`` evaluates the
    full source objective.
    """

    partitions: Sequence[Objective]
    loss: Callable[[np.ndarray], float]
    initial_model: np.ndarray

    @property
    def num_satellites(self) -> int:
        return len(self.partitions)


def pretrain_sequence(
    source: SourceTask, rounds: int, training: TrainingConfig, seed: int
) -> list[np.ndarray]:
    """Models ``w^0 .. w^rounds`` from full-participation rounds of local SGD averaging."""
    models = [np.array(source.initial_model, dtype=float)]
    root = np.random.SeedSequence([seed, 0x5EED])
    for r, child in enumerate(root.spawn(rounds)):
        rngs = [np.random.default_rng(c) for c in child.spawn(source.num_satellites)]
        w = models[-1]
        deltas = [
            local_train(w, part, training.steps, training.batch_size, training.lr, rng, r).delta
            for part, rng in zip(source.partitions, rngs)
        ]
        models.append(w + np.mean(deltas, axis=0))
    return models


def draw_staleness(
    num_satellites: int, s_max: int, rng: np.random.Generator, participation: str = "uniform"
) -> np.ndarray:
    """Random staleness vector over ``{-1, 0, ..., s_max}``.

    ``uniform`` draws every entry uniformly.  ``mixed`` first draws a
    participation rate p ~ U(0, 1); each satellite contributes with
    probability p and, when it does, its staleness is uniform on ``0..s_max``.
    """
    if participation == "uniform":
        return rng.integers(-1, s_max + 1, size=num_satellites)
    if participation == "mixed":
        p = rng.random()
        active = rng.random(num_satellites) < p
        return np.where(active, rng.integers(0, s_max + 1, size=num_satellites), -1)
    raise ValueError(f"unknown participation mode {participation!r}")


class UtilityOracle:
    """Measures the loss reduction of one aggregation on a pretrained model sequence.

    The delta a satellite would send from base model ``w^b`` is trained once
    and cached, so paired measurements (same start model, different staleness
    vectors) share their local updates.
    """

    def __init__(
        self,
        source: SourceTask,
        models: Sequence[np.ndarray],
        training: TrainingConfig,
        alpha: float,
        seed: int,
    ):
        self.source = source
        self.models = list(models)
        self.losses = [source.loss(w) for w in self.models]
        self.training = training
        self.alpha = alpha
        self.seed = seed
        self._cache: dict[tuple[int, int], GradientDelta] = {}

    @property
    def rounds(self) -> int:
        return len(self.models) - 1

    def delta(self, k: int, base: int) -> GradientDelta:
        key = (k, base)
        if key not in self._cache:
            t = self.training
            rng = np.random.default_rng([self.seed, k, base])
            self._cache[key] = local_train(
                self.models[base], self.source.partitions[k], t.steps, t.batch_size, t.lr, rng, base
            )
        return self._cache[key]

    def measure(self, staleness: Sequence[int] | np.ndarray, start: int) -> float:
        """``f(w^start) - f(w^start + aggregated update)`` for one staleness vector."""
        s = np.asarray(staleness, dtype=int)
        if s.shape != (self.source.num_satellites,):
            raise ValueError("staleness vector length must equal the number of satellites")
        if not 0 <= start <= self.rounds or s.max(initial=-1) > start:
            raise ValueError("staleness reaches before the first model")
        buffer = [BufferEntry(self.delta(k, start - int(s[k])), int(s[k]), k) for k in np.flatnonzero(s >= 0)]
        w = self.models[start]
        updated = aggregate(w, buffer, self.alpha) if buffer else w
        return self.losses[start] - self.source.loss(updated)


def generate_utility_samples(
    source: SourceTask,
    pretrain_rounds: int,
    num_samples: int,
    s_max: int,
    training: TrainingConfig,
    alpha: float,
    rng: np.random.Generator,
    participation: str = "uniform",
    models: Sequence[np.ndarray] | None = None,
) -> list[UtilitySample]:
    """Measured loss reductions for random (staleness vector, start round) pairs.

    Each contributing satellite's delta is an E-step local-SGD delta from the
    model ``s_k`` rounds older than the start model; deltas are combined with
    the staleness-compensated rule of :func:`satfl.flcore.aggregate`.  Start
    rounds cover the whole pretraining run, including the untrained model, and
    staleness entries are capped at the start round.
    """
    if pretrain_rounds <= s_max:
        raise ValueError("pretrain_rounds must exceed s_max")
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if models is None:
        models = pretrain_sequence(source, pretrain_rounds, training, int(rng.integers(2**31)))
    if len(models) != pretrain_rounds + 1:
        raise ValueError("model sequence length must be pretrain_rounds + 1")
    oracle = UtilityOracle(source, models, training, alpha, int(rng.integers(2**31)))
    samples = []
    for _ in range(num_samples):
        s = draw_staleness(source.num_satellites, s_max, rng, participation)
        start = int(rng.integers(0, pretrain_rounds))
        # a model at round r cannot have received gradients older than r rounds
        s = np.minimum(s, start)
        samples.append(UtilitySample(featurize(s, oracle.losses[start], s_max), oracle.measure(s, start)))
    return samples


@dataclass
class UtilityRegressor:
    model: Any
    num_samples: int
    s_max: int
    num_satellites: int
    holdout_mse: float
    holdout_variance: float
    metadata: dict = field(default_factory=dict)

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        unique, inverse = np.unique(features, axis=0, return_inverse=True)
        return np.asarray(self.model.predict(unique), dtype=float)[inverse.ravel()]

    def save(self, path: str | Path) -> None:
        payload = {
            "format": REGRESSOR_FORMAT,
            "version": REGRESSOR_VERSION,
            "model": self.model,
            "num_samples": self.num_samples,
            "s_max": self.s_max,
            "num_satellites": self.num_satellites,
            "holdout_mse": self.holdout_mse,
            "holdout_variance": self.holdout_variance,
            "metadata": self.metadata,
        }
        joblib.dump(payload, path)

    @classmethod
    def load(cls, path: str | Path) -> "UtilityRegressor":
        payload = joblib.load(path)
        if not isinstance(payload, dict) or payload.get("format") != REGRESSOR_FORMAT:
            raise ValueError(f"{path} is not a utility regressor artifact")
        if payload.get("version") != REGRESSOR_VERSION:
            raise ValueError(f"unsupported regressor format version {payload.get('version')}")
        return cls(
            payload["model"],
            payload["num_samples"],
            payload["s_max"],
            payload["num_satellites"],
            payload["holdout_mse"],
            payload["holdout_variance"],
            payload.get("metadata", {}),
        )


def fit_utility_regressor(
    samples: Sequence[UtilitySample],
    rng: np.random.Generator,
    n_trees: int = 100,
    max_depth: int = 8,
    holdout_fraction: float = 0.2,
) -> UtilityRegressor:
    """Bagged regression trees on an 80/20 split; records the holdout MSE."""
    if len(samples) < 20:
        raise ValueError("need at least 20 utility samples")
    X = np.array([s.features for s in samples])
    y = np.array([s.delta_f for s in samples])
    if np.all(X == X[0]) or np.all(y == y[0]):
        # the forest then reduces to the mean target, i.e. a constant predictor
        warnings.warn("utility samples are degenerate; the fitted regressor is constant", RuntimeWarning, stacklevel=2)
    order = rng.permutation(len(samples))
    n_hold = max(1, int(round(holdout_fraction * len(samples))))
    hold, train = order[:n_hold], order[n_hold:]
    model = RandomForestRegressor(
        n_estimators=n_trees,
        max_depth=max_depth,
        bootstrap=True,
        random_state=int(rng.integers(2**31)),
        n_jobs=1,
    )
    model.fit(X[train], y[train])
    mse = float(np.mean((model.predict(X[hold]) - y[hold]) ** 2))
    s_max = X.shape[1] - 3
    K = int(round(X[0, :-1].sum()))
    return UtilityRegressor(model, len(samples), s_max, K, mse, float(np.var(y[hold])))


def save_samples_csv(samples: Sequence[UtilitySample], path: str | Path) -> None:
    if not samples:
        raise ValueError("no samples to write")
    width = len(samples[0].features)
    header = ["n_absent"] + [f"n_s{j}" for j in range(width - 2)] + ["status", "delta_f"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in samples:
            writer.writerow([repr(float(v)) for v in s.features] + [repr(float(s.delta_f))])


# --- phase 2: random search --------------------------------------------------


@dataclass(frozen=True)
class FedSpaceConfig:
    horizon: int = 24
    n_min: int = 4
    n_max: int = 8
    trials: int = 5000
    s_max: int = 8
    alpha: float = 0.5
    status_decay: float = 0.9

    def __post_init__(self) -> None:
        if not 1 <= self.n_min <= self.n_max <= self.horizon:
            raise ValueError("need 1 <= n_min <= n_max <= horizon")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.s_max < 0:
            raise ValueError("s_max must be >= 0")
        if not 0.0 <= self.status_decay < 1.0:
            raise ValueError("status_decay must lie in [0, 1)")


@dataclass(frozen=True)
class SearchResult:
    schedule: ScheduleVector
    objective: float
    candidates: int


def _draw_schedules(horizon: int, n_min: int, n_max: int, count: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((count, horizon + 1))
    n_agg = n_min + np.minimum((u[:, 0] * (n_max - n_min + 1)).astype(int), n_max - n_min)
    ranks = np.argsort(np.argsort(u[:, 1:], axis=1, kind="stable"), axis=1, kind="stable")
    return (ranks < n_agg[:, None]).astype(np.int8)


def candidate_space_size(horizon: int, n_min: int, n_max: int) -> int:
    return sum(math.comb(horizon, n) for n in range(n_min, n_max + 1))


def sample_candidates(horizon: int, n_min: int, n_max: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``trials`` distinct random schedules, in order of first appearance.

    Rows are drawn one after another from ``rng`` and repeats are skipped, so
    a smaller ``trials`` yields a prefix of a larger one.  When the space holds
    fewer than ``trials`` schedules, all of them are returned.
    """
    if not 0 <= n_min <= n_max <= horizon:
        raise ValueError("need 0 <= n_min <= n_max <= horizon")
    target = min(trials, candidate_space_size(horizon, n_min, n_max))
    seen: set[bytes] = set()
    rows: list[np.ndarray] = []
    count = target
    while len(rows) < target:
        for row in _draw_schedules(horizon, n_min, n_max, count, rng):
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                rows.append(row)
                if len(rows) == target:
                    break
        count = max(target - len(rows), 64)
    return np.array(rows, dtype=np.int8).reshape(len(rows), horizon)


def enumerate_candidates(horizon: int, n_min: int, n_max: int) -> np.ndarray:
    rows = []
    for n in range(n_min, n_max + 1):
        for pos in itertools.combinations(range(horizon), n):
            row = np.zeros(horizon, dtype=np.int8)
            row[list(pos)] = 1
            rows.append(row)
    return np.array(rows, dtype=np.int8)


def schedule_objectives(
    regressor: Any, candidates: np.ndarray, window: Sequence[Sequence[int]], snap: Snapshot, status: float, s_max: int
) -> np.ndarray:
    """Predicted total loss reduction of each candidate schedule (stale entries clipped at ``s_max``)."""
    trial_ids, vectors = batch_staleness(candidates, window, snap)
    totals = np.zeros(len(candidates))
    if len(trial_ids):
        feats = featurize_batch(np.minimum(vectors, s_max), status, s_max)
        np.add.at(totals, trial_ids, regressor.predict(feats))
    return totals


def best_schedule(candidates: np.ndarray, objectives: np.ndarray) -> int:
    """Index of the argmax; ties go to fewer aggregations, then the lexicographically smallest bits."""
    best = objectives.max()
    tied = np.flatnonzero(objectives == best)
    return int(min(tied, key=lambda t: (int(candidates[t].sum()), tuple(candidates[t].tolist()))))


def random_search(
    regressor: Any,
    window: Sequence[Sequence[int]],
    snap: Snapshot,
    status: float,
    config: FedSpaceConfig,
    rng: np.random.Generator | None = None,
    start_index: int = 0,
    candidates: np.ndarray | None = None,
) -> SearchResult:
    if config.n_max > config.horizon:
        raise ValueError("n_max exceeds the scheduling horizon")
    if candidates is None:
        if rng is None:
            raise ValueError("rng is required when candidates are sampled")
        candidates = sample_candidates(config.horizon, config.n_min, config.n_max, config.trials, rng)
    objectives = schedule_objectives(regressor, candidates, window, snap, status, config.s_max)
    t = best_schedule(candidates, objectives)
    bits = tuple(int(b) for b in candidates[t])
    return SearchResult(ScheduleVector(bits, start_index), float(objectives[t]), len(candidates))


def infer_aggregation_band(
    regressor: Any,
    window: Sequence[Sequence[int]],
    snap: Snapshot,
    status: float,
    s_max: int,
    keep: float = 0.9,
) -> tuple[int, int]:
    """Range of aggregation counts whose evenly spaced schedule scores within ``keep`` of the best."""
    horizon = len(window)
    rows = []
    for n in range(1, horizon + 1):
        row = np.zeros(horizon, dtype=np.int8)
        row[[math.floor((j + 0.5) * horizon / n) for j in range(n)]] = 1
        rows.append(row)
    scores = schedule_objectives(regressor, np.array(rows), window, snap, status, s_max)
    best = scores.max()
    if best <= 0:
        return 1, 1
    ok = np.flatnonzero(scores >= keep * best) + 1
    return int(ok.min()), int(ok.max())


class FedSpaceScheduler:
    """Plans ``config.horizon`` bits at every multiple of the horizon and serves them.

    ``probe_loss`` maps a model to the server's loss estimate. The training
    status is its exponential moving average with decay
    ``config.status_decay``, refreshed whenever the global round advances.
    A decay of 0 uses the latest probe loss as is.
    """

    name = "fedspace"

    def __init__(
        self,
        trace: ConnectivitySets,
        regressor: Any,
        config: FedSpaceConfig,
        probe_loss: Callable[[np.ndarray], float],
        seed: int,
    ):
        self.trace = trace
        self.regressor = regressor
        self.config = config
        self.probe_loss = probe_loss
        self.rng = np.random.default_rng([seed, 0xFED5])
        self.status: float | None = None
        self._seen_round: int | None = None
        self.bits: tuple[int, ...] = (0,) * config.horizon
        self.plans: list[SearchResult] = []

    def _refresh_status(self, server: ServerState) -> None:
        if self.status is None:
            self.status = self.probe_loss(server.model)
        elif server.round != self._seen_round:
            d = self.config.status_decay
            self.status = d * self.status + (1 - d) * self.probe_loss(server.model)
        self._seen_round = server.round

    def begin_step(self, time_index: int, server: ServerState, satellites: Sequence[SatelliteState]) -> None:
        self._refresh_status(server)
        if time_index % self.config.horizon:
            return
        window = self.trace.window(time_index, self.config.horizon)
        result = random_search(
            self.regressor, window, snapshot(server, satellites), self.status, self.config, self.rng, time_index
        )
        self.bits = result.schedule.bits
        self.plans.append(result)

    def decide(self, time_index: int, connected: Sequence[int], server: ServerState) -> int:
        return self.bits[time_index % self.config.horizon]
