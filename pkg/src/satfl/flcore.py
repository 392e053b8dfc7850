"""Satellite and ground-station state machines for asynchronous federated learning.

One call to :func:`server_step` runs a single time index: connected satellites
upload pending deltas, the scheduler decides whether to aggregate, and the
resulting global model is broadcast back to the same satellites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np


class DivergenceError(ArithmeticError):
    """Local training produced a non-finite loss."""


class Objective(Protocol):
    def __len__(self) -> int: ...

    def loss_and_grad(self, w: np.ndarray, batch: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class GradientDelta:
    delta: np.ndarray
    base_round: int


@dataclass(frozen=True)
class BufferEntry:
    delta: GradientDelta
    staleness: int
    satellite_id: int


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 10
    batch_size: int = 32
    lr: float = 0.1

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("steps and batch_size must be >= 1 and lr positive")


@dataclass
class SatelliteState:
    id: int
    partition: Objective
    rng: np.random.Generator
    base_model: np.ndarray | None = None
    base_round: int | None = None
    pending: GradientDelta | None = None

    def __post_init__(self) -> None:
        if self.pending is not None and self.base_model is None:
            raise ValueError("a pending delta requires a base model")


@dataclass
class ServerState:
    model: np.ndarray
    round: int = 0
    buffer: list[BufferEntry] = field(default_factory=list)
    time_index: int = 0

    @property
    def contributors(self) -> frozenset[int]:
        return frozenset(e.satellite_id for e in self.buffer)


@dataclass(frozen=True)
class StepRecord:
    time_index: int
    decision: int
    aggregated: bool
    round_after: int
    uploads: tuple[tuple[int, int], ...]  # (satellite_id, staleness)
    idle: tuple[int, ...]
    first_contacts: tuple[int, ...]
    aggregated_staleness: tuple[int, ...] = ()


class Scheduler(Protocol):
    def decide(self, time_index: int, connected: Sequence[int], server: ServerState) -> int: ...


# --- satellite side ----------------------------------------------------------


def local_train(
    base: np.ndarray,
    partition: Objective,
    steps: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
    base_round: int = 0,
) -> GradientDelta:
    """Run ``steps`` mini-batch SGD steps from ``base`` and return ``w_E - w_0``.

    Batches are drawn without replacement from a shuffled pass over the
    partition; a new shuffle starts when the pass cannot fill a batch.
    """
    n = len(partition)
    if n == 0:
        raise ValueError("partition is empty")
    if steps < 1 or batch_size < 1 or not lr > 0:
        raise ValueError("steps and batch_size must be >= 1 and lr positive")
    w = np.array(base, dtype=float, copy=True)
    if batch_size >= n:
        full = np.arange(n)
        order, pos = None, 0
    else:
        order, pos = rng.permutation(n), 0
    for _ in range(steps):
        if order is None:
            batch = full
        else:
            if pos + batch_size > n:
                order, pos = rng.permutation(n), 0
            batch = order[pos:pos + batch_size]
            pos += batch_size
        loss, grad = partition.loss_and_grad(w, batch)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} during local training")
        w -= lr * grad
    return GradientDelta(w - base, base_round)


def upload(sat: SatelliteState) -> GradientDelta | None:
    """Hand over (and clear) the satellite's pending delta."""
    delta, sat.pending = sat.pending, None
    return delta


def download(sat: SatelliteState, model: np.ndarray, round_index: int, training: TrainingConfig) -> bool:
    """Adopt the broadcast model when it is newer than the satellite's base; returns True if adopted.

    Adoption immediately runs local training, whose delta becomes pending
    for the next contact.
    """
    if sat.base_round is not None and round_index <= sat.base_round:
        return False
    sat.base_model = np.array(model, copy=True)
    sat.base_round = round_index
    sat.pending = local_train(
        sat.base_model, sat.partition, training.steps, training.batch_size, training.lr, sat.rng, round_index
    )
    return True


def satellite_contact(
    sat: SatelliteState, server_model: np.ndarray, server_round: int, training: TrainingConfig
) -> tuple[GradientDelta | None, SatelliteState]:
    """Upload then download against an unchanged server model."""
    sent = upload(sat)
    download(sat, server_model, server_round, training)
    return sent, sat


# --- server side -------------------------------------------------------------


def staleness_weight(s: int, alpha: float) -> float:
    if s < 0:
        raise ValueError("staleness must be non-negative")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return float((s + 1.0) ** -alpha)


def aggregation_weights(staleness: Iterable[int], alpha: float) -> np.ndarray:
    c = np.array([staleness_weight(s, alpha) for s in staleness])
    return c / c.sum()


def aggregate(model: np.ndarray, buffer: Sequence[BufferEntry], alpha: float) -> np.ndarray:
    """``w + sum_k c(s_k)/C * g_k`` with ``C = sum_k c(s_k)``."""
    if not buffer:
        raise ValueError("cannot aggregate an empty buffer")
    weights = aggregation_weights([e.staleness for e in buffer], alpha)
    step = np.zeros_like(model, dtype=float)
    for weight, entry in zip(weights, buffer):
        if entry.delta.delta.shape != model.shape:
            raise ValueError("delta dimension does not match the model")
        step += weight * entry.delta.delta
    return model + step


def server_step(
    state: ServerState,
    connected: Sequence[int],
    satellites: Sequence[SatelliteState],
    scheduler: Scheduler,
    training: TrainingConfig,
    alpha: float,
) -> StepRecord:
    """Advance ``state`` and ``satellites`` by one time index (mutated in place)."""
    i = state.time_index
    for k in connected:
        if not 0 <= k < len(satellites):
            raise ValueError(f"unknown satellite id {k}")

    begin = getattr(scheduler, "begin_step", None)
    if begin is not None:
        begin(i, state, satellites)

    uploads, idle, first = [], [], []
    for k in connected:
        sat = satellites[k]
        if sat.base_round is None:
            first.append(k)
            continue
        sent = upload(sat)
        if sent is None:
            idle.append(k)
            continue
        s = state.round - sent.base_round
        state.buffer.append(BufferEntry(sent, s, k))
        uploads.append((k, s))

    decision = int(scheduler.decide(i, connected, state))
    aggregated = False
    agg_staleness: tuple[int, ...] = ()
    if decision == 1 and state.buffer:
        state.model = aggregate(state.model, state.buffer, alpha)
        state.round += 1
        agg_staleness = tuple(e.staleness for e in state.buffer)
        state.buffer = []
        aggregated = True

    for k in connected:
        download(satellites[k], state.model, state.round, training)
    state.time_index += 1
    return StepRecord(
        time_index=i,
        decision=decision,
        aggregated=aggregated,
        round_after=state.round,
        uploads=tuple(uploads),
        idle=tuple(idle),
        first_contacts=tuple(first),
        aggregated_staleness=agg_staleness,
    )


def make_satellites(partitions: Sequence[Objective], seed: int) -> list[SatelliteState]:
    """One state per partition with independent generators spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(partitions))
    return [SatelliteState(k, p, np.random.default_rng(c)) for k, (p, c) in enumerate(zip(partitions, children))]
