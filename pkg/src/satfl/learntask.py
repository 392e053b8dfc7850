"""Synthetic multiclass logistic-regression task and its federated partitionings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    zones: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError("features must be a non-empty 2-D array")
        if self.labels.shape != (len(self.features),):
            raise ValueError("labels must have one entry per sample")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels out of range")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.zones is not None and self.zones.shape != self.labels.shape:
            raise ValueError("zones must have one entry per sample")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        zones = None if self.zones is None else self.zones[idx]
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, zones)


@dataclass(frozen=True)
class Partitioning:
    assignment: np.ndarray
    num_satellites: int
    counts: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.num_satellites):
            raise ValueError("assignment references an unknown satellite")
        object.__setattr__(self, "counts", np.bincount(self.assignment, minlength=self.num_satellites))

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


def model_size(dim: int, num_classes: int) -> int:
    return (dim + 1) * num_classes


def _unpack(w: np.ndarray, dim: int, num_classes: int) -> np.ndarray:
    if w.shape != (model_size(dim, num_classes),):
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({model_size(dim, num_classes)},)")
    return w.reshape(dim + 1, num_classes)


def logits(w: np.ndarray, features: np.ndarray, num_classes: int) -> np.ndarray:
    W = _unpack(w, features.shape[1], num_classes)
    return features @ W[:-1] + W[-1]


def loss_and_grad(
    w: np.ndarray, features: np.ndarray, labels: np.ndarray, num_classes: int, l2: float = 0.0
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy plus ``l2/2 * ||w||^2`` and its gradient."""
    if len(labels) == 0:
        raise ValueError("batch is empty")
    n, dim = features.shape
    z = logits(w, features, num_classes)
    logp = log_softmax(z, axis=1)
    loss = -logp[np.arange(n), labels].mean() + 0.5 * l2 * float(w @ w)
    p = np.exp(logp)
    p[np.arange(n), labels] -= 1.0
    p /= n
    grad = np.empty((dim + 1, num_classes))
    grad[:-1] = features.T @ p
    grad[-1] = p.sum(axis=0)
    return float(loss), grad.ravel() + l2 * w


def predict(w: np.ndarray, data: Dataset) -> np.ndarray:
    return np.argmax(logits(w, data.features, data.num_classes), axis=1)


def evaluate(w: np.ndarray, data: Dataset) -> float:
    """Top-1 accuracy."""
    return float(np.mean(predict(w, data) == data.labels))


def dataset_loss(w: np.ndarray, data: Dataset, l2: float = 0.0) -> float:
    z = logits(w, data.features, data.num_classes)
    logp = log_softmax(z, axis=1)
    return float(-logp[np.arange(len(data)), data.labels].mean() + 0.5 * l2 * float(w @ w))


class LocalData:
    """A satellite's shard of a dataset, exposing the mini-batch objective."""

    def __init__(self, data: Dataset, indices: np.ndarray | None = None, l2: float = 0.0):
        if indices is not None:
            data = data.subset(indices)
        self.data = data
        self.l2 = l2

    def __len__(self) -> int:
        return len(self.data)

    def loss_and_grad(self, w: np.ndarray, batch: np.ndarray) -> tuple[float, np.ndarray]:
        return loss_and_grad(w, self.data.features[batch], self.data.labels[batch], self.data.num_classes, self.l2)


# --- generation --------------------------------------------------------------


def generate_synthetic(
    n: int,
    dim: int,
    num_classes: int,
    class_separation: float,
    num_zones: int,
    rng: np.random.Generator,
    zone_concentration: float = 0.3,
    nuisance_dims: int = 0,
    nuisance_scale: float = 1.0,
) -> Dataset:
    """Gaussian class clusters whose label mixture differs from zone to zone.

    Class means are drawn on a sphere of radius ``class_separation``; each
    zone draws its class mixture from a symmetric Dirichlet with the given
    concentration, so small concentrations give strongly skewed zones.  The
    last ``nuisance_dims`` features carry no class signal and have standard
    deviation ``nuisance_scale``; large scales make the loss ill-conditioned.
    """
    if n < num_classes or num_classes < 2 or dim < 1 or num_zones < 1:
        raise ValueError("invalid sizes for synthetic dataset")
    if not 0 <= nuisance_dims < dim:
        raise ValueError("nuisance_dims must leave at least one informative feature")
    if not class_separation >= 0:
        raise ValueError("class_separation must be non-negative")
    informative = dim - nuisance_dims
    means = np.zeros((num_classes, dim))
    means[:, :informative] = rng.standard_normal((num_classes, informative))
    means *= class_separation / np.linalg.norm(means, axis=1, keepdims=True)
    mixtures = rng.dirichlet(np.full(num_classes, zone_concentration), size=num_zones)
    zones = rng.integers(0, num_zones, size=n)
    # inverse-CDF draw of each sample's label from its zone's mixture
    cdf = np.cumsum(mixtures, axis=1)
    labels = (rng.random(n)[:, None] > cdf[zones]).sum(axis=1)
    labels = np.minimum(labels, num_classes - 1)
    features = means[labels] + rng.standard_normal((n, dim))
    features[:, informative:] *= nuisance_scale
    return Dataset(features, labels.astype(int), num_classes, zones.astype(int))


# --- partitioning ------------------------------------------------------------


def partition_iid(data: Dataset, num_satellites: int, rng: np.random.Generator) -> Partitioning:
    n = len(data)
    if not 1 <= num_satellites <= n:
        raise ValueError(f"cannot split {n} samples across {num_satellites} satellites")
    assignment = np.empty(n, dtype=int)
    for k, chunk in enumerate(np.array_split(rng.permutation(n), num_satellites)):
        assignment[chunk] = k
    return Partitioning(assignment, num_satellites)


def partition_noniid_by_visits(data: Dataset, visits: np.ndarray, rng: np.random.Generator) -> Partitioning:
    """Assign each zone's samples to its visitors with probability proportional to visit counts.

    ``visits`` has shape ``(num_zones, num_satellites)``.
    """
    if data.zones is None:
        raise ValueError("dataset carries no zone ids")
    visits = np.asarray(visits, dtype=float)
    num_zones, num_satellites = visits.shape
    if data.zones.max() >= num_zones:
        raise ValueError("dataset references a zone missing from the visit table")
    assignment = np.empty(len(data), dtype=int)
    for z in range(num_zones):
        members = np.flatnonzero(data.zones == z)
        if members.size == 0:
            continue
        total = visits[z].sum()
        if total <= 0:
            raise ValueError(f"zone {z} is not visited by any satellite")
        assignment[members] = rng.choice(num_satellites, size=members.size, p=visits[z] / total)
    return Partitioning(assignment, num_satellites)


# --- centralized reference ---------------------------------------------------


def fit_centralized(data: Dataset, l2: float = 0.0, max_iter: int = 500) -> np.ndarray:
    """Full-batch L-BFGS minimiser of the training loss; the accuracy ceiling reference."""
    w0 = np.zeros(model_size(data.dim, data.num_classes))
    result = minimize(
        lambda w: loss_and_grad(w, data.features, data.labels, data.num_classes, l2),
        w0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter},
    )
    return result.x


def class_probabilities(w: np.ndarray, data: Dataset) -> np.ndarray:
    return softmax(logits(w, data.features, data.num_classes), axis=1)


# --- CSV interchange ---------------------------------------------------------


def save_dataset_csv(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(data.dim)] + ["label", "zone"])
        zones = data.zones if data.zones is not None else np.full(len(data), -1)
        for row, y, z in zip(data.features, data.labels, zones):
            writer.writerow([repr(float(v)) for v in row] + [int(y), int(z)])


def load_dataset_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["label", "zone"]:
            raise ValueError("dataset CSV must end with 'label,zone' columns")
        rows = [r for r in reader if r]
    table = np.array(rows, dtype=float)
    labels = table[:, -2].astype(int)
    zones = table[:, -1].astype(int)
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(table[:, :-2], labels, classes, None if np.all(zones < 0) else zones)


def save_partition_csv(partition: Partitioning, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_index", "satellite_id"])
        writer.writerows(enumerate(partition.assignment.tolist()))
