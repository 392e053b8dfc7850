from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from _oracles import central_difference_check
from satfl import learntask
from satfl.learntask import Dataset, Partitioning


def _data(n=200, dim=5, L=4, seed=0, **kw):
    return learntask.generate_synthetic(n, dim, L, 2.0, 6, np.random.default_rng(seed), **kw)


def test_gradient_matches_central_differences():
    assert central_difference_check(np.random.default_rng(2024), 100) <= 1e-5


def test_zero_weights_give_log_l_loss():
    X = np.random.default_rng(0).standard_normal((7, 3))
    for L in (2, 5, 10):
        loss, _ = learntask.loss_and_grad(np.zeros(learntask.model_size(3, L)), X, np.zeros(7, dtype=int), L)
        assert loss == pytest.approx(math.log(L))


def test_confident_correct_weights_give_vanishing_loss():
    X = np.array([[1.0, 0.0]])
    w = np.zeros(learntask.model_size(2, 3)).reshape(3, 3)
    w[0, 1] = 50.0
    loss, _ = learntask.loss_and_grad(w.ravel(), X, np.array([1]), 3)
    assert loss < 1e-12


def test_loss_errors():
    with pytest.raises(ValueError):
        learntask.loss_and_grad(np.zeros(9), np.zeros((0, 2)), np.zeros(0, dtype=int), 3)
    with pytest.raises(ValueError):
        learntask.loss_and_grad(np.zeros(8), np.zeros((1, 2)), np.zeros(1, dtype=int), 3)


def test_evaluate_examples():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    data = Dataset(X, np.array([0, 1]), 2)
    w = np.zeros(6).reshape(3, 2)
    w[0, 0] = w[1, 1] = 1.0
    assert learntask.evaluate(w.ravel(), data) == 1.0
    # the zero model predicts class 0 everywhere: accuracy equals the class-0 share
    rng = np.random.default_rng(8)
    y = rng.integers(0, 2, size=4000)
    balanced = Dataset(rng.standard_normal((4000, 2)), y, 2)
    acc = learntask.evaluate(np.zeros(6), balanced)
    assert abs(acc - 0.5) < 4 * math.sqrt(0.25 / 4000)
    pred = learntask.predict(np.zeros(6), balanced)
    assert not np.any(pred == 1)


def test_generator_is_deterministic():
    a = learntask.generate_synthetic(100, 2, 2, 1.0, 3, np.random.default_rng(5))
    b = learntask.generate_synthetic(100, 2, 2, 1.0, 3, np.random.default_rng(5))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes() and a.zones.tobytes() == b.zones.tobytes()


def test_large_separation_is_linearly_separable():
    data = learntask.generate_synthetic(300, 4, 3, 40.0, 2, np.random.default_rng(1))
    w = learntask.fit_centralized(data)
    assert learntask.evaluate(w, data) == 1.0


def test_zones_have_distinct_class_mixtures():
    data = learntask.generate_synthetic(5000, 4, 5, 1.0, 10, np.random.default_rng(7))
    table = np.zeros((10, 5))
    np.add.at(table, (data.zones, data.labels), 1)
    table = table[:, table.sum(axis=0) > 0]
    _, p, _, _ = chi2_contingency(table)
    assert p < 0.01


def test_nuisance_features_carry_no_signal():
    data = learntask.generate_synthetic(4000, 6, 3, 3.0, 4, np.random.default_rng(2), nuisance_dims=2, nuisance_scale=5.0)
    tail = data.features[:, 4:]
    assert tail.std(axis=0) == pytest.approx([5.0, 5.0], rel=0.05)
    for c in range(3):
        assert np.abs(tail[data.labels == c].mean(axis=0)).max() < 0.5
    with pytest.raises(ValueError):
        learntask.generate_synthetic(100, 3, 2, 1.0, 2, np.random.default_rng(0), nuisance_dims=3)


def test_generator_validation():
    with pytest.raises(ValueError):
        learntask.generate_synthetic(3, 2, 5, 1.0, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        learntask.generate_synthetic(30, 2, 2, 1.0, 0, np.random.default_rng(0))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 3]), 3)
    with pytest.raises(ValueError):
        Dataset(np.array([[np.inf, 0.0]]), np.array([0]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0]), 2)


def test_iid_partition_examples():
    data = _data(n=1000)
    rng = np.random.default_rng(0)
    assert learntask.partition_iid(data, 1, rng).counts.tolist() == [1000]
    assert learntask.partition_iid(data, 10, rng).counts.tolist() == [100] * 10
    assert learntask.partition_iid(data, 1000, rng).counts.tolist() == [1] * 1000
    with pytest.raises(ValueError):
        learntask.partition_iid(data, 1001, rng)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 40), st.integers(0, 2**16))
def test_iid_partition_is_balanced_and_complete(n, k, seed):
    k = min(k, n)
    data = Dataset(np.zeros((n, 1)), np.zeros(n, dtype=int), 1 + 1)
    part = learntask.partition_iid(data, k, np.random.default_rng(seed))
    assert part.counts.sum() == n
    assert np.all(np.abs(part.counts - n / k) <= 1)


def test_single_visitor_takes_everything():
    data = _data()
    part = learntask.partition_noniid_by_visits(data, np.ones((6, 1)), np.random.default_rng(0))
    assert part.counts.tolist() == [len(data)]


def test_three_to_one_visits_split_seventy_five_twenty_five():
    n = 10_000
    data = Dataset(np.zeros((n, 1)), np.zeros(n, dtype=int), 2, np.zeros(n, dtype=int))
    part = learntask.partition_noniid_by_visits(data, np.array([[3, 1]]), np.random.default_rng(3))
    assert abs(part.counts[0] / n - 0.75) <= 0.02


def test_orphan_zone_is_an_error():
    data = _data()
    visits = np.ones((6, 3))
    visits[2] = 0
    with pytest.raises(ValueError, match="zone 2"):
        learntask.partition_noniid_by_visits(data, visits, np.random.default_rng(0))


def _label_emd(part, data, L):
    """Mean 1-D earth-mover distance between each satellite's label distribution and the global one."""
    glob = np.bincount(data.labels, minlength=L) / len(data)
    out = []
    for k in range(part.num_satellites):
        idx = part.indices(k)
        if idx.size == 0:
            continue
        h = np.bincount(data.labels[idx], minlength=L) / idx.size
        out.append(np.abs(np.cumsum(h - glob)).sum())
    return float(np.mean(out))


def test_disjoint_visitors_create_label_skew():
    data = learntask.generate_synthetic(6000, 4, 6, 1.0, 6, np.random.default_rng(4), zone_concentration=0.1)
    visits = np.zeros((6, 6))
    for z in range(6):
        visits[z, z] = 1  # each satellite sees one zone
    rng = np.random.default_rng(0)
    skewed = learntask.partition_noniid_by_visits(data, visits, rng)
    iid = learntask.partition_iid(data, 6, rng)
    assert _label_emd(skewed, data, 6) > _label_emd(iid, data, 6)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**16))
def test_noniid_partition_is_complete(k, seed):
    rng = np.random.default_rng(seed)
    data = _data(n=150, seed=seed)
    visits = rng.integers(0, 4, size=(6, k))
    visits[:, 0] += 1  # no orphan zones
    part = learntask.partition_noniid_by_visits(data, visits, rng)
    assert part.counts.sum() == len(data)
    zero = np.flatnonzero(visits.sum(axis=0) == 0)
    assert np.all(part.counts[zero] == 0)


def test_partitioning_rejects_unknown_satellites():
    with pytest.raises(ValueError):
        Partitioning(np.array([0, 3]), 2)


def test_gradient_descent_decreases_loss_monotonically():
    data = _data(n=400)
    X, y, L = data.features, data.labels, data.num_classes
    # Lipschitz bound of the softmax cross-entropy gradient: ||[X 1]||_2^2 / n
    Xb = np.hstack([X, np.ones((len(X), 1))])
    lip = np.linalg.norm(Xb, 2) ** 2 / len(X)
    eta = 0.1 / lip
    w = np.zeros(learntask.model_size(X.shape[1], L))
    prev = learntask.loss_and_grad(w, X, y, L)[0]
    for _ in range(50):
        w = w - eta * learntask.loss_and_grad(w, X, y, L)[1]
        cur = learntask.loss_and_grad(w, X, y, L)[0]
        assert cur <= prev
        prev = cur


def test_centralized_fit_beats_zero_model():
    data = _data(n=600)
    w = learntask.fit_centralized(data, l2=1e-4)
    assert learntask.dataset_loss(w, data, 1e-4) < learntask.dataset_loss(np.zeros_like(w), data, 1e-4)
    probs = learntask.class_probabilities(w, data)
    assert probs.sum(axis=1) == pytest.approx(np.ones(len(data)))


def test_local_data_subsets(tmp_path):
    data = _data(n=50)
    local = learntask.LocalData(data, np.array([3, 4, 5]))
    assert len(local) == 3
    loss, grad = local.loss_and_grad(np.zeros(learntask.model_size(5, 4)), np.array([0, 2]))
    assert loss == pytest.approx(math.log(4))


def test_csv_round_trip(tmp_path):
    data = _data(n=40)
    path = tmp_path / "d.csv"
    learntask.save_dataset_csv(data, path)
    back = learntask.load_dataset_csv(path, data.num_classes)
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.labels, data.labels) and np.array_equal(back.zones, data.zones)
    part = learntask.partition_iid(data, 4, np.random.default_rng(0))
    learntask.save_partition_csv(part, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "sample_index,satellite_id" and len(lines) == 41
