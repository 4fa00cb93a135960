import math

import numpy as np
import pytest

from tsprobe import metrics


def brute_force_ap(scores, labels):
    """Direct precision@k enumeration from the definition; pure Python."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(1 for v in labels if v == 1)
    assert n_pos > 0
    hits = 0
    total = 0.0
    for k, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            total += hits / k
    return total / n_pos


def brute_force_macro_map(scores, labels, mask):
    values = []
    for l in range(scores.shape[1]):
        sub_scores = [scores[i, l] for i in range(scores.shape[0]) if mask[i, l] == 1]
        sub_labels = [labels[i, l] for i in range(scores.shape[0]) if mask[i, l] == 1]
        if sum(sub_labels) == 0:
            continue
        values.append(brute_force_ap(sub_scores, sub_labels))
    return sum(values) / len(values)


# --- average_precision ----------------------------------------------------------


def test_ap_perfect_ranking():
    assert metrics.average_precision(np.array([0.9, 0.1]), np.array([1, 0])) == 1.0


def test_ap_worst_ranking_of_one_positive():
    assert metrics.average_precision(np.array([0.1, 0.9]), np.array([1, 0])) == 0.5


def test_ap_hand_derived_case():
    value = metrics.average_precision(np.array([0.8, 0.6, 0.4]), np.array([1, 0, 1]))
    oracle = brute_force_ap([0.8, 0.6, 0.4], [1, 0, 1])
    assert abs(oracle - 5.0 / 6.0) < 1e-12
    assert abs(value - 0.8333) < 5e-5
    assert abs(value - oracle) < 1e-12


def test_ap_tie_break_by_original_index():
    # tied scores rank the earlier index first
    assert metrics.average_precision(np.array([0.5, 0.5]), np.array([1, 0])) == 1.0
    assert metrics.average_precision(np.array([0.5, 0.5]), np.array([0, 1])) == 0.5


def test_ap_invariant_under_monotone_transform():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 20))
        scores = rng.standard_normal(n)
        labels = rng.integers(0, 2, n)
        if labels.sum() == 0:
            labels[0] = 1
        base = metrics.average_precision(scores, labels)
        assert metrics.average_precision(3.0 * scores + 1.0, labels) == base
        assert metrics.average_precision(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)


def test_ap_zero_positives_raises():
    with pytest.raises(metrics.ZeroPositivesError):
        metrics.average_precision(np.array([0.5, 0.4]), np.array([0, 0]))


# --- macro_map --------------------------------------------------------------------


def test_macro_map_perfect():
    scores = np.array([[0.9, 0.1], [0.1, 0.9]])
    labels = np.array([[1, 0], [0, 1]])
    mask = np.ones_like(labels)
    result = metrics.macro_map(scores, labels, mask)
    assert result.value == 1.0
    assert result.metric_name == "map"
    assert result.n_instances == 2
    np.testing.assert_array_equal(result.per_class, [1.0, 1.0])


def test_macro_map_only_positives_observed_gives_one():
    # mask hides every negative of class 0: any ranking of an all-relevant list is perfect
    scores = np.array([[0.1, 0.5], [0.2, 0.6], [0.9, 0.4]])
    labels = np.array([[1, 1], [1, 0], [0, 1]])
    mask = np.array([[1, 1], [1, 1], [0, 1]])
    result = metrics.macro_map(scores, labels, mask)
    assert result.per_class[0] == 1.0


def test_macro_map_matches_brute_force_with_masking():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 31))
        n_classes = int(rng.integers(1, 6))
        scores = rng.uniform(size=(n, n_classes))
        labels = rng.integers(0, 2, (n, n_classes))
        mask = rng.integers(0, 2, (n, n_classes))
        observed_pos = ((labels == 1) & (mask == 1)).sum(axis=0)
        if (observed_pos == 0).all():
            continue
        result = metrics.macro_map(scores, labels, mask)
        assert abs(result.value - brute_force_macro_map(scores, labels, mask)) < 1e-12


def test_macro_map_full_mask_equals_unmasked_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(2, 25))
        n_classes = int(rng.integers(1, 5))
        scores = rng.uniform(size=(n, n_classes))
        labels = rng.integers(0, 2, (n, n_classes))
        labels[0, :] = 1  # every class has a positive
        mask = np.ones_like(labels)
        result = metrics.macro_map(scores, labels, mask)
        assert abs(result.value - brute_force_macro_map(scores, labels, mask)) < 1e-12


def test_macro_map_excludes_positive_free_classes(caplog):
    scores = np.array([[0.9, 0.5], [0.1, 0.6]])
    labels = np.array([[1, 0], [0, 0]])
    mask = np.ones_like(labels)
    with caplog.at_level("WARNING"):
        result = metrics.macro_map(scores, labels, mask)
    assert np.isnan(result.per_class[1])
    assert result.value == 1.0
    assert "excluded" in caplog.text


def test_macro_map_all_degenerate_raises():
    scores = np.array([[0.9], [0.1]])
    labels = np.array([[0], [0]])
    with pytest.raises(metrics.MetricsError):
        metrics.macro_map(scores, labels, np.ones_like(labels))


# --- accuracy ------------------------------------------------------------------------


def test_accuracy_perfect():
    y_hat = np.eye(4)
    assert metrics.accuracy(y_hat, np.eye(4, dtype=int)).value == 1.0


def test_accuracy_uniform_predictions_tie_break():
    # ties argmax to the lowest index, so all-class-0 labels score 1.0
    y_hat = np.full((5, 10), 0.1)
    labels = np.zeros((5, 10), dtype=int)
    labels[:, 0] = 1
    assert metrics.accuracy(y_hat, labels).value == 1.0


def test_accuracy_three_of_four():
    y_hat = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    labels = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
    assert metrics.accuracy(y_hat, labels).value == 0.75


def test_accuracy_invariant_under_rowwise_monotone_transform():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n, n_classes = int(rng.integers(1, 20)), int(rng.integers(2, 6))
        y_hat = rng.uniform(size=(n, n_classes))
        labels = np.zeros((n, n_classes), dtype=int)
        labels[np.arange(n), rng.integers(0, n_classes, n)] = 1
        base = metrics.accuracy(y_hat, labels).value
        assert metrics.accuracy(10.0 * y_hat + 3.0, labels).value == base


def test_accuracy_rejects_non_one_hot():
    with pytest.raises(metrics.MetricsError):
        metrics.accuracy(np.ones((2, 2)), np.array([[1, 1], [0, 1]]))


# --- mean_std ---------------------------------------------------------------------------


def test_mean_std_constant():
    mean, std = metrics.mean_std([0.8, 0.8, 0.8])
    assert abs(mean - 0.8) < 1e-12
    assert std < 1e-12


def test_mean_std_two_values():
    assert metrics.mean_std([0.0, 1.0]) == (0.5, 0.5)


def test_mean_std_five_run_example():
    values = [0.866, 0.865, 0.867, 0.866, 0.866]
    # direct computation, plain Python
    mean = sum(values) / 5
    std = math.sqrt(sum((v - mean) ** 2 for v in values) / 5)
    got_mean, got_std = metrics.mean_std(values)
    assert abs(got_mean - mean) < 1e-15
    assert abs(got_std - std) < 1e-12
    assert abs(got_mean - 0.8660) < 1e-4
    assert abs(got_std - 0.00063) < 5e-6


def test_mean_std_single_value():
    assert metrics.mean_std([0.42]) == (0.42, 0.0)


def test_mean_std_empty_raises():
    with pytest.raises(metrics.MetricsError):
        metrics.mean_std([])


def test_metric_values_in_unit_interval():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 15))
        scores = rng.uniform(size=n)
        labels = rng.integers(0, 2, n)
        if labels.sum() == 0:
            labels[int(rng.integers(0, n))] = 1
        assert 0.0 <= metrics.average_precision(scores, labels) <= 1.0
