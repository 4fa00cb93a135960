"""Evaluation metrics: rank-based average precision, masked macro mAP,
argmax accuracy, and run-level mean/std aggregation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class MetricsError(ValueError):
    pass


class ZeroPositivesError(MetricsError):
    """A class has no positive labels among its observed instances; its AP is
    undefined and callers should exclude it."""


@dataclass
class EvalResult:
    metric_name: str  # "map" | "accuracy"
    value: float
    n_instances: int
    per_class: np.ndarray | None = None  # length n_classes; NaN marks excluded classes


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP = (1/n_pos) * sum over positive ranks k of precision@k.

    Instances are ranked by score descending; ties keep the original index
    order (stable sort), so results are platform-deterministic. No
    interpolation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape or scores.size < 1:
        raise MetricsError(f"scores/labels must be equal-length 1-D, got {scores.shape} vs {labels.shape}")
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise ZeroPositivesError("no positive labels; AP undefined")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order] == 1
    cum_pos = np.cumsum(ranked)
    precision_at = cum_pos / np.arange(1, scores.size + 1)
    return float(precision_at[ranked].sum() / n_pos)


def macro_map(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> EvalResult:
    """Unweighted mean over classes of AP, restricted per class to observed
    instances. Classes with no observed positives are excluded (warning);
    every class degenerate is an error."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if scores.ndim != 2 or scores.shape != labels.shape or scores.shape != mask.shape:
        raise MetricsError(
            f"scores/labels/mask must share an (N, L) shape, got {scores.shape}/{labels.shape}/{mask.shape}"
        )
    n, n_classes = scores.shape
    per_class = np.full(n_classes, np.nan)
    for l in range(n_classes):
        observed = mask[:, l] == 1
        if not observed.any():
            continue
        try:
            per_class[l] = average_precision(scores[observed, l], labels[observed, l])
        except ZeroPositivesError:
            continue
    included = np.isfinite(per_class)
    if not included.any():
        raise MetricsError("every class is degenerate (no observed positives anywhere)")
    excluded = int(n_classes - included.sum())
    if excluded:
        logger.warning("macro_map: excluded %d class(es) without observed positives", excluded)
    return EvalResult(
        metric_name="map",
        value=float(per_class[included].mean()),
        n_instances=n,
        per_class=per_class,
    )


def accuracy(y_hat: np.ndarray, labels: np.ndarray) -> EvalResult:
    """Fraction of rows whose argmax matches the one-hot target; argmax ties
    resolve to the lowest class index."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    labels = np.asarray(labels)
    if y_hat.ndim != 2 or y_hat.shape != labels.shape or y_hat.shape[0] < 1:
        raise MetricsError(f"y_hat/labels must share an (N, L) shape, got {y_hat.shape} vs {labels.shape}")
    if not (np.sum(labels == 1, axis=1) == 1).all():
        raise MetricsError("labels rows must be one-hot")
    predicted = np.argmax(y_hat, axis=1)
    true = np.argmax(labels, axis=1)
    return EvalResult(
        metric_name="accuracy",
        value=float(np.mean(predicted == true)),
        n_instances=y_hat.shape[0],
        per_class=None,
    )


def mean_std(values: list[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation (divide by n)."""
    if len(values) < 1:
        raise MetricsError("mean_std needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))
