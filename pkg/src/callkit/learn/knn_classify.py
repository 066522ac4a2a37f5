"""Leave-one-out k-nearest-neighbour classification over precomputed distances."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from callkit.common.errors import ClassificationError
from callkit.common.models import ClassificationReport, DistanceMatrix

logger = logging.getLogger(__name__)


def _check_labels(dm: DistanceMatrix, labels: Sequence[str]) -> None:
    if len(labels) != dm.n:
        raise ClassificationError(f"Got {len(labels)} labels for {dm.n} calls")


def nearest_neighbours(dm: DistanceMatrix, query_index: int, k: int = 3) -> np.ndarray:
    """Indices of the k closest other calls; equal distances go to the lower index."""
    if k < 1:
        raise ClassificationError(f"k must be positive, got {k!r}")
    if dm.n <= k:
        raise ClassificationError(f"Need more than k={k} calls, got {dm.n}")
    if not 0 <= query_index < dm.n:
        raise ClassificationError(f"query_index {query_index!r} outside [0, {dm.n})")
    order = np.lexsort((np.arange(dm.n), dm.values[query_index]))
    return order[order != query_index][:k]


def knn_predict(dm: DistanceMatrix, labels: Sequence[str], query_index: int, k: int = 3) -> str:
    """Majority label of the k nearest neighbours; a vote tie goes to the tied label seen nearest first."""
    _check_labels(dm, labels)
    neighbours = [labels[j] for j in nearest_neighbours(dm, query_index, k)]
    votes = Counter(neighbours)
    top = max(votes.values())
    return next(label for label in neighbours if votes[label] == top)


def chance_level(labels: Sequence[str]) -> float:
    """Accuracy of always predicting the majority class."""
    if not labels:
        raise ClassificationError("Cannot compute a chance level without labels")
    return max(Counter(labels).values()) / len(labels)


def loo_accuracy(dm: DistanceMatrix, labels: Sequence[str], k: int = 3) -> ClassificationReport:
    _check_labels(dm, labels)
    labels = [str(label) for label in labels]
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ClassificationError(f"Need at least 2 classes, got {classes!r}")

    predictions = [knn_predict(dm, labels, i, k) for i in range(dm.n)]
    confusion = confusion_matrix(labels, predictions, labels=classes)
    counts = confusion.sum(axis=1)
    report = ClassificationReport(
        accuracy=float(np.trace(confusion)) / dm.n,
        per_class_recall={c: float(confusion[i, i] / counts[i]) for i, c in enumerate(classes)},
        labels=classes,
        confusion=confusion.tolist(),
        chance_level=chance_level(labels),
        n_calls=dm.n,
        k=k,
        metric=dm.metric,
        scale=dm.scale,
        representation=dm.representation,
    )
    logger.info(
        "LOO %d-NN on %s %s: accuracy %.3f (chance %.3f)",
        k,
        dm.representation,
        dm.metric_tag,
        report.accuracy,
        report.chance_level,
    )
    return report


def format_report(report: ClassificationReport) -> str:
    """Human-readable summary followed by the per-class recall table."""
    header = (
        f"{report.representation} {report.metric}/{report.scale} k={report.k}: "
        f"accuracy {report.accuracy:.1%} over {report.n_calls} calls (chance {report.chance_level:.1%})"
    )
    confusion = np.asarray(report.confusion)
    table = pd.DataFrame(
        {
            "calls": confusion.sum(axis=1),
            "correct": np.diag(confusion),
            "recall": [report.per_class_recall[c] for c in report.labels],
        },
        index=pd.Index(report.labels, name="individual"),
    )
    return header + "\n" + table.to_string(float_format=lambda v: f"{v:.3f}")
