"""Large-margin nearest-neighbour metric learning on pooled spectrogram pixels."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import rankdata

from callkit.common.errors import LmnnError
from callkit.common.models import DistanceMatrix, FeatureMatrix, LinearMetric, Spectrogram

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def band_edges(n_bins: int, n_bands: int) -> np.ndarray:
    """Band b pools bins j with b·n_bins/F <= j < (b+1)·n_bins/F."""
    return np.ceil(np.arange(n_bands + 1) * n_bins / n_bands).astype(np.int64)


def featurize(spec: Spectrogram, T: int = 48, F: int = 64) -> np.ndarray:
    """Fixed-size, time-major vector: first T frames (pad-filled) pooled into F equal frequency bands."""
    if T < 1 or not 1 <= F <= spec.n_bins:
        raise LmnnError(f"Pool {T}x{F} does not fit a spectrogram with {spec.n_bins} bins")
    frames = np.full((T, spec.n_bins), spec.pad_value)
    kept = min(T, spec.n_frames)
    frames[:kept] = spec.values[:kept]
    edges = band_edges(spec.n_bins, F)
    pooled = np.add.reduceat(frames, edges[:-1], axis=1) / np.diff(edges)
    return pooled.ravel()


def build_features(
    specs: Sequence[Spectrogram],
    labels: Sequence[str],
    T: int = 48,
    F: int = 64,
    call_ids: Sequence[str] | None = None,
) -> FeatureMatrix:
    """Featurize every call and standardize each feature (scale floored at 1e-8)."""
    if not specs:
        raise LmnnError("Cannot build features from an empty corpus")
    raw = np.stack([featurize(s, T, F) for s in specs])
    mean = raw.mean(axis=0)
    scale = np.maximum(raw.std(axis=0), SCALE_FLOOR)
    return FeatureMatrix(
        vectors=(raw - mean) / scale,
        pixel_shape=(T, F),
        labels=list(labels),
        call_ids=list(call_ids or []),
        mean=mean,
        scale=scale,
    )


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def find_targets(X: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Each point's k nearest same-class points (squared Euclidean, ties to the lower index)."""
    sq = squareform(pdist(X, "sqeuclidean"))
    index = np.arange(len(y))
    targets = np.empty((len(y), k), dtype=np.int64)
    for i in index:
        same = index[(y == y[i]) & (index != i)]
        if same.size < k:
            raise LmnnError(f"Class {y[i]!r} has fewer than {k + 1} members")
        targets[i] = same[np.lexsort((same, sq[i, same]))][:k]
    return targets


def _squared_distances(Z: np.ndarray) -> np.ndarray:
    norms = np.sum(Z * Z, axis=1)
    return np.maximum(norms[:, None] + norms[None, :] - 2.0 * Z @ Z.T, 0.0)


def lmnn_objective(
    L: np.ndarray, X: np.ndarray, y: np.ndarray, targets: np.ndarray, mu: float = 0.5
) -> tuple[float, np.ndarray]:
    """Loss (1−mu)·pull + mu·hinge and its gradient with respect to L.

    pull = Σ_{i, j∈targets(i)} ‖L(x_i−x_j)‖² and
    hinge = Σ_{i, j∈targets(i), l: y_l≠y_i} [1 + ‖L(x_i−x_j)‖² − ‖L(x_i−x_l)‖²]₊.
    """
    n, k = targets.shape
    Z = X @ L.T
    sq = _squared_distances(Z)
    rows = np.repeat(np.arange(n), k)
    cols = targets.ravel()
    target_sq = sq[rows, cols].reshape(n, k)

    impostor = y[None, :] != y[:, None]
    margins = 1.0 + target_sq[:, :, None] - sq[:, None, :]
    active = (margins > 0) & impostor[:, None, :]
    hinge = float(np.sum(margins, where=active))
    loss = (1.0 - mu) * float(target_sq.sum()) + mu * hinge

    # pair weights: target pairs pull with (1−mu) + mu·#active impostors, impostor pairs push with −mu each
    weights = np.zeros((n, n))
    np.add.at(weights, (rows, cols), ((1.0 - mu) + mu * active.sum(axis=2)).ravel())
    weights -= mu * active.sum(axis=1)
    laplacian = np.diag(weights.sum(axis=0) + weights.sum(axis=1)) - weights - weights.T
    gradient = 2.0 * Z.T @ (laplacian @ X)
    return loss, gradient


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _drop_small_classes(labels: Sequence[str], k: int) -> np.ndarray:
    counts = Counter(labels)
    small = sorted(c for c, n in counts.items() if n < k + 1)
    if small:
        logger.warning("Dropping %d class(es) with fewer than %d calls from LMNN: %s", len(small), k + 1, small)
    return np.array([label not in small for label in labels])


def lmnn_fit(
    features: FeatureMatrix,
    k: int = 3,
    mu: float = 0.5,
    max_iters: int = 200,
    out_dim: int | None = None,
) -> LinearMetric:
    """Gradient descent from the (truncated) identity; the step grows ×1.1 on success and halves on a loss increase."""
    keep = _drop_small_classes(features.labels, k)
    X = features.vectors[keep]
    y = np.asarray(features.labels)[keep]
    if len(set(y)) < 2:
        raise LmnnError(f"LMNN needs at least 2 classes with {k + 1} or more calls")
    d = X.shape[1]
    d_out = d if out_dim is None else out_dim
    if not 1 <= d_out <= d:
        raise LmnnError(f"out_dim must lie in [1, {d}], got {out_dim!r}")

    targets = find_targets(X, y, k)
    L = np.eye(d_out, d)
    loss, gradient = lmnn_objective(L, X, y, targets, mu)
    if not np.isfinite(loss):
        raise LmnnError(f"Non-finite LMNN loss at the identity: {loss!r}")
    history = [loss]
    grad_norm = float(np.linalg.norm(gradient))
    step = 0.1 * float(np.linalg.norm(L)) / grad_norm if grad_norm > 0 else 0.0

    for iteration in range(1, max_iters + 1):
        if step <= 0 or grad_norm == 0:
            break
        candidate = L - step * gradient
        candidate_loss, candidate_gradient = lmnn_objective(candidate, X, y, targets, mu)
        if not np.isfinite(candidate_loss):
            raise LmnnError(f"Non-finite LMNN loss at iteration {iteration} (step {step:.3g})")
        if candidate_loss <= loss:
            L, loss, gradient = candidate, candidate_loss, candidate_gradient
            grad_norm = float(np.linalg.norm(gradient))
            history.append(loss)
            step *= 1.1
        else:
            step *= 0.5
    logger.info("LMNN: loss %.4g -> %.4g over %d accepted steps", history[0], history[-1], len(history) - 1)
    return LinearMetric(
        projection=L,
        importance=np.sum(L**2, axis=0),
        loss_history=history,
        pixel_shape=features.pixel_shape,
    )


def project(features: FeatureMatrix, metric: LinearMetric) -> np.ndarray:
    if metric.projection.shape[1] != features.vectors.shape[1]:
        raise LmnnError(
            f"Projection expects {metric.projection.shape[1]} features, got {features.vectors.shape[1]}"
        )
    return features.vectors @ metric.projection.T


def feature_distances(features: FeatureMatrix, metric: LinearMetric | None = None) -> DistanceMatrix:
    """Euclidean distances between (optionally projected) feature vectors."""
    points = features.vectors if metric is None else project(features, metric)
    ids = features.call_ids or [str(i) for i in range(len(features.labels))]
    return DistanceMatrix(values=squareform(pdist(points)), call_ids=ids, metric="euclidean", representation="features")


# ---------------------------------------------------------------------------
# Importance maps
# ---------------------------------------------------------------------------


def importance_map(metric: LinearMetric, pixel_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Column squared norms of the projection reshaped onto the (T, F) pixel grid."""
    shape = pixel_shape or metric.pixel_shape
    if shape is None or shape[0] * shape[1] != metric.importance.size:
        raise LmnnError(f"Pixel shape {shape!r} does not match {metric.importance.size} importance weights")
    return metric.importance.reshape(shape)


def rank_transform(values: np.ndarray) -> np.ndarray:
    """Average-rank each entry among all entries, scaled to [0, 1] (0.5 for a single entry)."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise LmnnError("rank_transform needs finite values")
    if values.size <= 1:
        return np.full(values.shape, 0.5)
    ranks = rankdata(values, method="average").reshape(values.shape)
    return (ranks - 1.0) / (values.size - 1.0)
