"""Pairwise spectrogram distances with a rigid ±shift alignment search."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from callkit.common._serialization import read_distance_csv, write_distance_binary, write_distance_csv
from callkit.common.errors import DistanceError
from callkit.common.models import DistanceMatrix, Metric, Spectrogram

logger = logging.getLogger(__name__)

__all__ = [
    "METRICS",
    "pairwise_matrix",
    "read_distance_csv",
    "shift_radius",
    "spec_distance",
    "write_distance_binary",
    "write_distance_csv",
]

METRICS: tuple[Metric, ...] = ("euclidean", "manhattan")


def shift_radius(max_shift_ms: float, frame_hop: int, sample_rate: int) -> int:
    """Largest whole-frame shift searched: round(max_shift_ms·fs / (1000·hop))."""
    if max_shift_ms < 0:
        raise DistanceError(f"max_shift_ms must be non-negative, got {max_shift_ms!r}")
    return round(max_shift_ms * sample_rate / (1000.0 * frame_hop))


def _check_compatible(a: Spectrogram, b: Spectrogram) -> None:
    for field in ("n_bins", "frame_hop", "sample_rate", "is_log"):
        if getattr(a, field) != getattr(b, field):
            raise DistanceError(f"Spectrograms differ in {field}: {getattr(a, field)!r} vs {getattr(b, field)!r}")
    if a.is_log and a.floor_db != b.floor_db:
        raise DistanceError(f"Log spectrograms differ in floor_db: {a.floor_db!r} vs {b.floor_db!r}")


def _order_key(spec: Spectrogram) -> tuple[tuple[int, ...], bytes]:
    return spec.values.shape, spec.values.tobytes()


def spec_distance(a: Spectrogram, b: Spectrogram, metric: Metric = "euclidean", max_shift_ms: float = 20.0) -> float:
    """Minimum over frame shifts of the pixel-normalized distance between two onset-aligned spectrograms.

    Both calls sit on a pad-filled canvas (0 for magnitudes, the floor for log-magnitudes) long
    enough that no frame is shifted out; the result is normalized by ``max(Ta, Tb)·n_bins``.
    """
    _check_compatible(a, b)
    if metric not in METRICS:
        raise DistanceError(f"Unknown metric: {metric!r}. Use one of {METRICS}.")
    if _order_key(b) < _order_key(a):
        a, b = b, a

    shift = shift_radius(max_shift_ms, a.frame_hop, a.sample_rate)
    n_frames, n_bins = max(a.n_frames, b.n_frames), a.n_bins
    if n_frames == 0:
        raise DistanceError("Cannot compare two empty spectrograms")
    pad = a.pad_value
    length = n_frames + 2 * shift

    canvas = np.full((length, n_bins), pad)
    canvas[shift : shift + a.n_frames] = a.values
    shifted = np.full((length + 2 * shift, n_bins), pad)
    shifted[2 * shift : 2 * shift + b.n_frames] = b.values
    # window w places b at canvas offset 2·shift − w, i.e. a relative shift of shift − w frames
    windows = sliding_window_view(shifted, (length, n_bins))[:, 0]
    diff = canvas[None] - windows
    per_row = np.sum(diff * diff, axis=2) if metric == "euclidean" else np.sum(np.abs(diff), axis=2)
    best = min(math.fsum(row) for row in per_row)

    n_pixels = n_frames * n_bins
    return math.sqrt(best) / n_pixels if metric == "euclidean" else best / n_pixels


def pairwise_matrix(
    specs: Sequence[Spectrogram],
    ids: Sequence[str],
    metric: Metric = "euclidean",
    max_shift_ms: float = 20.0,
    representation: str = "raw/stft",
    workers: int = 1,
) -> DistanceMatrix:
    """Full symmetric distance matrix; rows are computed in a thread pool and assembled by index."""
    n = len(specs)
    if n < 2:
        raise DistanceError(f"Need at least 2 calls for a distance matrix, got {n}")
    if len(ids) != n:
        raise DistanceError(f"Got {len(ids)} call ids for {n} spectrograms")
    for spec in specs[1:]:
        _check_compatible(specs[0], spec)

    def upper_row(i: int) -> list[float]:
        return [spec_distance(specs[i], specs[j], metric, max_shift_ms) for j in range(i + 1, n)]

    logger.info("Computing %d %s distances for %s", n * (n - 1) // 2, metric, representation)
    upper = np.zeros((n, n))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for i, row in enumerate(pool.map(upper_row, range(n - 1))):
            upper[i, i + 1 :] = row
    return DistanceMatrix(
        values=upper + upper.T,
        call_ids=list(ids),
        metric=metric,
        scale="log" if specs[0].is_log else "mag",
        representation=representation,
    )
