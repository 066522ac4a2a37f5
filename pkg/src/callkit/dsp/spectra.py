"""Standard STFT magnitude spectrograms and their dB transform."""

from __future__ import annotations

import logging
from collections.abc import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from callkit.common._serialization import read_spectrogram_binary, write_spectrogram_binary, write_spectrogram_csv
from callkit.common.errors import SpectraError
from callkit.common.models import Signal, Spectrogram, readonly_array

logger = logging.getLogger(__name__)

__all__ = [
    "corpus_reference",
    "frame_hop",
    "log_magnitude",
    "read_spectrogram_binary",
    "stft_magnitude",
    "write_spectrogram_binary",
    "write_spectrogram_csv",
]


def frame_hop(frame_size: int, overlap: float) -> int:
    if not 0 <= overlap < 1:
        raise SpectraError(f"overlap must lie in [0, 1), got {overlap!r}")
    return max(1, round(frame_size * (1.0 - overlap)))


def stft_magnitude(signal: Signal, frame_size: int = 1024, overlap: float = 0.75) -> Spectrogram:
    """One-sided magnitude of Hann-windowed frames; frame i is centered on ``i·hop + frame_size//2``."""
    if signal.n_samples < frame_size:
        raise SpectraError(f"Signal of {signal.n_samples} samples is shorter than one {frame_size}-sample frame")
    hop = frame_hop(frame_size, overlap)
    frames = sliding_window_view(signal.samples, frame_size)[::hop]
    window = sps.get_window("hann", frame_size)
    values = np.abs(np.fft.rfft(frames * window, axis=1))
    return Spectrogram(
        values=values,
        frame_hop=hop,
        frame_size=frame_size,
        sample_rate=signal.sample_rate,
        time_origin=frame_size // 2,
    )


def corpus_reference(specs: Iterable[Spectrogram]) -> float:
    """Largest magnitude over a set of spectrograms, for corpus-wide dB scaling."""
    return max((float(s.values.max()) for s in specs if s.values.size), default=0.0)


def log_magnitude(spec: Spectrogram, floor_db: float = -80.0, reference: float | None = None) -> Spectrogram:
    """dB relative to ``reference`` (the spectrogram's own maximum by default), clamped at ``floor_db``."""
    if spec.is_log:
        raise SpectraError("Spectrogram is already log-scaled")
    if floor_db >= 0:
        raise SpectraError(f"floor_db must be negative, got {floor_db!r}")
    ref = float(spec.values.max(initial=0.0)) if reference is None else float(reference)
    if ref <= 0:
        values = np.full(spec.values.shape, float(floor_db))
    else:
        with np.errstate(divide="ignore"):
            values = np.maximum(20.0 * np.log10(spec.values / ref), floor_db)
    return spec.model_copy(update={"values": readonly_array(values), "is_log": True, "floor_db": float(floor_db)})

