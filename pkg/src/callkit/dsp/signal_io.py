"""Call recordings: PCM WAV ingestion and export, onset detection and alignment."""

from __future__ import annotations

import io
import logging
import math
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
import soundfile as sf

from callkit.common._serialization import atomic_write_bytes
from callkit.common.errors import OnsetError, SampleRateMismatchError, WavEncodingError, WavReadError
from callkit.common.models import LabelledCall, Signal

logger = logging.getLogger(__name__)

_PCM_SUBTYPES = {"PCM_16": 16, "PCM_24": 24}
_WAV_FORMATS = {"WAV", "WAVEX"}


def _pcm_bits(path: Path) -> int:
    try:
        info = sf.info(str(path))
    except (RuntimeError, OSError) as exc:
        raise WavReadError(f"Cannot read WAV file {str(path)!r}: {exc}") from exc
    if info.format not in _WAV_FORMATS or info.subtype not in _PCM_SUBTYPES:
        raise WavEncodingError(
            f"Unsupported encoding {info.format}/{info.subtype} in {str(path)!r}. Expected 16- or 24-bit PCM WAV."
        )
    return _PCM_SUBTYPES[info.subtype]


def load_wav(path: Path) -> Signal:
    """Read a 16/24-bit PCM WAV, averaging channels to mono; samples scaled by 1/2^(bits-1)."""
    path = Path(path)
    bits = _pcm_bits(path)
    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as exc:
        raise WavReadError(f"Cannot read WAV file {str(path)!r}: {exc}") from exc
    logger.debug("Loaded %s: %d frames, %d channel(s), %d-bit, %d Hz", path.name, *data.shape, bits, rate)
    return Signal(samples=data.mean(axis=1), sample_rate=int(rate))


def write_wav(path: Path, signal: Signal, bits: int = 16) -> None:
    """Write integer PCM: each sample becomes round(x·2^(bits-1)), clipped to the integer range."""
    if bits not in (16, 24):
        raise ValueError(f"Unsupported bit depth: {bits!r}. Use 16 or 24.")
    full_scale = 2 ** (bits - 1)
    ints = np.clip(np.round(signal.samples * full_scale), -full_scale, full_scale - 1)
    # libsndfile keeps the top 24 bits of int32 input for PCM_24
    data = ints.astype(np.int16) if bits == 16 else ints.astype(np.int32) << 8
    buffer = io.BytesIO()
    sf.write(buffer, data, signal.sample_rate, format="WAV", subtype=f"PCM_{bits}")
    atomic_write_bytes(Path(path), buffer.getvalue())


# ---------------------------------------------------------------------------
# Onsets
# ---------------------------------------------------------------------------


def frame_rms(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """RMS of consecutive non-overlapping frames; the last partial frame is zero-padded."""
    n_frames = math.ceil(samples.size / frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[: samples.size] = samples
    return np.sqrt(np.mean(padded.reshape(n_frames, frame_len) ** 2, axis=1))


def detect_onset(signal: Signal, frame_ms: float = 5.0, threshold_db: float = -30.0) -> int:
    """Start sample of the first frame whose RMS exceeds the peak frame RMS lowered by ``threshold_db``."""
    if signal.n_samples == 0:
        raise OnsetError("no onset: signal is empty")
    if threshold_db >= 0:
        raise ValueError(f"threshold_db must be negative, got {threshold_db!r}")
    frame_len = max(1, round(signal.sample_rate * frame_ms / 1000))
    rms = frame_rms(signal.samples, frame_len)
    peak = rms.max()
    if peak == 0:
        raise OnsetError("no onset: signal is silent")
    first = int(np.flatnonzero(rms > peak * 10 ** (threshold_db / 20))[0])
    return first * frame_len


def align_onset(signal: Signal, frame_ms: float = 5.0, threshold_db: float = -30.0) -> Signal:
    onset = detect_onset(signal, frame_ms=frame_ms, threshold_db=threshold_db)
    return Signal(samples=signal.samples, sample_rate=signal.sample_rate, onset_index=onset)


def trim_to_onset(signal: Signal) -> Signal:
    return Signal(samples=signal.samples[signal.onset_index :], sample_rate=signal.sample_rate)


# ---------------------------------------------------------------------------
# Labelled corpora
# ---------------------------------------------------------------------------


def read_labels(labels_csv: Path) -> pd.DataFrame:
    labels = pd.read_csv(labels_csv, dtype=str)
    missing = {"filename", "individual_id"} - set(labels.columns)
    if missing:
        raise ValueError(f"Labels file {str(labels_csv)!r} is missing column(s): {sorted(missing)}")
    return labels.sort_values("filename", kind="stable").reset_index(drop=True)


def labels_for_calls(call_ids: Sequence[str], labels_csv: Path) -> list[str]:
    """Individual of each call, matching call ids to label file names by stem."""
    labels = read_labels(labels_csv)
    lookup = dict(zip((Path(name).stem for name in labels["filename"]), labels["individual_id"], strict=True))
    missing = [c for c in call_ids if c not in lookup]
    if missing:
        raise ValueError(f"No label for {len(missing)} call(s) in {str(labels_csv)!r}, e.g. {missing[0]!r}")
    return [lookup[c] for c in call_ids]


def ingest_directory(
    directory: Path, labels_csv: Path, frame_ms: float = 5.0, threshold_db: float = -30.0
) -> list[LabelledCall]:
    """Load every labelled WAV in ``directory`` (ordered by file name) with its onset detected."""
    directory = Path(directory)
    labels = read_labels(labels_csv)
    if labels.empty:
        raise ValueError(f"Labels file {str(labels_csv)!r} lists no recordings")

    unlabelled = sorted({p.name for p in directory.glob("*.wav")} - set(labels["filename"]))
    if unlabelled:
        logger.warning("Ignoring %d unlabelled WAV file(s) in %s", len(unlabelled), directory)

    calls: list[LabelledCall] = []
    sample_rate: int | None = None
    for row in labels.itertuples(index=False):
        signal = load_wav(directory / row.filename)
        if sample_rate is None:
            sample_rate = signal.sample_rate
        elif signal.sample_rate != sample_rate:
            raise SampleRateMismatchError(
                f"{row.filename!r} is sampled at {signal.sample_rate} Hz but the corpus uses {sample_rate} Hz"
            )
        signal = align_onset(signal, frame_ms=frame_ms, threshold_db=threshold_db)
        calls.append(LabelledCall(signal=signal, individual_id=row.individual_id, call_id=Path(row.filename).stem))

    call_ids = [c.call_id for c in calls]
    if len(set(call_ids)) != len(call_ids):
        raise ValueError(f"Duplicate recordings in {str(labels_csv)!r}: call ids must be unique")
    logger.info("Ingested %d calls from %d individuals in %s", len(calls), labels["individual_id"].nunique(), directory)
    return calls
