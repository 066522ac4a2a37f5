"""Serialization helpers: pydantic JSON, atomic file writes, matrix CSV and binary codecs."""

from __future__ import annotations

import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from callkit.common.models import DistanceMatrix, Spectrogram

_HEADER_DTYPE = np.dtype("<u4")
_VALUE_DTYPE = np.dtype("<f4")
_HEADER_BYTES = 4 * _HEADER_DTYPE.itemsize


def model_to_json(model: BaseModel, *, indent: int | None = None) -> str:
    """Serialize a Pydantic model to JSON (no None values)."""
    if indent is None:
        return model.model_dump_json(exclude_none=True)
    return json.dumps(model.model_dump(mode="json", exclude_none=True), indent=indent)


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------


def _replace_with_retry(
    src: str | os.PathLike, dst: str | os.PathLike, retries: int = 5, base_delay: float = 0.05
) -> None:
    for attempt in range(retries):
        try:
            os.replace(src, dst)
            return
        except PermissionError:
            # NOTE: only Windows briefly locks replace targets; elsewhere this is a real error.
            if sys.platform != "win32" or attempt == retries - 1:
                raise
            time.sleep(base_delay * (2**attempt))


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        os.write(fd, data)
        os.close(fd)
        fd = -1
        _replace_with_retry(tmp_path, path)
    except BaseException:
        if fd >= 0:
            os.close(fd)
        if Path(tmp_path).exists():
            Path(tmp_path).unlink()
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


# ---------------------------------------------------------------------------
# Compact binary matrices
# ---------------------------------------------------------------------------


def pack_matrix(values: np.ndarray, header: tuple[int, int, int, int]) -> bytes:
    """16-byte header of four little-endian uint32, then row-major little-endian float32 values."""
    if values.ndim != 2 or values.shape != header[:2]:
        raise ValueError(f"Header {header} does not describe a matrix of shape {values.shape}")
    body = np.ascontiguousarray(values, dtype=_VALUE_DTYPE).tobytes()
    return np.asarray(header, dtype=_HEADER_DTYPE).tobytes() + body


def unpack_matrix(data: bytes) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    if len(data) < _HEADER_BYTES:
        raise ValueError(f"Binary matrix truncated: {len(data)} bytes is shorter than the header")
    header = tuple(int(v) for v in np.frombuffer(data[:_HEADER_BYTES], dtype=_HEADER_DTYPE))
    rows, cols = header[0], header[1]
    body = data[_HEADER_BYTES:]
    if len(body) != rows * cols * _VALUE_DTYPE.itemsize:
        raise ValueError(f"Binary matrix body holds {len(body)} bytes, expected {rows}x{cols} float32 values")
    values = np.frombuffer(body, dtype=_VALUE_DTYPE).reshape(rows, cols).astype(np.float64)
    return values, (rows, cols, header[2], header[3])  # type: ignore[return-value]


def write_spectrogram_binary(path: Path, spec: Spectrogram) -> None:
    atomic_write_bytes(path, pack_matrix(spec.values, (spec.n_frames, spec.n_bins, spec.frame_hop, spec.frame_size)))


def read_spectrogram_binary(
    path: Path, sample_rate: int, *, is_log: bool = False, floor_db: float | None = None
) -> Spectrogram:
    """Load a binary spectrogram; the header does not carry the sample rate or scale."""
    values, (_, _, hop, frame_size) = unpack_matrix(path.read_bytes())
    return Spectrogram(
        values=values,
        frame_hop=hop,
        frame_size=frame_size,
        sample_rate=sample_rate,
        is_log=is_log,
        time_origin=frame_size // 2,
        floor_db=floor_db,
    )


def write_spectrogram_csv(path: Path, spec: Spectrogram) -> None:
    """One row per frame (indexed by frame-center sample), one column per bin frequency."""
    freqs = np.arange(spec.n_bins) * spec.bin_hz
    frame = pd.DataFrame(spec.values, index=spec.frame_centers(), columns=[f"{f:.3f}" for f in freqs])
    frame.index.name = "center_sample"
    atomic_write_text(path, frame.to_csv())


# ---------------------------------------------------------------------------
# Distance matrices
# ---------------------------------------------------------------------------


def _tags_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_distance_csv(path: Path, dm: DistanceMatrix) -> None:
    """Square CSV with a header row of call ids, plus a ``<name>.json`` sidecar holding the tags."""
    frame = pd.DataFrame(dm.values, index=dm.call_ids, columns=dm.call_ids)
    frame.index.name = "call_id"
    atomic_write_text(path, frame.to_csv())
    tags = {"metric": dm.metric, "scale": dm.scale, "representation": dm.representation}
    atomic_write_text(_tags_path(path), json.dumps(tags, indent=2))


def read_distance_csv(
    path: Path, *, metric: str | None = None, scale: str | None = None, representation: str | None = None
) -> DistanceMatrix:
    frame = pd.read_csv(path, index_col=0, dtype={"call_id": str}, float_precision="round_trip")
    tags: dict[str, str] = {"metric": "euclidean", "scale": "mag", "representation": "raw/stft"}
    if _tags_path(path).exists():
        tags.update(json.loads(_tags_path(path).read_text()))
    for key, value in (("metric", metric), ("scale", scale), ("representation", representation)):
        if value is not None:
            tags[key] = value
    ids = [str(c) for c in frame.columns]
    if [str(i) for i in frame.index] != ids:
        raise ValueError(f"Distance CSV {str(path)!r} must list the same call ids on both axes")
    return DistanceMatrix(values=frame.to_numpy(dtype=np.float64), call_ids=ids, **tags)


def write_distance_binary(path: Path, dm: DistanceMatrix) -> None:
    atomic_write_bytes(path, pack_matrix(dm.values, (dm.n, dm.n, 0, 0)))
