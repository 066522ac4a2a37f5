"""Content-addressed ``.npz`` store for spectrograms, F0 tracks and distance matrices.

Artifacts live at ``<root>/<kind>/<hh>/<hash>.npz`` where the hash is the sha256 of the
sorted-key JSON parameters and of every input array (dtype, shape and bytes). Writes go
through a temp file and ``os.replace`` under a per-directory file lock.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import threading
import zipfile
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any

import numpy as np

from callkit.common._filelock import directory_lock
from callkit.common._paths import cache_dir
from callkit.common._serialization import atomic_write_bytes
from callkit.common.models import DistanceMatrix, F0Track, Spectrogram

logger = logging.getLogger(__name__)


def content_key(kind: str, params: Mapping[str, Any], *arrays: np.ndarray) -> str:
    digest = hashlib.sha256(kind.encode())
    digest.update(json.dumps(params, sort_keys=True, default=str).encode())
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(f"{array.dtype.str}{array.shape}".encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


class ArtifactCache:
    """Thread- and process-safe artifact store; a disabled cache always recomputes."""

    def __init__(self, root: Path | None = None, *, enabled: bool = True) -> None:
        self.root = root if root is not None else cache_dir()
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self._counter_lock = threading.Lock()

    @classmethod
    def default(cls, base_dir: Path | None = None, *, enabled: bool = True) -> ArtifactCache:
        return cls(cache_dir(base_dir), enabled=enabled)

    def path(self, kind: str, key: str) -> Path:
        return self.root / kind / key[:2] / f"{key}.npz"

    def _count(self, hit: bool) -> None:
        with self._counter_lock:
            if hit:
                self.hits += 1
            else:
                self.misses += 1

    def load(self, kind: str, key: str) -> dict[str, np.ndarray] | None:
        if not self.enabled:
            return None
        path = self.path(kind, key)
        if not path.exists():
            self._count(hit=False)
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                arrays = {name: data[name] for name in data.files}
        except (OSError, ValueError, zipfile.BadZipFile) as exc:
            logger.warning("Ignoring unreadable cache entry %s: %s", path, exc)
            self._count(hit=False)
            return None
        self._count(hit=True)
        return arrays

    def store(self, kind: str, key: str, **arrays: np.ndarray) -> None:
        if not self.enabled:
            return
        path = self.path(kind, key)
        buffer = io.BytesIO()
        np.savez(buffer, **arrays)
        with directory_lock(path.parent) as locked:
            if locked:
                atomic_write_bytes(path, buffer.getvalue())

    # ---------------------------------------------------------------------------
    # Typed helpers
    # ---------------------------------------------------------------------------

    def spectrogram(self, key: str, compute: Callable[[], Spectrogram]) -> Spectrogram:
        cached = self.load("spectrogram", key)
        if cached is not None:
            return _spectrogram_from_arrays(cached)
        spec = compute()
        self.store("spectrogram", key, **_spectrogram_arrays(spec))
        return spec

    def f0_track(self, key: str, compute: Callable[[], F0Track]) -> F0Track:
        cached = self.load("f0", key)
        if cached is not None:
            f_min, f_max, sample_rate = cached["bounds"]
            return F0Track(f0=cached["f0"], sample_rate=int(sample_rate), f_min=f_min, f_max=f_max)
        track = compute()
        bounds = np.array([track.f_min, track.f_max, track.sample_rate], dtype=np.float64)
        self.store("f0", key, f0=track.f0, bounds=bounds)
        return track

    def distances(self, key: str, compute: Callable[[], DistanceMatrix]) -> DistanceMatrix:
        cached = self.load("distances", key)
        if cached is not None:
            metric, scale, representation = (str(v) for v in cached["tags"])
            return DistanceMatrix(
                values=cached["values"],
                call_ids=[str(v) for v in cached["call_ids"]],
                metric=metric,  # type: ignore[arg-type]
                scale=scale,  # type: ignore[arg-type]
                representation=representation,
            )
        dm = compute()
        self.store(
            "distances",
            key,
            values=dm.values,
            call_ids=np.array(dm.call_ids, dtype=np.str_),
            tags=np.array([dm.metric, dm.scale, dm.representation], dtype=np.str_),
        )
        return dm


def _spectrogram_arrays(spec: Spectrogram) -> dict[str, np.ndarray]:
    return {
        "values": spec.values,
        "layout": np.array([spec.frame_hop, spec.frame_size, spec.sample_rate, spec.time_origin], dtype=np.int64),
        "log": np.array([float(spec.is_log), np.nan if spec.floor_db is None else spec.floor_db]),
    }


def _spectrogram_from_arrays(arrays: Mapping[str, np.ndarray]) -> Spectrogram:
    hop, frame_size, sample_rate, time_origin = (int(v) for v in arrays["layout"])
    is_log, floor_db = arrays["log"]
    return Spectrogram(
        values=arrays["values"],
        frame_hop=hop,
        frame_size=frame_size,
        sample_rate=sample_rate,
        time_origin=time_origin,
        is_log=bool(is_log),
        floor_db=None if np.isnan(floor_db) else float(floor_db),
    )
