from __future__ import annotations

import logging
from pathlib import Path
from unittest.mock import patch

from filelock import Timeout
import numpy as np
import pytest

from callkit.common import _paths
from callkit.common.models import DistanceMatrix, F0Track, Spectrogram
from callkit.experiments.cache import ArtifactCache, content_key


def _spec(is_log: bool = False) -> Spectrogram:
    values = np.linspace(-40.0, 0.0, 12).reshape(3, 4) if is_log else np.arange(12.0).reshape(3, 4) / 3.0
    return Spectrogram(
        values=values,
        frame_hop=64,
        frame_size=256,
        sample_rate=16000,
        time_origin=128,
        is_log=is_log,
        floor_db=-60.0 if is_log else None,
    )


class TestContentKey:
    def test_param_order_does_not_matter(self):
        assert content_key("spectrogram", {"a": 1, "b": 2}) == content_key("spectrogram", {"b": 2, "a": 1})

    def test_kind_params_and_arrays_all_count(self):
        base = content_key("f0", {"a": 1}, np.arange(3.0))
        assert content_key("spectrogram", {"a": 1}, np.arange(3.0)) != base
        assert content_key("f0", {"a": 2}, np.arange(3.0)) != base
        assert content_key("f0", {"a": 1}, np.arange(4.0)) != base

    def test_dtype_and_shape_count(self):
        ints = np.arange(4, dtype=np.int64)
        assert content_key("x", {}, ints) != content_key("x", {}, ints.astype(np.float64))
        assert content_key("x", {}, ints.reshape(2, 2)) != content_key("x", {}, ints)


class TestArtifactCache:
    def test_miss_then_hit(self, cache: ArtifactCache):
        calls = []

        def compute() -> Spectrogram:
            calls.append(1)
            return _spec()

        first = cache.spectrogram("ab12", compute)
        second = cache.spectrogram("ab12", compute)
        assert len(calls) == 1
        assert (cache.misses, cache.hits) == (1, 1)
        np.testing.assert_array_equal(second.values, first.values)
        assert second.frame_hop == first.frame_hop
        assert cache.path("spectrogram", "ab12").exists()

    def test_log_spectrogram_survives_the_store(self, cache: ArtifactCache):
        original = _spec(is_log=True)
        cache.spectrogram("cd34", lambda: original)
        loaded = cache.spectrogram("cd34", lambda: pytest.fail("should be cached"))
        assert loaded.is_log and loaded.floor_db == -60.0
        assert (loaded.frame_hop, loaded.frame_size, loaded.time_origin) == (64, 256, 128)
        np.testing.assert_array_equal(loaded.values, original.values)

    def test_f0_track_round_trip(self, cache: ArtifactCache):
        track = F0Track(f0=np.linspace(400.0, 500.0, 50), sample_rate=16000, f_min=80.0, f_max=2000.0)
        cache.f0_track("ef56", lambda: track)
        loaded = cache.f0_track("ef56", lambda: pytest.fail("should be cached"))
        np.testing.assert_array_equal(loaded.f0, track.f0)
        assert (loaded.sample_rate, loaded.f_min, loaded.f_max) == (16000, 80.0, 2000.0)

    def test_distance_matrix_round_trip(self, cache: ArtifactCache):
        dm = DistanceMatrix(
            values=[[0.0, 0.25], [0.25, 0.0]],
            call_ids=["ind00-000", "ind01-000"],
            metric="manhattan",
            scale="log",
            representation="lpc_residual/adft_refined",
        )
        cache.distances("0a0b", lambda: dm)
        loaded = cache.distances("0a0b", lambda: pytest.fail("should be cached"))
        assert loaded.call_ids == dm.call_ids
        assert (loaded.metric, loaded.scale, loaded.representation) == ("manhattan", "log", dm.representation)
        np.testing.assert_array_equal(loaded.values, dm.values)

    def test_disabled_cache_always_recomputes(self, tmp_cache_dir: Path):
        cache = ArtifactCache(tmp_cache_dir, enabled=False)
        calls = []
        for _ in range(2):
            cache.spectrogram("ab12", lambda: calls.append(1) or _spec())
        assert len(calls) == 2
        assert (cache.hits, cache.misses) == (0, 0)
        assert not any(tmp_cache_dir.iterdir())

    def test_corrupt_entry_is_recomputed(self, cache: ArtifactCache, caplog):
        path = cache.path("spectrogram", "ff00")
        path.parent.mkdir(parents=True)
        path.write_bytes(b"not an npz archive")
        with caplog.at_level(logging.WARNING):
            spec = cache.spectrogram("ff00", _spec)
        np.testing.assert_array_equal(spec.values, _spec().values)
        assert "unreadable cache entry" in caplog.text
        assert cache.load("spectrogram", "ff00") is not None

    def test_lock_timeout_skips_the_write(self, cache: ArtifactCache, caplog):
        with (
            patch("callkit.common._filelock.FileLock.acquire", side_effect=Timeout("busy.lock")),
            caplog.at_level(logging.WARNING),
        ):
            spec = cache.spectrogram("ab12", _spec)
        np.testing.assert_array_equal(spec.values, _spec().values)
        assert "Timed out" in caplog.text
        assert not cache.path("spectrogram", "ab12").exists()

    def test_default_root_follows_the_cache_dir(self, tmp_path: Path, monkeypatch):
        monkeypatch.setattr(_paths, "CACHE_DIR", tmp_path / "default-cache")
        assert ArtifactCache().root == tmp_path / "default-cache"
        assert ArtifactCache.default(tmp_path / "explicit").root == tmp_path / "explicit" / "cache"
