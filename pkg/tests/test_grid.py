from __future__ import annotations

from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from callkit.common._serialization import read_distance_csv, unpack_matrix
from callkit.common.errors import F0Error, GridError
from callkit.common.models import CorpusSpec, ExperimentGrid, LabelledCall
from callkit.dsp.signal_io import trim_to_onset
from callkit.dsp.spectra import log_magnitude, stft_magnitude
from callkit.experiments.cache import ArtifactCache
from callkit.experiments.grid import load_corpus, run_grid, slug
from callkit.experiments.report import emit_report
from callkit.experiments.synth_corpus import generate_corpus, write_corpus
from callkit.learn.distances import pairwise_matrix
from callkit.learn.knn_classify import loo_accuracy


def test_slug():
    assert slug("raw/stft", "log", "manhattan") == "raw-stft_log_manhattan"
    assert slug("lpc_residual/adft_refined", "mag") == "lpc_residual-adft_refined_mag"


def test_single_cell_matches_the_manual_pipeline(small_corpus, small_grid):
    rows = run_grid(small_corpus, small_grid)
    assert len(rows) == 1
    row = rows[0]
    assert (row.representation, row.scale, row.metric, row.status) == ("raw/stft", "log", "manhattan", "ok")

    calls = small_corpus.calls
    specs = [log_magnitude(stft_magnitude(trim_to_onset(c.signal), 512, 0.75), -80.0) for c in calls]
    dm = pairwise_matrix(specs, [c.call_id for c in calls], "manhattan", 20.0)
    report = loo_accuracy(dm, [c.individual_id for c in calls], k=3)
    assert row.accuracy == report.accuracy
    assert row.chance_level == pytest.approx(1 / 3)
    assert row.n_calls == 15


def test_rows_follow_grid_order(small_corpus, tmp_cache_dir: Path):
    grid = ExperimentGrid(
        representations=["raw/stft", "lpc_filter/stft"],
        scales=["mag", "log"],
        metrics=["euclidean", "manhattan"],
        frame_size=512,
        cache_dir=tmp_cache_dir,
        workers=3,
    )
    rows = run_grid(small_corpus, grid)
    assert [(r.representation, r.scale, r.metric) for r in rows] == grid.cells()
    assert all(r.status == "ok" for r in rows)
    assert all(0.0 <= r.accuracy <= 1.0 for r in rows)


def test_failing_representation_is_recorded_and_the_run_continues(small_corpus, tmp_cache_dir: Path):
    grid = ExperimentGrid(
        representations=["raw/stft", "raw/adft_unrefined"],
        scales=["log"],
        metrics=["manhattan"],
        frame_size=512,
        cache_dir=tmp_cache_dir,
        workers=2,
    )
    with patch("callkit.experiments.representations.estimate_f0_track", side_effect=F0Error("unvoiced signal")):
        rows = run_grid(small_corpus, grid)
    ok, failed = rows
    assert ok.status == "ok" and ok.accuracy is not None
    assert failed.status == "error"
    assert failed.accuracy is None
    assert failed.error.startswith("[unvoiced_signal]")


def test_cached_run_matches_cold_run(small_corpus, small_grid, tmp_cache_dir: Path):
    grid = small_grid.model_copy(update={"representations": ["raw/stft", "lpc_residual/stft"]})
    cold = run_grid(small_corpus, grid, ArtifactCache(tmp_cache_dir))
    warm_cache = ArtifactCache(tmp_cache_dir)
    warm = run_grid(small_corpus, grid, warm_cache)
    assert warm_cache.misses == 0
    assert warm_cache.hits > 0
    uncached = run_grid(small_corpus, grid, ArtifactCache(enabled=False))
    for a, b, c in zip(cold, warm, uncached, strict=True):
        assert a.accuracy == b.accuracy == c.accuracy


def test_changed_parameters_miss_the_cache(small_corpus, small_grid, tmp_cache_dir: Path):
    run_grid(small_corpus, small_grid, ArtifactCache(tmp_cache_dir))
    cache = ArtifactCache(tmp_cache_dir)
    run_grid(small_corpus, small_grid.model_copy(update={"max_shift_ms": 5.0}), cache)
    # spectrograms are reused, the distance matrix is not
    assert cache.hits == 15
    assert cache.misses == 1


def test_out_dir_receives_distance_csvs(small_corpus, small_grid, tmp_path: Path):
    out = tmp_path / "out"
    run_grid(small_corpus, small_grid.model_copy(update={"out_dir": out}))
    dm = read_distance_csv(out / "distances" / "raw-stft_log_manhattan.csv")
    assert dm.call_ids == [c.call_id for c in small_corpus.calls]
    assert (dm.metric, dm.scale, dm.representation) == ("manhattan", "log", "raw/stft")
    assert np.all(np.diag(dm.values) == 0)


def test_lmnn_and_tsne_side_outputs(small_corpus, small_grid, tmp_path: Path):
    out = tmp_path / "out"
    grid = small_grid.model_copy(
        update={
            "out_dir": out,
            "lmnn_representations": ["raw/stft"],
            "lmnn_pool": (4, 8),
            "lmnn_iters": 5,
            "tsne_representations": ["raw/stft"],
            "tsne_perplexity": 4.0,
        }
    )
    run_grid(small_corpus, grid)
    for name in ("importance.csv", "rank.csv", "rank.png", "projection.bin"):
        assert (out / "lmnn" / f"raw-stft_log_{name}").exists()
    _, header = unpack_matrix((out / "lmnn" / "raw-stft_log_projection.bin").read_bytes())
    assert header == (32, 32, 4, 8)
    assert (out / "tsne" / "raw-stft_log_manhattan.csv").exists()
    assert (out / "tsne" / "raw-stft_log_manhattan.png").exists()


def test_side_output_failure_does_not_fail_the_grid(small_corpus, small_grid, tmp_path: Path):
    # 15 calls cannot support a perplexity of 30
    grid = small_grid.model_copy(update={"out_dir": tmp_path / "out", "tsne_representations": ["raw/stft"]})
    rows = run_grid(small_corpus, grid)
    assert rows[0].status == "ok"
    assert not (tmp_path / "out" / "tsne").exists()


class TestValidation:
    def test_needs_two_calls(self, small_corpus, small_grid):
        with pytest.raises(GridError, match="at least 2 calls"):
            run_grid(small_corpus.calls[:1], small_grid)

    def test_ids_must_be_unique(self, small_corpus, small_grid):
        first = small_corpus.calls[0]
        clone = LabelledCall(signal=first.signal, individual_id="other", call_id=first.call_id)
        with pytest.raises(GridError, match="unique"):
            run_grid([first, clone], small_grid)


class TestLoadCorpus:
    def test_synthesizes_from_the_preset(self):
        calls = load_corpus(CorpusSpec(individuals=2, calls=2, seed=5, sample_rate=16000))
        assert [c.call_id for c in calls] == ["ind00-000", "ind00-001", "ind01-000", "ind01-001"]

    def test_reads_a_directory(self, small_corpus, tmp_path: Path):
        directory = write_corpus(small_corpus, tmp_path / "corpus")
        calls = load_corpus(CorpusSpec(data_dir=directory))
        assert [c.call_id for c in calls] == [c.call_id for c in small_corpus.calls]


def test_repeated_runs_write_identical_results(small_corpus, tmp_path: Path):
    grid = ExperimentGrid(
        representations=["raw/stft", "lpc_residual/stft", "raw/adft_unrefined"],
        scales=["log"],
        metrics=["manhattan", "euclidean"],
        frame_size=512,
        use_cache=False,
        workers=3,
    )
    first = emit_report(run_grid(small_corpus, grid), tmp_path / "first")
    second = emit_report(run_grid(small_corpus, grid), tmp_path / "second")
    assert first["csv"].read_bytes() == second["csv"].read_bytes()


def test_source_identity_favours_residual_and_adaptive_analyses(tmp_cache_dir: Path):
    # reduced scale: 6 individuals x 6 calls at 48 kHz
    corpus = generate_corpus(6, 6, master_seed=0, preset="source_identity", workers=4)
    grid = ExperimentGrid(
        representations=["raw/stft", "lpc_residual/stft", "raw/adft_unrefined"],
        scales=["log"],
        metrics=["manhattan"],
        cache_dir=tmp_cache_dir,
        workers=3,
    )
    raw, residual, adaptive = (row.accuracy for row in run_grid(corpus, grid))
    assert residual > raw
    assert adaptive > raw
    assert min(raw, residual, adaptive) > 1 / 6
