from __future__ import annotations

import numpy as np
from pydantic import ValidationError
import pytest

from callkit.common.models import (
    REPRESENTATIONS,
    ClassificationReport,
    CorpusSpec,
    DistanceMatrix,
    ExperimentGrid,
    F0Track,
    GridRow,
    LinearMetric,
    Signal,
    Spectrogram,
    split_representation,
)


class TestSignal:
    def test_samples_are_read_only_float64(self):
        signal = Signal(samples=[1, 2, 3], sample_rate=8000)
        assert signal.samples.dtype == np.float64
        with pytest.raises(ValueError, match="read-only"):
            signal.samples[0] = 5.0

    def test_rejects_multichannel_samples(self):
        with pytest.raises(ValidationError, match="one-dimensional"):
            Signal(samples=np.zeros((2, 10)), sample_rate=8000)

    def test_rejects_non_finite_samples(self):
        with pytest.raises(ValidationError, match="finite"):
            Signal(samples=[0.0, np.nan], sample_rate=8000)

    def test_rejects_onset_past_the_end(self):
        with pytest.raises(ValidationError, match="onset_index"):
            Signal(samples=np.zeros(10), sample_rate=8000, onset_index=10)

    def test_empty_signal_is_allowed(self):
        signal = Signal(samples=[], sample_rate=8000)
        assert signal.n_samples == 0
        assert signal.duration == 0.0


class TestRepresentations:
    def test_seven_representations(self):
        assert len(REPRESENTATIONS) == 7
        assert "lpc_filter/stft" in REPRESENTATIONS
        assert "lpc_filter/adft_refined" not in REPRESENTATIONS

    def test_split(self):
        assert split_representation("lpc_residual/adft_refined") == ("lpc_residual", "adft_refined")

    @pytest.mark.parametrize("name", ["raw", "raw/mfcc", "lpc/stft", "lpc_filter/adft_unrefined"])
    def test_rejects_invalid_names(self, name):
        with pytest.raises(ValueError, match="Invalid representation"):
            split_representation(name)


class TestSpectrogram:
    def test_log_spectrogram_requires_floor(self):
        with pytest.raises(ValidationError, match="floor_db"):
            Spectrogram(values=np.zeros((2, 3)), frame_hop=1, frame_size=4, sample_rate=8000, is_log=True)

    def test_magnitudes_must_be_non_negative(self):
        with pytest.raises(ValidationError, match="non-negative"):
            Spectrogram(values=-np.ones((2, 3)), frame_hop=1, frame_size=4, sample_rate=8000)

    def test_frame_centers_and_pad_value(self):
        spec = Spectrogram(values=np.zeros((3, 5)), frame_hop=2, frame_size=8, sample_rate=8000, time_origin=4)
        np.testing.assert_array_equal(spec.frame_centers(), [4, 6, 8])
        assert spec.bin_hz == 1000.0
        assert spec.pad_value == 0.0
        log = spec.model_copy(update={"is_log": True, "floor_db": -60.0})
        assert log.pad_value == -60.0


def test_f0_track_values_must_stay_in_range():
    with pytest.raises(ValidationError, match="within"):
        F0Track(f0=[100.0, 3000.0], sample_rate=8000, f_min=80.0, f_max=2000.0)


class TestDistanceMatrix:
    def test_rejects_asymmetric_values(self):
        with pytest.raises(ValidationError, match="symmetric"):
            DistanceMatrix(values=[[0.0, 1.0], [2.0, 0.0]], call_ids=["a", "b"], metric="euclidean")

    def test_rejects_non_zero_diagonal(self):
        with pytest.raises(ValidationError, match="zero diagonal"):
            DistanceMatrix(values=[[1.0, 1.0], [1.0, 0.0]], call_ids=["a", "b"], metric="euclidean")

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValidationError, match="unique"):
            DistanceMatrix(values=np.zeros((2, 2)), call_ids=["a", "a"], metric="manhattan")

    def test_metric_tag(self):
        dm = DistanceMatrix(values=np.zeros((2, 2)), call_ids=["a", "b"], metric="manhattan", scale="log")
        assert dm.metric_tag == "manhattan/log"


def test_classification_report_checks_accuracy_against_confusion():
    with pytest.raises(ValidationError, match="accuracy"):
        ClassificationReport(
            accuracy=1.0,
            per_class_recall={"a": 1.0, "b": 0.0},
            labels=["a", "b"],
            confusion=[[2, 0], [2, 0]],
            chance_level=0.5,
            n_calls=4,
        )


def test_linear_metric_rejects_increasing_loss():
    L = np.eye(2)
    with pytest.raises(ValidationError, match="non-increasing"):
        LinearMetric(projection=L, importance=[1.0, 1.0], loss_history=[1.0, 2.0])


class TestExperimentGrid:
    def test_default_grid_has_28_cells(self):
        grid = ExperimentGrid(workers=1)
        assert len(grid.cells()) == 28
        assert grid.cells()[0] == ("raw/stft", "mag", "euclidean")

    def test_rejects_empty_selection(self):
        with pytest.raises(ValidationError, match="non-empty"):
            ExperimentGrid(scales=[], workers=1)

    def test_rejects_lpc_filter_with_adft(self):
        with pytest.raises(ValidationError, match="lpc_filter only combines with stft"):
            ExperimentGrid(representations=["lpc_filter/adft_refined"], workers=1)

    def test_rejects_inverted_f0_range(self):
        with pytest.raises(ValidationError, match="f0_min"):
            ExperimentGrid(f0_min=500.0, f0_max=400.0, workers=1)

    def test_workers_default_from_environment(self, monkeypatch):
        monkeypatch.setenv("CALLKIT_WORKERS", "3")
        assert ExperimentGrid().workers == 3


def test_corpus_spec_rejects_unknown_preset():
    with pytest.raises(ValidationError):
        CorpusSpec(preset="forest")


def test_grid_row_defaults_to_ok():
    row = GridRow(representation="raw/stft", scale="log", metric="manhattan", accuracy=0.5, chance_level=0.2)
    assert row.status == "ok"
    assert row.error is None
