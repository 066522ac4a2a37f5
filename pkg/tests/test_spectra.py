from __future__ import annotations

import numpy as np
import pytest
from scipy import signal as sps

from callkit.common.errors import SpectraError
from callkit.common.models import Signal, Spectrogram
from callkit.dsp.spectra import corpus_reference, frame_hop, log_magnitude, stft_magnitude
from tests.helpers import TEST_RATE


def _tone(freq: float, n: int = 4096, amp: float = 0.5) -> Signal:
    t = np.arange(n) / TEST_RATE
    return Signal(samples=amp * np.sin(2 * np.pi * freq * t), sample_rate=TEST_RATE)


class TestStft:
    def test_frame_count_and_bins(self):
        spec = stft_magnitude(_tone(1000.0), frame_size=1024, overlap=0.75)
        assert spec.frame_hop == 256
        assert spec.n_frames == 1 + (4096 - 1024) // 256
        assert spec.n_bins == 513
        assert spec.time_origin == 512

    def test_tone_peaks_in_its_bin(self):
        # 1000 Hz is exactly bin 64 at 16 kHz / 1024
        spec = stft_magnitude(_tone(1000.0), frame_size=1024)
        assert np.all(np.argmax(spec.values, axis=1) == 64)

    def test_hann_peak_magnitude(self):
        spec = stft_magnitude(_tone(1000.0, amp=1.0), frame_size=1024)
        # periodic Hann sums to N/2, so a unit sine on a bin center gives N/4
        assert spec.values[:, 64] == pytest.approx(np.full(spec.n_frames, 256.0), rel=1e-9)

    def test_parseval_per_frame(self):
        x = np.random.default_rng(0).standard_normal(4096)
        spec = stft_magnitude(Signal(samples=x, sample_rate=TEST_RATE), frame_size=512, overlap=0.5)
        frames = np.stack([x[i * 256 : i * 256 + 512] for i in range(spec.n_frames)]) * sps.get_window("hann", 512)
        weights = np.full(spec.n_bins, 2.0)
        weights[[0, -1]] = 1.0
        np.testing.assert_allclose(spec.values**2 @ weights, 512 * np.sum(frames**2, axis=1), rtol=1e-10)

    def test_one_hop_delay_shifts_frames_by_one(self):
        x = np.random.default_rng(1).standard_normal(4096)
        spec = stft_magnitude(Signal(samples=x, sample_rate=TEST_RATE), frame_size=1024)
        delayed = stft_magnitude(Signal(samples=np.concatenate([np.zeros(256), x]), sample_rate=TEST_RATE), 1024)
        assert delayed.n_frames == spec.n_frames + 1
        np.testing.assert_allclose(delayed.values[1:], spec.values, atol=1e-9)

    def test_short_signal_is_rejected(self):
        with pytest.raises(SpectraError, match="shorter than one"):
            stft_magnitude(_tone(1000.0, n=100), frame_size=256)

    def test_overlap_must_be_below_one(self):
        with pytest.raises(SpectraError, match="overlap"):
            frame_hop(1024, 1.0)


class TestLogMagnitude:
    def _spec(self, values) -> Spectrogram:
        return Spectrogram(values=values, frame_hop=1, frame_size=4, sample_rate=8000)

    def test_db_relative_to_own_maximum(self):
        log = log_magnitude(self._spec([[1.0, 0.1, 0.0]]), floor_db=-80.0)
        np.testing.assert_allclose(log.values, [[0.0, -20.0, -80.0]])
        assert log.is_log
        assert log.floor_db == -80.0

    def test_values_lie_between_floor_and_zero(self):
        rng = np.random.default_rng(0)
        log = log_magnitude(self._spec(rng.random((5, 7)) ** 8), floor_db=-30.0)
        assert log.values.min() >= -30.0
        assert log.values.max() == 0.0

    def test_zero_reference_gives_floor_everywhere(self):
        log = log_magnitude(self._spec(np.zeros((2, 3))), floor_db=-60.0)
        np.testing.assert_array_equal(log.values, np.full((2, 3), -60.0))

    def test_corpus_reference(self):
        quiet = self._spec([[0.1, 0.05]])
        loud = self._spec([[1.0, 0.0]])
        reference = corpus_reference([quiet, loud])
        assert reference == 1.0
        np.testing.assert_allclose(log_magnitude(quiet, reference=reference).values, [[-20.0, 20 * np.log10(0.05)]])

    def test_already_log_is_rejected(self):
        log = log_magnitude(self._spec([[1.0]]))
        with pytest.raises(SpectraError, match="already"):
            log_magnitude(log)
