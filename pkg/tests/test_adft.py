from __future__ import annotations

import numpy as np
import pytest

from callkit.common.errors import AdftError, F0Error
from callkit.common.models import F0Track, Signal
from callkit.dsp.adft import (
    adft_spectrogram,
    estimate_f0_track,
    halve_f0,
    harmonic_concentration,
    harmonic_set_frame,
    refine_f0,
    regrid,
)
from callkit.dsp.spectra import stft_magnitude
from tests.helpers import TEST_RATE, harmonic_signal


def _track(f0_start: float, f0_end: float | None = None, n: int = 4000) -> F0Track:
    f0 = np.linspace(f0_start, f0_start if f0_end is None else f0_end, n)
    return F0Track(f0=f0, sample_rate=TEST_RATE, f_min=80.0, f_max=2000.0)


class TestEstimateF0:
    def test_stationary_call(self):
        track = estimate_f0_track(harmonic_signal(600.0), f_min=200.0, f_max=2000.0)
        assert track.f0.size == 4000
        assert np.median(np.abs(track.f0 - 600.0)) < 9.0

    def test_follows_a_chirp(self):
        signal = harmonic_signal(500.0, 900.0)
        track = estimate_f0_track(signal, f_min=200.0, f_max=2000.0)
        truth = np.linspace(500.0, 900.0, signal.n_samples)
        middle = slice(1000, 3000)
        assert np.max(np.abs(track.f0[middle] - truth[middle]) / truth[middle]) < 0.03

    def test_silence_is_unvoiced(self):
        with pytest.raises(F0Error, match="unvoiced"):
            estimate_f0_track(Signal(samples=np.zeros(4000), sample_rate=TEST_RATE))

    def test_too_short_signal(self):
        with pytest.raises(F0Error, match="shorter"):
            estimate_f0_track(harmonic_signal(duration=0.01), f_min=80.0)

    def test_invalid_range(self):
        with pytest.raises(F0Error, match="F0 range"):
            estimate_f0_track(harmonic_signal(), f_min=900.0, f_max=600.0)


def test_halve_f0_halves_values_and_range():
    halved = halve_f0(_track(600.0))
    np.testing.assert_allclose(halved.f0, 300.0)
    assert (halved.f_min, halved.f_max) == (40.0, 1000.0)


class TestAdftSpectrogram:
    def test_magnitudes_follow_harmonic_amplitudes(self):
        hspec = adft_spectrogram(harmonic_signal(600.0), _track(600.0))
        inner = ~hspec.truncated
        assert inner.sum() > 100
        mags = hspec.magnitudes[inner]
        np.testing.assert_allclose(mags[:, 1] / mags[:, 0], 0.5, rtol=0.02)
        np.testing.assert_allclose(mags[:, 2] / mags[:, 0], 0.25, rtol=0.02)
        assert np.all(mags[:, 5:] < 0.01 * mags[:, :1])

    def test_frames_are_one_period_apart(self):
        hspec = adft_spectrogram(harmonic_signal(640.0), _track(640.0))
        assert hspec.frame_times[0] == 0
        assert set(np.diff(hspec.frame_times)) == {25}
        # 12 harmonics of 640 Hz fit below the 8 kHz Nyquist limit
        assert set(hspec.n_harmonics) == {12}

    def test_edge_frames_are_flagged_truncated(self):
        hspec = adft_spectrogram(harmonic_signal(600.0), _track(600.0))
        assert hspec.truncated[0] and hspec.truncated[-1]

    def test_track_length_must_match(self):
        with pytest.raises(AdftError, match="covers"):
            adft_spectrogram(harmonic_signal(600.0), _track(600.0, n=100))


class TestRefine:
    def test_recovers_a_biased_track(self):
        signal = harmonic_signal(600.0)
        refined = refine_f0(signal, _track(630.0))
        assert np.median(np.abs(refined.f0 - 600.0)) < 1.0

    def test_refinement_does_not_lower_harmonic_energy(self):
        signal = harmonic_signal(600.0)
        before = adft_spectrogram(signal, _track(630.0)).magnitudes
        after = adft_spectrogram(signal, refine_f0(signal, _track(630.0))).magnitudes
        assert np.mean(np.sum(after**2, axis=1)) >= np.mean(np.sum(before**2, axis=1))

    def test_exact_track_is_left_alone(self):
        refined = refine_f0(harmonic_signal(600.0), _track(600.0))
        np.testing.assert_allclose(refined.f0, 600.0, atol=0.5)


class TestRegrid:
    def test_matches_template_grid(self):
        signal = harmonic_signal(600.0)
        template = stft_magnitude(signal, 512, 0.75)
        spec = regrid(adft_spectrogram(signal, _track(600.0)), template)
        assert spec.values.shape == template.values.shape
        assert (spec.frame_hop, spec.time_origin) == (template.frame_hop, template.time_origin)

    def test_bin_coverage_marks_only_the_nearest_bin(self):
        # 600 Hz lies 6.25 Hz from bin 19 at 31.25 Hz per bin
        signal = harmonic_signal(600.0)
        template = stft_magnitude(signal, 512, 0.75)
        spec = regrid(adft_spectrogram(signal, _track(600.0)), template)
        assert np.all(spec.values[:, 19] > 0)
        assert np.all(spec.values[:, 18] == 0)
        assert np.all(spec.values[:, 20] == 0)

    def test_half_f0_coverage_fills_between_harmonics(self):
        signal = harmonic_signal(600.0)
        template = stft_magnitude(signal, 512, 0.75)
        hspec = adft_spectrogram(signal, _track(600.0))
        spec = regrid(hspec, template, coverage="half_f0")
        np.testing.assert_array_equal(spec.values[:, 20], spec.values[:, 19])
        assert np.all(spec.values[:, 0] == 0)

    def test_sample_rate_must_match(self):
        hspec = adft_spectrogram(harmonic_signal(600.0), _track(600.0))
        template = stft_magnitude(harmonic_signal(600.0, sample_rate=8000), 256)
        with pytest.raises(AdftError, match="Sample rates differ"):
            regrid(hspec, template)


def test_regridded_adft_concentrates_a_sweep_better_than_stft():
    signal = harmonic_signal(500.0, 1500.0)
    track = _track(500.0, 1500.0)
    template = stft_magnitude(signal, 512, 0.75)
    adft = regrid(adft_spectrogram(signal, track), template)
    assert harmonic_concentration(adft, track.f0) > harmonic_concentration(template, track.f0)


def test_harmonic_set_frame():
    hspec = adft_spectrogram(harmonic_signal(600.0), _track(600.0))
    frame = harmonic_set_frame(hspec)
    assert list(frame.columns) == ["t", "k", "freq_hz", "magnitude"]
    assert len(frame) == int(hspec.n_harmonics.sum())
    np.testing.assert_allclose(frame["freq_hz"], frame["k"] * 600.0)
