"""Adaptive DFT: harmonic analysis along a time-varying fundamental.

The analysis basis follows the running phase of an F0 track, so harmonics stay in
their own coefficient even while the call sweeps. Frames are pitch-synchronous
(one local period apart) and therefore irregular in time; :func:`regrid` maps
them back onto the regular STFT grid for distance computations.
"""

from __future__ import annotations

import logging
import math
from typing import Literal, NamedTuple

import numpy as np
import pandas as pd
from scipy import signal as sps

from callkit.common.errors import AdftError, F0Error
from callkit.common.models import F0Track, HarmonicSpectrogram, Signal, Spectrogram

logger = logging.getLogger(__name__)

DEFAULT_SLEW_HZ_PER_MS = 20.0
VOICING_THRESHOLD = 0.3
MAX_CANDIDATES = 4
LAG_WEIGHT = 0.3
OCTAVE_COST = 0.5


# ---------------------------------------------------------------------------
# F0 tracking
# ---------------------------------------------------------------------------


def _nccf(frame: np.ndarray, window: int) -> np.ndarray:
    """Normalized cross-correlation of the first ``window`` samples against every lag of the frame."""
    ref = frame[:window]
    energy0 = float(ref @ ref)
    numerator = sps.correlate(frame, ref, mode="valid")
    if energy0 == 0:
        return np.zeros_like(numerator)
    cumulative = np.concatenate(([0.0], np.cumsum(frame**2)))
    lags = np.arange(numerator.size)
    energy = np.maximum(cumulative[lags + window] - cumulative[lags], 0.0)
    denominator = np.sqrt(energy0 * energy)
    out = np.zeros_like(numerator)
    np.divide(numerator, denominator, out=out, where=denominator > 1e-6 * energy0)
    return out


def _local_cost(lag: float, value: float, lag_max: int) -> float:
    return (1.0 - value) + LAG_WEIGHT * lag / lag_max


def _candidates(nccf: np.ndarray, lag_min: int, lag_max: int, threshold: float) -> list[tuple[float, float]]:
    """Parabolically interpolated NCCF peaks above ``threshold``, cheapest first."""
    lags = np.arange(max(lag_min, 1), min(lag_max, nccf.size - 2) + 1)
    if lags.size == 0:
        return []
    peaks = lags[(nccf[lags] > nccf[lags - 1]) & (nccf[lags] >= nccf[lags + 1])]
    found: list[tuple[float, float]] = []
    for lag in peaks:
        before, peak, after = nccf[lag - 1], nccf[lag], nccf[lag + 1]
        curvature = before - 2.0 * peak + after
        delta = 0.5 * (before - after) / curvature if curvature < 0 else 0.0
        value = peak - 0.25 * (before - after) * delta
        if value >= threshold:
            found.append((lag + delta, value))
    found.sort(key=lambda c: _local_cost(c[0], c[1], lag_max))
    return found[:MAX_CANDIDATES]


def _best_path(candidates: list[list[tuple[float, float]]], lag_max: int) -> np.ndarray:
    """Minimum-cost lag sequence: local NCCF cost plus a penalty on octave jumps between frames."""
    lags = [np.array([c[0] for c in frame]) for frame in candidates]
    local = [np.array([_local_cost(lag, value, lag_max) for lag, value in frame]) for frame in candidates]
    total = local[0]
    backpointers: list[np.ndarray] = []
    for i in range(1, len(candidates)):
        jump = OCTAVE_COST * np.abs(np.log2(lags[i][:, None] / lags[i - 1][None, :]))
        options = total[None, :] + jump
        choice = np.argmin(options, axis=1)
        backpointers.append(choice)
        total = local[i] + options[np.arange(choice.size), choice]

    path = np.empty(len(candidates))
    state = int(np.argmin(total))
    for i in range(len(candidates) - 1, -1, -1):
        path[i] = lags[i][state]
        if i:
            state = int(backpointers[i - 1][state])
    return path


def _limit_slew(values: np.ndarray, max_steps: np.ndarray | float) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(max_steps, dtype=np.float64), (max(out.size - 1, 0),))
    for i in range(1, out.size):
        previous = out[i - 1]
        out[i] = min(max(out[i], previous - steps[i - 1]), previous + steps[i - 1])
    return out


def estimate_f0_track(
    signal: Signal,
    f_min: float = 80.0,
    f_max: float = 2000.0,
    hop_ms: float = 5.0,
    voicing_threshold: float = VOICING_THRESHOLD,
    slew_hz_per_ms: float = DEFAULT_SLEW_HZ_PER_MS,
) -> F0Track:
    """Per-sample F0 from NCCF candidates smoothed by a minimum-cost path."""
    fs = signal.sample_rate
    if not 0 < f_min < f_max < fs / 2:
        raise F0Error(f"F0 range ({f_min!r}, {f_max!r}) must satisfy 0 < f_min < f_max < {fs / 2}")
    lag_min = max(2, math.floor(fs / f_max))
    lag_max = math.ceil(fs / f_min)
    window = lag_max
    frame_len = window + lag_max
    x = signal.samples
    if x.size < frame_len:
        raise F0Error(f"Signal of {x.size} samples is shorter than two periods of {f_min} Hz")

    hop = max(1, round(fs * hop_ms / 1000))
    starts: list[int] = []
    candidates: list[list[tuple[float, float]]] = []
    for start in range(0, x.size - frame_len + 1, hop):
        found = _candidates(_nccf(x[start : start + frame_len], window), lag_min, lag_max, voicing_threshold)
        if found:
            starts.append(start)
            candidates.append(found)
    if not candidates:
        raise F0Error("unvoiced signal: no pitch candidate above the voicing threshold")

    lags = _best_path(candidates, lag_max)
    centers = np.asarray(starts) + (window + lags) / 2.0
    order = np.argsort(centers, kind="stable")
    centers, freqs = centers[order], fs / lags[order]
    max_step = slew_hz_per_ms * 1000.0 / fs
    freqs = _limit_slew(freqs, max_step * np.diff(centers))
    f0 = np.clip(np.interp(np.arange(x.size), centers, freqs), f_min, f_max)
    logger.debug("F0 track from %d voiced of %d frames", len(starts), len(range(0, x.size - frame_len + 1, hop)))
    return F0Track(f0=f0, sample_rate=fs, f_min=f_min, f_max=f_max)


def halve_f0(track: F0Track) -> F0Track:
    return F0Track(f0=track.f0 * 0.5, sample_rate=track.sample_rate, f_min=track.f_min * 0.5, f_max=track.f_max * 0.5)


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------


class _Analysis(NamedTuple):
    times: np.ndarray
    f0: np.ndarray
    coefficients: np.ndarray
    n_harmonics: np.ndarray
    truncated: np.ndarray


def _harmonic_counts(f0: np.ndarray, nyquist: float) -> np.ndarray:
    counts = np.floor(nyquist / f0).astype(np.int64)
    counts[counts * f0 >= nyquist] -= 1
    return np.maximum(counts, 0)


def _analyse(signal: Signal, track: F0Track, window_periods: float) -> _Analysis:
    x = signal.samples
    fs = signal.sample_rate
    if track.sample_rate != fs:
        raise AdftError(f"F0 track rate {track.sample_rate} Hz does not match signal rate {fs} Hz")
    if track.f0.size != x.size:
        raise AdftError(f"F0 track covers {track.f0.size} samples but the signal has {x.size}")
    if window_periods <= 0:
        raise AdftError(f"window_periods must be positive, got {window_periods!r}")

    times: list[int] = []
    t = 0
    while t < x.size:
        times.append(t)
        t += max(1, round(fs / track.f0[t]))
    frame_times = np.asarray(times, dtype=np.int64)
    f0 = track.f0[frame_times]
    counts = _harmonic_counts(f0, fs / 2)
    phase = track.phase()

    coefficients = np.zeros((frame_times.size, int(counts.max(initial=0))), dtype=np.complex128)
    truncated = np.zeros(frame_times.size, dtype=bool)
    for i, centre in enumerate(frame_times):
        half = window_periods * fs / f0[i] / 2.0
        reach = math.floor(half)
        idx = np.arange(centre - reach, centre + reach + 1)
        inside = (idx >= 0) & (idx < x.size)
        truncated[i] = not inside.all()
        idx = idx[inside]
        weights = 0.5 * (1.0 + np.cos(np.pi * (idx - centre) / half))
        weight_sum = weights.sum()
        if counts[i] == 0 or weight_sum <= 0:
            continue
        k = np.arange(1, counts[i] + 1)
        basis = np.exp(-1j * np.outer(k, phase[idx]))
        coefficients[i, : counts[i]] = basis @ (weights * x[idx]) / weight_sum
    return _Analysis(frame_times, f0, coefficients, counts, truncated)


def _to_hspec(analysis: _Analysis, sample_rate: int) -> HarmonicSpectrogram:
    return HarmonicSpectrogram(
        frame_times=analysis.times,
        f0=analysis.f0,
        magnitudes=2.0 * np.abs(analysis.coefficients),
        n_harmonics=analysis.n_harmonics,
        truncated=analysis.truncated,
        sample_rate=sample_rate,
    )


def adft_spectrogram(signal: Signal, track: F0Track, window_periods: float = 3.0) -> HarmonicSpectrogram:
    """Harmonic amplitudes at pitch-synchronous instants, Hann window of ``window_periods`` local periods.

    Coefficient k at instant t is the window-normalized inner product of x(n) with
    e^{-jkφ(n)}, φ being the running phase of the track; the stored magnitude 2|c_k| is the
    one-sided harmonic amplitude, and the phase of c_k drifts only by the F0 mismatch.
    Frames whose window runs past either end of the signal are kept and flagged ``truncated``.
    """
    return _to_hspec(_analyse(signal, track, window_periods), signal.sample_rate)


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def _mean_energy(analysis: _Analysis) -> float:
    if analysis.times.size == 0:
        return 0.0
    return float(np.mean(np.sum(np.abs(2.0 * analysis.coefficients) ** 2, axis=1)))


def _frame_corrections(analysis: _Analysis, sample_rate: int) -> tuple[np.ndarray, np.ndarray] | None:
    """Energy-weighted F0 mismatch per interior frame, from each harmonic's phase advance across neighbours."""
    times, _, coefficients, counts, truncated = analysis
    if times.size < 3 or coefficients.shape[1] == 0:
        return None
    k = np.arange(1, coefficients.shape[1] + 1)
    span = (times[2:] - times[:-2]).astype(np.float64)
    advance = np.angle(coefficients[2:] * np.conj(coefficients[:-2]))
    mismatch = advance * sample_rate / (2.0 * np.pi * span[:, None]) / k[None, :]

    shared = np.minimum.reduce([counts[:-2], counts[1:-1], counts[2:]])
    weights = np.abs(coefficients[1:-1]) ** 2 * (k[None, :] <= shared[:, None])
    total = weights.sum(axis=1)
    usable = ~(truncated[:-2] | truncated[1:-1] | truncated[2:]) & (total > 0)
    if not usable.any():
        return None
    correction = np.sum(weights * mismatch, axis=1)[usable] / total[usable]
    return times[1:-1][usable].astype(np.float64), correction


def refine_f0(
    signal: Signal,
    track: F0Track,
    max_iters: int = 8,
    tol: float = 0.1,
    window_periods: float = 3.0,
    slew_hz_per_ms: float = DEFAULT_SLEW_HZ_PER_MS,
) -> F0Track:
    """Iteratively correct the track from harmonic phase drift.

    An iteration is accepted only if the mean per-frame harmonic energy does not drop;
    otherwise the previous track is returned. Stops once every frame correction is below ``tol`` Hz.
    """
    fs = signal.sample_rate
    samples = np.arange(signal.n_samples)
    max_step = slew_hz_per_ms * 1000.0 / fs
    current = track
    analysis = _analyse(signal, current, window_periods)
    energy = _mean_energy(analysis)
    for iteration in range(1, max_iters + 1):
        corrections = _frame_corrections(analysis, fs)
        if corrections is None:
            logger.debug("No usable frames for F0 refinement")
            break
        centers, correction = corrections
        if np.max(np.abs(correction)) < tol:
            break
        f0 = np.clip(current.f0 + np.interp(samples, centers, correction), current.f_min, current.f_max)
        f0 = np.clip(_limit_slew(f0, max_step), current.f_min, current.f_max)
        candidate = F0Track(f0=f0, sample_rate=fs, f_min=current.f_min, f_max=current.f_max)
        candidate_analysis = _analyse(signal, candidate, window_periods)
        candidate_energy = _mean_energy(candidate_analysis)
        if candidate_energy < energy:
            logger.debug("Refinement iteration %d lowered harmonic energy; reverting", iteration)
            break
        current, analysis, energy = candidate, candidate_analysis, candidate_energy
    return current


# ---------------------------------------------------------------------------
# Regular grid
# ---------------------------------------------------------------------------


def _nearest_frames(times: np.ndarray, targets: np.ndarray) -> np.ndarray:
    right = np.clip(np.searchsorted(times, targets, side="left"), 0, times.size - 1)
    left = np.clip(right - 1, 0, times.size - 1)
    return np.where(np.abs(times[left] - targets) <= np.abs(times[right] - targets), left, right)


def regrid(
    hspec: HarmonicSpectrogram,
    template: Spectrogram,
    time_offset: int = 0,
    coverage: Literal["bin", "half_f0"] = "bin",
) -> Spectrogram:
    """Nearest-neighbour resampling of harmonic magnitudes onto the template's time/frequency grid.

    ``time_offset`` is the sample position of the template's signal start inside the analysed signal.
    A pixel takes the magnitude of its nearest harmonic when it lies within half a bin of it
    (``coverage="bin"``) or half an F0 (``"half_f0"``); the radius never exceeds f0/2. Other pixels are 0.

    The ``"bin"`` default draws each harmonic as a one-bin stripe and leaves the gaps between
    harmonics at 0, so a pixel-wise distance compares where the harmonics sit as well as how strong
    they are. ``"half_f0"`` fills the gaps and weights the comparison towards harmonic amplitudes.
    """
    if hspec.n_frames == 0:
        raise AdftError("Cannot regrid an empty harmonic spectrogram")
    if hspec.sample_rate != template.sample_rate:
        raise AdftError(f"Sample rates differ: {hspec.sample_rate} Hz vs template {template.sample_rate} Hz")

    values = np.zeros((template.n_frames, template.n_bins))
    k_max = hspec.magnitudes.shape[1]
    if k_max:
        pick = _nearest_frames(hspec.frame_times, template.frame_centers() + time_offset)
        f0 = hspec.f0[pick][:, None]
        counts = hspec.n_harmonics[pick][:, None]
        freqs = np.arange(template.n_bins)[None, :] * template.bin_hz
        k = np.clip(np.floor(freqs / f0 + 0.5), 1, np.maximum(counts, 1)).astype(np.int64)
        distance = np.abs(freqs - k * f0)
        radius = f0 / 2.0 if coverage == "half_f0" else np.minimum(template.bin_hz / 2.0, f0 / 2.0)
        covered = (distance <= radius) & (counts > 0)
        values = np.where(covered, hspec.magnitudes[pick[:, None], k - 1], 0.0)

    return Spectrogram(
        values=values,
        frame_hop=template.frame_hop,
        frame_size=template.frame_size,
        sample_rate=template.sample_rate,
        time_origin=template.time_origin,
    )


# ---------------------------------------------------------------------------
# Inspection
# ---------------------------------------------------------------------------


def harmonic_set_frame(hspec: HarmonicSpectrogram) -> pd.DataFrame:
    """Irregular harmonic set as a long table with columns t, k, freq_hz, magnitude."""
    k = np.arange(1, hspec.magnitudes.shape[1] + 1)
    frame_idx, k_idx = np.nonzero(k[None, :] <= hspec.n_harmonics[:, None])
    return pd.DataFrame(
        {
            "t": hspec.frame_times[frame_idx],
            "k": k[k_idx],
            "freq_hz": hspec.f0[frame_idx] * k[k_idx],
            "magnitude": hspec.magnitudes[frame_idx, k_idx],
        }
    )


def harmonic_concentration(
    spec: Spectrogram, f0_hz: np.ndarray, time_offset: int = 0, neighbourhood_bins: float = 1.0
) -> float:
    """Share of spectrogram energy within ``neighbourhood_bins`` bins of the harmonics of a known F0 curve."""
    if spec.is_log:
        raise AdftError("Harmonic concentration needs a magnitude spectrogram")
    f0_hz = np.asarray(f0_hz, dtype=np.float64)
    centers = np.clip(spec.frame_centers() + time_offset, 0, f0_hz.size - 1)
    f0 = f0_hz[centers][:, None]
    freqs = np.arange(spec.n_bins)[None, :] * spec.bin_hz
    k = np.maximum(np.floor(freqs / f0 + 0.5), 1)
    near = np.abs(freqs - k * f0) <= neighbourhood_bins * spec.bin_hz
    power = spec.values**2
    total = power.sum()
    return float(power[near].sum() / total) if total > 0 else 0.0
