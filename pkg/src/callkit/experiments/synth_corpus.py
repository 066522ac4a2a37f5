"""Seeded synthetic call corpora with known, switchable sources of individual identity.

Each individual is an :class:`IndividualProfile` (f0 sweep, harmonic amplitudes, formant
resonances, duration statistics). Calls add per-call jitter and, optionally, ambient
noise coloured by a random all-pole channel drawn per call, plus a noise floor. Every call
has its own seed derived from ``(master_seed, individual index, call index)`` so generation
order never changes the audio.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import signal as sps

from callkit.common._serialization import atomic_write_text
from callkit.common.models import Formant, IndividualProfile, LabelledCall, Signal, SynthCorpus
from callkit.dsp.signal_io import align_onset, ingest_directory, write_wav

logger = logging.getLogger(__name__)

TWO_VOICE_RATIO = 1.0 + math.sqrt(2.0) / 10.0
PEAK_LEVEL = 0.9
ATTACK_S = 0.010
RELEASE_S = 0.030
MEDIAN_DURATION_S = 0.272
PRESETS = ("default", "source_identity", "band_identity")
IDENTITY_BAND_HZ = (1000.0, 3000.0)


# ---------------------------------------------------------------------------
# Single calls
# ---------------------------------------------------------------------------


def _harmonic_stack(f0: np.ndarray, amps: np.ndarray, sample_rate: int) -> np.ndarray:
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    out = np.zeros(f0.size)
    top = f0.max()
    for k, amp in enumerate(amps, start=1):
        if k * top >= sample_rate / 2:
            break
        if amp:
            out += amp * np.sin(k * phase)
    return out


def apply_formant(x: np.ndarray, formant: Formant, sample_rate: int) -> np.ndarray:
    """Peaking resonance: x + (gain − 1)·bandpass(x), with Q = center / bandwidth."""
    if formant.center_hz >= sample_rate / 2:
        raise ValueError(f"Formant at {formant.center_hz} Hz is not below Nyquist ({sample_rate / 2} Hz)")
    b, a = sps.iirpeak(formant.center_hz, Q=formant.center_hz / formant.bandwidth_hz, fs=sample_rate)
    return x + (formant.gain - 1.0) * sps.lfilter(b, a, x)


def _envelope(n: int, sample_rate: int) -> np.ndarray:
    envelope = np.ones(n)
    attack = min(n, round(ATTACK_S * sample_rate))
    release = min(n - attack, round(RELEASE_S * sample_rate))
    envelope[:attack] = np.linspace(0.0, 1.0, attack)
    if release:
        envelope[n - release :] *= np.linspace(1.0, 0.0, release)
    return envelope


def random_channel(rng: np.random.Generator, resonances: int, sample_rate: int) -> np.ndarray:
    """All-pole recording channel: one real tilt pole and ``resonances`` broad pole pairs.

    Returns the denominator for ``lfilter([1], a, x)``; resonance bandwidths lie in 800..2000 Hz.
    """
    poles: list[complex] = [complex(rng.uniform(-0.75, 0.75))]
    top = min(16000.0, 0.4 * sample_rate)
    for center in np.exp(rng.uniform(math.log(800.0), math.log(top), resonances)):
        radius = math.exp(-math.pi * rng.uniform(800.0, 2000.0) / sample_rate)
        pole = radius * np.exp(2j * np.pi * center / sample_rate)
        poles += [pole, np.conj(pole)]
    return np.real(np.poly(poles))


def generate_call(profile: IndividualProfile, seed: int, sample_rate: int = 48000) -> Signal:
    """Render one call.

    Jittered f0 sweep → harmonic source(s) → formants → envelope, then ambient noise and the
    per-call channel act on the whole clip, lead included; the noise floor is added last and the
    result is peak-normalized to 0.9.
    """
    rng = np.random.default_rng(seed)
    duration = max(profile.duration_mean + profile.duration_sd * rng.standard_normal(), 0.25 * profile.duration_mean)
    f_start, f_end = (
        float(np.clip(f * (1.0 + profile.f0_jitter * rng.standard_normal()), 80.5, 1999.5))
        for f in (profile.f0_start, profile.f0_end)
    )
    amps = np.asarray(profile.harmonic_amps)
    amps = np.maximum(amps * (1.0 + profile.amp_jitter * rng.standard_normal(amps.size)), 0.0)
    channel = random_channel(rng, profile.channel_resonances, sample_rate) if profile.channel_resonances else None
    lead = round(rng.uniform(0.0, profile.lead_ms) * sample_rate / 1000) if profile.lead_ms > 0 else 0

    n = max(2, round(duration * sample_rate))
    f0 = np.linspace(f_start, f_end, n)
    voiced = _harmonic_stack(f0, amps, sample_rate)
    if profile.two_voice is not None:
        voiced += profile.two_voice_gain * _harmonic_stack(f0 * profile.two_voice, amps, sample_rate)
    for formant in profile.formants:
        voiced = apply_formant(voiced, formant, sample_rate)
    voiced *= _envelope(n, sample_rate)

    x = np.concatenate([np.zeros(lead), voiced])
    if profile.ambient_db is not None:
        level = math.sqrt(float(np.mean(voiced**2))) * 10 ** (profile.ambient_db / 20)
        x = x + level * rng.standard_normal(x.size)
    if channel is not None:
        x = sps.lfilter([1.0], channel, x)
    if profile.noise_floor_db is not None:
        x = x + np.max(np.abs(x)) * 10 ** (profile.noise_floor_db / 20) * rng.standard_normal(x.size)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (PEAK_LEVEL / peak)
    return Signal(samples=x, sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def _sweep(rng: np.random.Generator, spread: float, start_range: float, ratio_range: float) -> tuple[float, float]:
    f0_start = float(np.clip(1000.0 + spread * rng.uniform(-start_range, start_range), 85.0, 1950.0))
    f0_end = float(np.clip(f0_start * (0.7 + spread * rng.uniform(-ratio_range, ratio_range)), 85.0, 1950.0))
    return f0_start, f0_end


def _scaled_amps(rng: np.random.Generator, base: np.ndarray, spread: float, depth: float) -> list[float]:
    return np.maximum(base * (1.0 + spread * depth * rng.uniform(-1.0, 1.0, base.size)), 0.02).tolist()


def draw_profile(
    rng: np.random.Generator, individual_id: str, preset: str = "default", spread: float = 1.0
) -> IndividualProfile:
    """Draw one individual; ``spread`` scales every between-individual deviation from the shared base."""
    if preset == "default":
        f0_start, f0_end = _sweep(rng, spread, 200.0, 0.08)
        return IndividualProfile(
            individual_id=individual_id,
            f0_start=f0_start,
            f0_end=f0_end,
            harmonic_amps=_scaled_amps(rng, 0.7 ** np.arange(8), spread, 0.6),
            formants=[
                Formant(
                    center_hz=2500.0 * (1.0 + spread * 0.25 * rng.uniform(-1.0, 1.0)),
                    bandwidth_hz=400.0,
                    gain=3.0 * (1.0 + spread * 0.3 * rng.uniform(-1.0, 1.0)),
                ),
                Formant(center_hz=5000.0 * (1.0 + spread * 0.2 * rng.uniform(-1.0, 1.0)), bandwidth_hz=800.0, gain=2.0),
            ],
            duration_mean=MEDIAN_DURATION_S * (1.0 + spread * 0.15 * rng.uniform(-1.0, 1.0)),
            duration_sd=0.02,
            noise_floor_db=-45.0,
            f0_jitter=0.01,
            amp_jitter=0.05,
            lead_ms=15.0,
        )
    if preset == "source_identity":
        # stereotyped contour, rich source, all colouring left to the per-call channel
        f0_start, f0_end = _sweep(rng, spread, 250.0, 0.1)
        return IndividualProfile(
            individual_id=individual_id,
            f0_start=f0_start,
            f0_end=f0_end,
            harmonic_amps=_scaled_amps(rng, 0.8 ** np.arange(20), spread, 0.8),
            duration_mean=MEDIAN_DURATION_S,
            duration_sd=0.01,
            f0_jitter=0.001,
            amp_jitter=0.05,
            ambient_db=-15.0,
            channel_resonances=2,
            lead_ms=10.0,
        )
    if preset == "band_identity":
        f0 = 500.0
        base = 0.85 ** np.arange(12)
        k = np.arange(1, base.size + 1)
        in_band = (k * f0 >= IDENTITY_BAND_HZ[0]) & (k * f0 <= IDENTITY_BAND_HZ[1])
        amps = np.where(in_band, base * (1.0 + spread * 0.9 * rng.uniform(-1.0, 1.0, base.size)), base)
        return IndividualProfile(
            individual_id=individual_id,
            f0_start=f0,
            f0_end=f0,
            harmonic_amps=np.maximum(amps, 0.02).tolist(),
            duration_mean=MEDIAN_DURATION_S,
            duration_sd=0.01,
            noise_floor_db=-50.0,
            f0_jitter=0.005,
            amp_jitter=0.05,
            lead_ms=10.0,
        )
    raise ValueError(f"Unknown corpus preset: {preset!r}. Use one of {PRESETS}.")


def unbalanced_counts(n_individuals: int = 20, total: int = 1156, largest: int = 93, smallest: int = 3) -> list[int]:
    """Descending class sizes with an exact total, maximum and minimum (default: 93 down to 3, 1156 calls)."""
    if n_individuals < 2 or not smallest * n_individuals <= total <= largest * n_individuals:
        raise ValueError(f"Cannot split {total} calls over {n_individuals} individuals within [{smallest}, {largest}]")
    counts = np.round(np.linspace(largest, smallest, n_individuals)).astype(int).tolist()
    middle = list(range(1, n_individuals - 1)) or [0]
    i = 0
    while sum(counts) != total:
        if i > 100 * total:
            raise ValueError(f"Cannot balance {n_individuals} class sizes to {total} calls")
        idx = middle[i % len(middle)]
        delta = 1 if sum(counts) < total else -1
        if smallest < counts[idx] + delta < largest:
            counts[idx] += delta
        i += 1
    return counts


def call_seed(master_seed: int, individual_index: int, call_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, 1, individual_index, call_index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


def generate_corpus(
    n_individuals: int = 20,
    calls_each: int = 30,
    master_seed: int = 0,
    preset: str = "default",
    counts: Sequence[int] | None = None,
    spread: float = 1.0,
    sample_rate: int = 48000,
    workers: int = 1,
) -> SynthCorpus:
    """Draw ``n_individuals`` profiles and render their calls; ``counts`` overrides ``calls_each`` per individual."""
    if n_individuals < 2:
        raise ValueError(f"Need at least 2 individuals, got {n_individuals}")
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    sizes = list(counts) if counts is not None else [calls_each] * n_individuals
    if len(sizes) != n_individuals or min(sizes) < 1:
        raise ValueError(f"counts must list {n_individuals} positive class sizes, got {sizes!r}")

    profiles: dict[str, IndividualProfile] = {}
    for idx in range(n_individuals):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0, idx]))
        individual_id = f"ind{idx:02d}"
        profiles[individual_id] = draw_profile(rng, individual_id, preset=preset, spread=spread)

    jobs = [(individual_id, idx, c) for idx, individual_id in enumerate(profiles) for c in range(sizes[idx])]

    def render(job: tuple[str, int, int]) -> LabelledCall:
        individual_id, idx, c = job
        signal = generate_call(profiles[individual_id], call_seed(master_seed, idx, c), sample_rate)
        return LabelledCall(signal=align_onset(signal), individual_id=individual_id, call_id=f"{individual_id}-{c:03d}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        calls = list(pool.map(render, jobs))
    logger.info(
        "Generated %s corpus: %d calls from %d individuals (seed %d)", preset, len(calls), n_individuals, master_seed
    )
    return SynthCorpus(calls=calls, profiles=profiles, master_seed=master_seed)


def write_corpus(corpus: SynthCorpus, out_dir: Path, bits: int = 16) -> Path:
    """WAV per call, ``labels.csv`` (filename, individual_id) and ``profiles.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for call in corpus.calls:
        write_wav(out_dir / f"{call.call_id}.wav", call.signal, bits=bits)
    labels = pd.DataFrame(
        {
            "filename": [f"{c.call_id}.wav" for c in corpus.calls],
            "individual_id": [c.individual_id for c in corpus.calls],
        }
    )
    atomic_write_text(out_dir / "labels.csv", labels.to_csv(index=False))
    payload = {
        "master_seed": corpus.master_seed,
        "profiles": {pid: p.model_dump(mode="json") for pid, p in corpus.profiles.items()},
    }
    atomic_write_text(out_dir / "profiles.json", json.dumps(payload, indent=2))
    logger.info("Wrote %d calls to %s", len(corpus.calls), out_dir)
    return out_dir


def read_corpus(directory: Path) -> SynthCorpus:
    directory = Path(directory)
    calls = ingest_directory(directory, directory / "labels.csv")
    payload = json.loads((directory / "profiles.json").read_text())
    profiles = {pid: IndividualProfile.model_validate(p) for pid, p in payload["profiles"].items()}
    return SynthCorpus(calls=calls, profiles=profiles, master_seed=payload["master_seed"])
