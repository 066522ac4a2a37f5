"""Per-call pipeline from an onset-aligned signal to one of the seven representations.

All representations of one call share the STFT grid of its onset-trimmed source, so a
spectrogram of any representation is directly comparable to any other of the same name.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any

from callkit.common.models import (
    ExperimentGrid,
    F0Track,
    LabelledCall,
    Scale,
    Signal,
    Spectrogram,
    split_representation,
)
from callkit.dsp.adft import adft_spectrogram, estimate_f0_track, halve_f0, refine_f0, regrid
from callkit.dsp.lpc import fit_lpc, lpc_filter_spectrogram, residual
from callkit.dsp.signal_io import trim_to_onset
from callkit.dsp.spectra import corpus_reference, log_magnitude, stft_magnitude
from callkit.experiments.cache import ArtifactCache, content_key

logger = logging.getLogger(__name__)


def representation_params(name: str, grid: ExperimentGrid) -> dict[str, Any]:
    """The grid settings a representation depends on (the cache key ignores everything else)."""
    source, transform = split_representation(name)
    params: dict[str, Any] = {"name": name, "frame_size": grid.frame_size, "overlap": grid.overlap}
    if source != "raw":
        params["lpc_order"] = grid.lpc_order
    if transform != "stft":
        params.update(f0_min=grid.f0_min, f0_max=grid.f0_max)
    if transform == "adft_refined":
        params["refine_iters"] = grid.refine_iters
    return params


def signal_key(kind: str, signal: Signal, params: dict[str, Any]) -> str:
    return content_key(
        kind, {**params, "sample_rate": signal.sample_rate, "onset": signal.onset_index}, signal.samples
    )


def _f0_track(signal: Signal, grid: ExperimentGrid, refined: bool, cache: ArtifactCache | None) -> F0Track:
    def estimate() -> F0Track:
        return halve_f0(estimate_f0_track(signal, grid.f0_min, grid.f0_max))

    params: dict[str, Any] = {"f0_min": grid.f0_min, "f0_max": grid.f0_max, "halved": True}
    track = estimate() if cache is None else cache.f0_track(signal_key("f0", signal, params), estimate)
    if not refined:
        return track

    def refine() -> F0Track:
        return refine_f0(signal, track, max_iters=grid.refine_iters)

    params["refine_iters"] = grid.refine_iters
    return refine() if cache is None else cache.f0_track(signal_key("f0", signal, params), refine)


def compute_representation(
    signal: Signal, name: str, grid: ExperimentGrid, cache: ArtifactCache | None = None
) -> Spectrogram:
    """Magnitude spectrogram of ``signal`` under representation ``name``.

    LPC is fitted on the whole clip. The F0 track is estimated on the raw signal and halved so the
    harmonic comb also covers two-voice sidebands; the aDFT of the source (raw or residual) is
    regridded onto the onset-trimmed STFT grid of that same source.
    """
    source, transform = split_representation(name)
    if source == "lpc_filter":
        template = stft_magnitude(trim_to_onset(signal), grid.frame_size, grid.overlap)
        return lpc_filter_spectrogram(fit_lpc(signal, grid.lpc_order), template)

    analysed = signal if source == "raw" else residual(signal, fit_lpc(signal, grid.lpc_order))
    template = stft_magnitude(trim_to_onset(analysed), grid.frame_size, grid.overlap)
    if transform == "stft":
        return template
    track = _f0_track(signal, grid, transform == "adft_refined", cache)
    return regrid(adft_spectrogram(analysed, track), template, time_offset=signal.onset_index)


def corpus_representation(
    calls: Sequence[LabelledCall],
    name: str,
    grid: ExperimentGrid,
    cache: ArtifactCache | None = None,
    workers: int = 1,
) -> tuple[list[Spectrogram], list[str]]:
    """Spectrograms of every call (in input order) and their cache keys."""
    params = representation_params(name, grid)
    keys = [signal_key("spectrogram", call.signal, params) for call in calls]

    def one(index: int) -> Spectrogram:
        signal = calls[index].signal
        if cache is None:
            return compute_representation(signal, name, grid)
        return cache.spectrogram(keys[index], lambda: compute_representation(signal, name, grid, cache))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        specs = list(pool.map(one, range(len(calls))))
    logger.info("Computed %d %s spectrograms", len(specs), name)
    return specs, keys


def scale_spectrograms(specs: Sequence[Spectrogram], scale: Scale, grid: ExperimentGrid) -> list[Spectrogram]:
    if scale == "mag":
        return list(specs)
    reference = corpus_reference(specs) if grid.log_reference == "corpus" else None
    return [log_magnitude(spec, grid.floor_db, reference=reference) for spec in specs]
