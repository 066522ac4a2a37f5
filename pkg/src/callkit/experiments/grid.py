"""Factorial experiment runner: representation × scale × metric → leave-one-out kNN accuracy."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from callkit.common._serialization import atomic_write_bytes, atomic_write_text, pack_matrix
from callkit.common.errors import CallkitError, GridError
from callkit.common.models import (
    CorpusSpec,
    DistanceMatrix,
    Embedding,
    ExperimentGrid,
    GridRow,
    LabelledCall,
    LinearMetric,
    Metric,
    Scale,
    Spectrogram,
    SynthCorpus,
)
from callkit.dsp.signal_io import ingest_directory
from callkit.experiments.cache import ArtifactCache, content_key
from callkit.experiments.report import plot_embedding, plot_importance_map
from callkit.experiments.representations import corpus_representation, scale_spectrograms
from callkit.experiments.synth_corpus import generate_corpus
from callkit.learn.distances import pairwise_matrix, write_distance_csv
from callkit.learn.knn_classify import loo_accuracy
from callkit.learn.lmnn import band_edges, build_features, importance_map, lmnn_fit, rank_transform
from callkit.learn.tsne_embed import embedding_frame, tsne

logger = logging.getLogger(__name__)


def slug(representation: str, scale: str | None = None, metric: str | None = None) -> str:
    """File-name stem for a grid cell, e.g. ``lpc_residual-stft_log_manhattan``."""
    return "_".join(part for part in (representation.replace("/", "-"), scale, metric) if part)


def load_corpus(spec: CorpusSpec, workers: int = 1) -> list[LabelledCall]:
    """Ingest ``spec.data_dir`` when given, otherwise synthesize a corpus from the preset."""
    if spec.data_dir is not None:
        labels = spec.labels or spec.data_dir / "labels.csv"
        return ingest_directory(spec.data_dir, labels)
    corpus = generate_corpus(
        n_individuals=spec.individuals,
        calls_each=spec.calls,
        master_seed=spec.seed,
        preset=spec.preset,
        counts=spec.counts,
        spread=spec.spread,
        sample_rate=spec.sample_rate,
        workers=workers,
    )
    return list(corpus.calls)


# ---------------------------------------------------------------------------
# LMNN and t-SNE outputs
# ---------------------------------------------------------------------------


def write_lmnn_outputs(
    specs: Sequence[Spectrogram],
    labels: Sequence[str],
    call_ids: Sequence[str],
    grid: ExperimentGrid,
    stem: Path,
    title: str = "",
) -> LinearMetric:
    """Fit LMNN on pooled spectrogram pixels and write ``<stem>_importance.csv``, ``_rank.csv``,
    ``_rank.png`` and ``_projection.bin`` (header: out_dim, dim, T, F)."""
    T, F = grid.lmnn_pool
    features = build_features(specs, labels, T, F, call_ids=call_ids)
    metric = lmnn_fit(features, k=grid.k, mu=grid.lmnn_mu, max_iters=grid.lmnn_iters)
    importance = importance_map(metric)
    ranked = rank_transform(importance)

    edges_hz = band_edges(specs[0].n_bins, F) * specs[0].bin_hz
    columns = [f"{lo:.1f}-{hi:.1f}" for lo, hi in zip(edges_hz[:-1], edges_hz[1:], strict=True)]
    for suffix, values in (("importance", importance), ("rank", ranked)):
        frame = pd.DataFrame(values, columns=columns)
        frame.index.name = "frame"
        atomic_write_text(stem.with_name(f"{stem.name}_{suffix}.csv"), frame.to_csv())
    projection = metric.projection
    atomic_write_bytes(
        stem.with_name(f"{stem.name}_projection.bin"), pack_matrix(projection, (*projection.shape, T, F))
    )
    plot_importance_map(
        ranked,
        stem.with_name(f"{stem.name}_rank.png"),
        edges_hz=edges_hz,
        frame_seconds=specs[0].frame_hop / specs[0].sample_rate,
        title=f"LMNN importance (rank) {title}".strip(),
    )
    return metric


def write_tsne_outputs(
    dm: DistanceMatrix, labels: Sequence[str] | None, stem: Path, perplexity: float = 30.0, seed: int = 1
) -> Embedding:
    """Embed ``dm`` and write ``<stem>.csv`` (call_id, x, y, label) and ``<stem>.png``."""
    embedding = tsne(dm, perplexity=perplexity, seed=seed)
    frame = embedding_frame(embedding, labels)
    atomic_write_text(stem.with_suffix(".csv"), frame.to_csv(index=False))
    plot_embedding(frame, stem.with_suffix(".png"), title=f"t-SNE of {dm.representation} ({dm.metric_tag})")
    return embedding


class _GridRun:
    """State shared by the cells of one grid run."""

    def __init__(self, calls: Sequence[LabelledCall], grid: ExperimentGrid, cache: ArtifactCache) -> None:
        self.calls = list(calls)
        self.grid = grid
        self.cache = cache
        self.labels = [call.individual_id for call in self.calls]
        self.ids = [call.call_id for call in self.calls]
        self.keys: dict[str, list[str]] = {}
        self.failures: dict[str, str] = {}
        self.scaled: dict[tuple[str, Scale], list[Spectrogram]] = {}
        self.matrices: dict[tuple[str, Scale, Metric], DistanceMatrix] = {}

    def prepare(self, name: str) -> None:
        try:
            specs, keys = corpus_representation(self.calls, name, self.grid, self.cache, self.grid.workers)
            scaled = {scale: scale_spectrograms(specs, scale, self.grid) for scale in ("mag", "log")}
        except Exception as exc:
            self.failures[name] = _describe(exc)
            _log_failure(exc, "Representation %s failed: %s", name)
            return
        self.keys[name] = keys
        for scale, specs_at_scale in scaled.items():
            self.scaled[name, scale] = specs_at_scale

    def distance_matrix(self, name: str, scale: Scale, metric: Metric, workers: int) -> DistanceMatrix:
        if name in self.failures:
            raise GridError(f"Representation {name!r} unavailable: {self.failures[name]}")
        cell = (name, scale, metric)
        if cell not in self.matrices:
            grid = self.grid
            params = {
                "scale": scale,
                "metric": metric,
                "max_shift_ms": grid.max_shift_ms,
                "floor_db": grid.floor_db,
                "log_reference": grid.log_reference,
                "ids": self.ids,
            }
            key = content_key("distances", params, np.array(self.keys[name], dtype=np.str_))
            self.matrices[cell] = self.cache.distances(
                key,
                lambda: pairwise_matrix(
                    self.scaled[name, scale], self.ids, metric, grid.max_shift_ms, name, workers=workers
                ),
            )
        return self.matrices[cell]

    def run_cell(self, name: str, scale: Scale, metric: Metric, workers: int) -> GridRow:
        start = time.perf_counter()
        error = self.failures.get(name)
        if error is None:
            try:
                dm = self.distance_matrix(name, scale, metric, workers)
                report = loo_accuracy(dm, self.labels, self.grid.k)
            except Exception as exc:
                _log_failure(exc, "Cell %s failed: %s", slug(name, scale, metric))
                error = _describe(exc)
            else:
                return GridRow(
                    representation=name,
                    scale=scale,
                    metric=metric,
                    accuracy=report.accuracy,
                    chance_level=report.chance_level,
                    n_calls=report.n_calls,
                    wall_time_s=time.perf_counter() - start,
                )
        # a failed representation keeps its original error code in every one of its cells
        return GridRow(
            representation=name,
            scale=scale,
            metric=metric,
            n_calls=len(self.calls),
            wall_time_s=time.perf_counter() - start,
            status="error",
            error=error,
        )

    # ---------------------------------------------------------------------------
    # Side outputs
    # ---------------------------------------------------------------------------

    def _preferred(self, choices: Sequence[str], wanted: str) -> str:
        return wanted if wanted in choices else choices[0]

    def write_distances(self, out_dir: Path) -> None:
        for (name, scale, metric), dm in self.matrices.items():
            write_distance_csv(out_dir / "distances" / f"{slug(name, scale, metric)}.csv", dm)

    def write_lmnn(self, name: str, out_dir: Path) -> None:
        scale: Scale = self._preferred(self.grid.scales, "log")  # type: ignore[assignment]
        if name in self.failures:
            raise GridError(f"Representation {name!r} unavailable: {self.failures[name]}")
        stem = out_dir / "lmnn" / slug(name, scale)
        write_lmnn_outputs(self.scaled[name, scale], self.labels, self.ids, self.grid, stem, title=name)

    def write_tsne(self, name: str, out_dir: Path) -> None:
        scale: Scale = self._preferred(self.grid.scales, "log")  # type: ignore[assignment]
        metric: Metric = self._preferred(self.grid.metrics, "manhattan")  # type: ignore[assignment]
        dm = self.distance_matrix(name, scale, metric, self.grid.workers)
        stem = out_dir / "tsne" / slug(name, scale, metric)
        write_tsne_outputs(dm, self.labels, stem, perplexity=self.grid.tsne_perplexity, seed=self.grid.tsne_seed)


def _describe(exc: Exception) -> str:
    code = getattr(exc, "code", type(exc).__name__)
    return f"[{code}] {exc}"


def _log_failure(exc: Exception, message: str, *args: object) -> None:
    if isinstance(exc, CallkitError):
        logger.warning(message, *args, exc)
    else:
        logger.exception(message, *args, exc)


def _unique(names: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(names))


def run_grid(
    corpus: SynthCorpus | Sequence[LabelledCall],
    grid: ExperimentGrid,
    cache: ArtifactCache | None = None,
) -> list[GridRow]:
    """Run every (representation, scale, metric) cell and return one row per cell in grid order.

    Spectrograms are computed once per representation and shared by all of its cells; they and the
    distance matrices go through the artifact cache. A failing cell is reported in its row and the
    run continues. With ``grid.out_dir`` set, distance CSVs and any LMNN/t-SNE side outputs are written.
    """
    calls = list(corpus.calls) if isinstance(corpus, SynthCorpus) else list(corpus)
    if len(calls) < 2:
        raise GridError(f"Need at least 2 calls to run a grid, got {len(calls)}")
    ids = [call.call_id for call in calls]
    if len(set(ids)) != len(ids):
        raise GridError("Call ids must be unique")
    if cache is None:
        cache = ArtifactCache(grid.cache_dir, enabled=grid.use_cache)

    run = _GridRun(calls, grid, cache)
    for name in _unique(grid.representations + grid.lmnn_representations + grid.tsne_representations):
        run.prepare(name)

    cells = grid.cells()
    cell_workers = min(grid.workers, len(cells))
    row_workers = max(1, grid.workers // cell_workers)
    logger.info("Running %d cells on %d calls with %d workers", len(cells), len(calls), grid.workers)
    with ThreadPoolExecutor(max_workers=cell_workers) as pool:
        rows = list(pool.map(lambda cell: run.run_cell(*cell, workers=row_workers), cells))

    if grid.out_dir is not None:
        run.write_distances(grid.out_dir)
        for kind, names, writer in (
            ("LMNN", grid.lmnn_representations, run.write_lmnn),
            ("t-SNE", grid.tsne_representations, run.write_tsne),
        ):
            for name in _unique(names):
                try:
                    writer(name, grid.out_dir)
                except Exception as exc:
                    _log_failure(exc, f"{kind} output for %s failed: %s", name)

    failed = sum(row.status == "error" for row in rows)
    logger.info(
        "Grid finished: %d ok, %d failed (cache hits %d, misses %d)",
        len(rows) - failed,
        failed,
        cache.hits,
        cache.misses,
    )
    return rows
