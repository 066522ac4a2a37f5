"""MCP server exposing corpus synthesis, the experiment grid, kNN classification and t-SNE.

Paths passed to the tools are read and written on the server host. Every tool error is
reported as a ``ToolError`` carrying the underlying error code.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any

from fastmcp import Context, FastMCP
from fastmcp.exceptions import ToolError
from fastmcp.server.lifespan import lifespan

from callkit.common.errors import CallkitError
from callkit.common.models import GridRow
from callkit.dsp.signal_io import labels_for_calls
from callkit.experiments.cache import ArtifactCache
from callkit.experiments.config import build_run_config
from callkit.experiments.grid import load_corpus, run_grid, write_tsne_outputs
from callkit.experiments.report import emit_report
from callkit.experiments.synth_corpus import generate_corpus, write_corpus
from callkit.learn.distances import read_distance_csv
from callkit.learn.knn_classify import loo_accuracy

logger = logging.getLogger(__name__)


@lifespan
async def app_lifespan(server):
    cache = ArtifactCache.default()
    logger.info("Artifact cache at %s", cache.root)
    try:
        yield {"cache": cache}
    finally:
        logger.info("Cache hits %d, misses %d this session", cache.hits, cache.misses)


mcp = FastMCP(
    name="callkit",
    instructions=(
        "Tools for identifying individual birds from their calls. "
        "Use synthesize_corpus to create a labelled test corpus, run_experiment_grid to compare "
        "signal representations by leave-one-out kNN accuracy, classify_distances to score a saved "
        "distance matrix and embed_distances for a 2-D t-SNE view of one."
    ),
    lifespan=app_lifespan,
)


def _tool_error(exc: Exception) -> ToolError:
    code = exc.code if isinstance(exc, CallkitError) else "invalid_input"
    return ToolError(f"[{code}] {exc}")


@mcp.tool
def synthesize_corpus(
    out_dir: str,
    preset: str = "default",
    individuals: int = 20,
    calls_each: int = 30,
    seed: int = 0,
    spread: float = 1.0,
    bits: int = 16,
) -> dict:
    """Generate a seeded synthetic corpus and write WAVs, labels.csv and profiles.json to out_dir.

    Args:
        preset: "default", "source_identity" (identity in the source, random channel per call)
            or "band_identity" (identity only in 1-3 kHz harmonics).
        bits: PCM bit depth of the WAV files, 16 or 24.
    """
    try:
        corpus = generate_corpus(individuals, calls_each, master_seed=seed, preset=preset, spread=spread)
        path = write_corpus(corpus, Path(out_dir), bits=bits)
    except (ValueError, OSError) as e:
        raise _tool_error(e)
    return {"path": str(path), "n_calls": len(corpus.calls), "individuals": sorted(corpus.profiles)}


def _grid_job(values: dict[str, Any], cache: ArtifactCache) -> tuple[list[GridRow], dict[str, Path]]:
    config = build_run_config(values)
    rows = run_grid(load_corpus(config.corpus, config.grid.workers), config.grid, cache=cache)
    report = emit_report(rows, config.grid.out_dir) if config.grid.out_dir is not None else {}
    return rows, report


@mcp.tool
async def run_experiment_grid(
    ctx: Context,
    out_dir: str | None = None,
    data_dir: str | None = None,
    preset: str = "default",
    individuals: int = 20,
    calls: int = 30,
    seed: int = 0,
    representations: list[str] | None = None,
    scales: list[str] | None = None,
    metrics: list[str] | None = None,
    k: int = 3,
    max_shift_ms: float = 20.0,
) -> dict:
    """Run the representation × scale × metric grid and return one row per cell.

    Calls come from data_dir (with its labels.csv) when given, otherwise from a synthetic preset.
    With out_dir set, results.csv, results.json and results.png are written there.
    """
    values: dict[str, Any] = {
        "out_dir": out_dir,
        "data_dir": data_dir,
        "preset": preset,
        "individuals": individuals,
        "calls": calls,
        "seed": seed,
        "k": k,
        "max_shift_ms": max_shift_ms,
    }
    for key, chosen in (("representations", representations), ("scales", scales), ("metrics", metrics)):
        if chosen is not None:
            values[key] = chosen
    cache: ArtifactCache = ctx.lifespan_context["cache"]
    try:
        rows, report = await asyncio.to_thread(_grid_job, values, cache)
    except (ValueError, OSError) as e:
        raise _tool_error(e)
    return {
        "rows": [row.model_dump(mode="json") for row in rows],
        "failed": sum(row.status == "error" for row in rows),
        "report": {kind: str(path) for kind, path in report.items()},
    }


@mcp.tool
def classify_distances(distances_csv: str, labels_csv: str, k: int = 3) -> dict:
    """Leave-one-out kNN accuracy, per-individual recall and confusion for a saved distance CSV.

    Call ids are matched to labels by file stem (``ind03-007.wav`` labels call ``ind03-007``).
    """
    try:
        dm = read_distance_csv(Path(distances_csv))
        report = loo_accuracy(dm, labels_for_calls(dm.call_ids, Path(labels_csv)), k)
    except (ValueError, OSError) as e:
        raise _tool_error(e)
    return report.model_dump(mode="json")


@mcp.tool
def embed_distances(
    distances_csv: str, labels_csv: str, out_path: str, perplexity: float = 30.0, seed: int = 1
) -> dict:
    """2-D t-SNE of a saved distance CSV; writes the embedding CSV and a PNG scatter next to out_path."""
    try:
        dm = read_distance_csv(Path(distances_csv))
        labels = labels_for_calls(dm.call_ids, Path(labels_csv))
        stem = Path(out_path).with_suffix("")
        embedding = write_tsne_outputs(dm, labels, stem, perplexity=perplexity, seed=seed)
    except (ValueError, OSError) as e:
        raise _tool_error(e)
    return {
        "csv": str(stem.with_suffix(".csv")),
        "png": str(stem.with_suffix(".png")),
        "final_kl": embedding.kl_history[-1] if embedding.kl_history else None,
    }


def main():
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    mcp.run()


if __name__ == "__main__":
    main()
