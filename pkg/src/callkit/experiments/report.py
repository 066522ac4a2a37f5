"""Result tables and static figures for grid runs, importance maps and embeddings."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from callkit.common._serialization import atomic_write_text  # noqa: E402
from callkit.common.errors import ReportError  # noqa: E402
from callkit.common.models import GridRow  # noqa: E402

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["representation", "scale", "metric", "accuracy", "chance_level", "n_calls", "status", "error"]


def results_frame(rows: Sequence[GridRow]) -> pd.DataFrame:
    """Every row field, wall time included, in grid order."""
    return pd.DataFrame([row.model_dump() for row in rows], columns=list(GridRow.model_fields))


def results_figure(rows: Sequence[GridRow]) -> Figure:
    """Grouped bars: one cluster per representation, one bar per metric/scale pair, chance as a dashed line."""
    frame = results_frame(rows)
    representations = list(dict.fromkeys(frame["representation"]))
    tags = list(dict.fromkeys(frame["metric"] + "/" + frame["scale"]))
    width = 0.8 / len(tags)
    x = np.arange(len(representations))

    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(representations) + 1.0), 4.0))
    for i, tag in enumerate(tags):
        chosen = frame[(frame["metric"] + "/" + frame["scale"]) == tag].set_index("representation")
        heights = [
            float(chosen.at[r, "accuracy"]) if r in chosen.index and pd.notna(chosen.at[r, "accuracy"]) else 0.0
            for r in representations
        ]
        present = [r in chosen.index for r in representations]
        ax.bar((x + (i - (len(tags) - 1) / 2) * width)[present], np.asarray(heights)[present], width, label=tag)

    chance = frame["chance_level"].dropna()
    if not chance.empty:
        ax.axhline(float(chance.max()), color="black", linestyle="--", linewidth=1.0, label="chance")
    ax.set_xticks(x, representations, rotation=20, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("LOO kNN accuracy")
    ax.legend(fontsize="small", ncols=2)
    fig.tight_layout()
    return fig


def emit_report(rows: Sequence[GridRow], out_dir: Path) -> dict[str, Path]:
    """Write ``results.csv`` (deterministic columns), ``results.json`` (all fields) and ``results.png``."""
    if not rows:
        raise ReportError("No grid results to report")
    out_dir = Path(out_dir)
    paths = {"csv": out_dir / "results.csv", "json": out_dir / "results.json", "png": out_dir / "results.png"}
    frame = results_frame(rows)
    try:
        atomic_write_text(paths["csv"], frame[CSV_COLUMNS].to_csv(index=False))
        atomic_write_text(paths["json"], json.dumps([row.model_dump(mode="json") for row in rows], indent=2))
        fig = results_figure(rows)
        try:
            fig.savefig(paths["png"], dpi=120)
        finally:
            plt.close(fig)
    except OSError as exc:
        raise ReportError(f"Cannot write report to {str(out_dir)!r}: {exc}") from exc
    logger.info("Wrote report for %d cells to %s", len(rows), out_dir)
    return paths


# ---------------------------------------------------------------------------
# Side-output figures
# ---------------------------------------------------------------------------


def plot_importance_map(
    ranked: np.ndarray,
    path: Path,
    edges_hz: np.ndarray | None = None,
    frame_seconds: float | None = None,
    title: str = "LMNN importance",
) -> Path:
    """Spectrogram-style image of a (frames × bands) map, low frequencies at the bottom."""
    n_frames, n_bands = ranked.shape
    extent = None
    if edges_hz is not None and frame_seconds is not None:
        extent = (0.0, n_frames * frame_seconds * 1000.0, float(edges_hz[0]) / 1000.0, float(edges_hz[-1]) / 1000.0)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    try:
        image = ax.imshow(ranked.T, origin="lower", aspect="auto", cmap="magma", extent=extent)
        ax.set_xlabel("time (ms)" if extent else "frame")
        ax.set_ylabel("frequency (kHz)" if extent else "band")
        ax.set_title(title)
        fig.colorbar(image, ax=ax)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    return path


def plot_embedding(frame: pd.DataFrame, path: Path, title: str = "t-SNE") -> Path:
    """Scatter of an embedding table (call_id, x, y, label), one colour per label."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    try:
        groups = frame.groupby("label", sort=True) if "label" in frame else [("calls", frame)]
        for label, group in groups:
            ax.scatter(group["x"], group["y"], s=12, label=str(label))
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        if "label" in frame and frame["label"].nunique() <= 20:
            ax.legend(fontsize="x-small", ncols=2, markerscale=0.8)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    return path
