"""Plain-text ``key = value`` run configuration.

Keys are the fields of :class:`ExperimentGrid` and :class:`CorpusSpec` (dashes and underscores are
interchangeable). List fields take comma-separated values and ``lmnn_pool`` takes ``TxF``.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from collections.abc import Mapping
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ValidationError

from callkit.common.errors import ConfigError
from callkit.common.models import CorpusSpec, ExperimentGrid

LIST_FIELDS = frozenset(
    {"representations", "scales", "metrics", "lmnn_representations", "tsne_representations", "counts"}
)
GRID_KEYS = frozenset(ExperimentGrid.model_fields)
CORPUS_KEYS = frozenset(CorpusSpec.model_fields)


class RunConfig(BaseModel):
    grid: ExperimentGrid
    corpus: CorpusSpec


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def parse_config(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Line {number}: expected 'key = value', got {raw.strip()!r}")
        values[normalize_key(key)] = value.strip()
    return values


def read_config(path: Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"Cannot read config {str(path)!r}: {exc}") from exc
    return parse_config(text)


def _convert(key: str, value: str) -> Any:
    if key in LIST_FIELDS:
        return [item.strip() for item in value.split(",") if item.strip()]
    if key == "lmnn_pool":
        frames, sep, bands = value.lower().partition("x")
        if not sep:
            raise ConfigError(f"lmnn_pool must look like '48x64', got {value!r}")
        return (frames.strip(), bands.strip())
    if value == "" and key in {"out_dir", "cache_dir", "data_dir", "labels"}:
        return None
    return value


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    """Validate merged file/flag values; string values are converted, other values are taken as given."""
    grid: dict[str, Any] = {}
    corpus: dict[str, Any] = {}
    for raw_key, value in values.items():
        key = normalize_key(raw_key)
        if key not in GRID_KEYS and key not in CORPUS_KEYS:
            raise ConfigError(f"Unknown config key: {raw_key!r}")
        converted = _convert(key, value) if isinstance(value, str) else value
        (grid if key in GRID_KEYS else corpus)[key] = converted
    try:
        return RunConfig(grid=ExperimentGrid(**grid), corpus=CorpusSpec(**corpus))
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc
