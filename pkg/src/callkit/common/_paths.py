"""Shared path utilities for the callkit home and artifact cache directories."""

from __future__ import annotations

import os
from pathlib import Path

CALLKIT_HOME = Path(os.environ.get("CALLKIT_HOME", Path.home() / ".callkit"))
CACHE_DIR = CALLKIT_HOME / "cache"


def cache_dir(base_dir: Path | None = None) -> Path:
    """Return the artifact cache directory, optionally under a custom base for testing."""
    return (base_dir / "cache") if base_dir else CACHE_DIR


def default_workers() -> int:
    """Worker count from ``CALLKIT_WORKERS``, else the CPU count (at least 1)."""
    raw = os.environ.get("CALLKIT_WORKERS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)
