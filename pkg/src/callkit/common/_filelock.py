"""Per-directory locks for artifact cache writes."""

from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
import logging
from pathlib import Path

from filelock import FileLock, Timeout

logger = logging.getLogger(__name__)


@contextmanager
def directory_lock(directory: Path, timeout: float = 30.0) -> Iterator[bool]:
    """Hold ``<directory>/.lock``; yields False instead of raising when the lock times out."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(directory / ".lock"), timeout=timeout)
    try:
        lock.acquire()
    except Timeout:
        logger.warning("Timed out after %.0fs waiting for %s", timeout, lock.lock_file)
        yield False
        return
    try:
        yield True
    finally:
        lock.release()
