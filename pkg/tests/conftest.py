from __future__ import annotations

from pathlib import Path

import pytest

from callkit.common.models import ExperimentGrid, SynthCorpus
from callkit.experiments.cache import ArtifactCache
from callkit.experiments.synth_corpus import generate_corpus
from tests.helpers import TEST_RATE


@pytest.fixture
def tmp_cache_dir(tmp_path: Path) -> Path:
    cache_dir = tmp_path / "cache"
    cache_dir.mkdir()
    return cache_dir


@pytest.fixture
def cache(tmp_cache_dir: Path) -> ArtifactCache:
    return ArtifactCache(tmp_cache_dir)


@pytest.fixture(scope="session")
def small_corpus() -> SynthCorpus:
    """3 individuals × 5 calls at 16 kHz."""
    return generate_corpus(n_individuals=3, calls_each=5, master_seed=3, sample_rate=TEST_RATE)


@pytest.fixture
def small_grid(tmp_cache_dir: Path) -> ExperimentGrid:
    return ExperimentGrid(
        representations=["raw/stft"],
        scales=["log"],
        metrics=["manhattan"],
        frame_size=512,
        cache_dir=tmp_cache_dir,
        workers=2,
    )
