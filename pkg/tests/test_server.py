"""Tests for the callkit MCP server."""

from __future__ import annotations

import json
from pathlib import Path
import threading

from fastmcp import Client
import pytest

from callkit.common import _paths
from callkit.common.models import GridRow
from callkit.dsp.spectra import log_magnitude, stft_magnitude
from callkit.experiments import server
from callkit.experiments.server import mcp
from callkit.experiments.synth_corpus import write_corpus
from callkit.learn.distances import pairwise_matrix, write_distance_csv


@pytest.fixture
async def client(tmp_path: Path, monkeypatch):
    monkeypatch.setattr(_paths, "CACHE_DIR", tmp_path / "cache")
    async with Client(mcp) as c:
        yield c


@pytest.fixture
def saved_distances(tmp_path: Path, small_corpus) -> tuple[Path, Path]:
    corpus_dir = write_corpus(small_corpus, tmp_path / "corpus")
    specs = [log_magnitude(stft_magnitude(c.signal, 512, 0.75)) for c in small_corpus.calls]
    dm = pairwise_matrix(specs, [c.call_id for c in small_corpus.calls], "manhattan")
    path = tmp_path / "d.csv"
    write_distance_csv(path, dm)
    return path, corpus_dir / "labels.csv"


def _data(result):
    if result.content:
        return json.loads(result.content[0].text)
    return result.data


async def test_lists_every_tool(client: Client):
    names = {tool.name for tool in await client.list_tools()}
    assert names == {"synthesize_corpus", "run_experiment_grid", "classify_distances", "embed_distances"}


class TestSynthesizeCorpus:
    async def test_should_write_a_corpus(self, client: Client, tmp_path: Path):
        out = tmp_path / "synth"
        result = await client.call_tool(
            "synthesize_corpus", {"out_dir": str(out), "individuals": 2, "calls_each": 2, "seed": 7}
        )
        data = _data(result)
        assert data["n_calls"] == 4
        assert data["individuals"] == ["ind00", "ind01"]
        assert (out / "labels.csv").exists()
        assert len(list(out.glob("*.wav"))) == 4

    async def test_should_reject_an_unknown_preset(self, client: Client, tmp_path: Path):
        result = await client.call_tool(
            "synthesize_corpus",
            {"out_dir": str(tmp_path / "x"), "preset": "forest", "individuals": 2, "calls_each": 1},
            raise_on_error=False,
        )
        assert result.is_error is True
        assert "[invalid_input]" in result.content[0].text
        assert "forest" in result.content[0].text


class TestRunExperimentGrid:
    async def test_should_return_rows_and_report(self, client: Client, tmp_path: Path):
        out = tmp_path / "results"
        result = await client.call_tool(
            "run_experiment_grid",
            {
                "out_dir": str(out),
                "individuals": 2,
                "calls": 4,
                "seed": 1,
                "representations": ["raw/stft"],
                "scales": ["log"],
                "metrics": ["manhattan"],
            },
        )
        data = _data(result)
        assert data["failed"] == 0
        assert len(data["rows"]) == 1
        row = data["rows"][0]
        assert (row["representation"], row["status"]) == ("raw/stft", "ok")
        assert row["chance_level"] == 0.5
        assert Path(data["report"]["csv"]).exists()
        assert (tmp_path / "cache").exists()

    async def test_should_reject_an_invalid_representation(self, client: Client):
        result = await client.call_tool(
            "run_experiment_grid",
            {"representations": ["raw/mfcc"], "individuals": 2, "calls": 2},
            raise_on_error=False,
        )
        assert result.is_error is True
        assert "[config_invalid]" in result.content[0].text

    async def test_grid_runs_in_a_worker_thread(self, client: Client, monkeypatch):
        threads = []

        def fake_run_grid(calls, grid, cache=None):
            threads.append(threading.current_thread())
            row = GridRow(representation="raw/stft", scale="log", metric="manhattan", accuracy=1.0, n_calls=len(calls))
            return [row]

        monkeypatch.setattr(server, "run_grid", fake_run_grid)
        result = await client.call_tool("run_experiment_grid", {"individuals": 2, "calls": 2})
        assert _data(result)["rows"][0]["n_calls"] == 4
        assert threads and threads[0] is not threading.main_thread()


class TestClassifyDistances:
    async def test_should_report_accuracy(self, client: Client, saved_distances):
        distances, labels = saved_distances
        result = await client.call_tool(
            "classify_distances", {"distances_csv": str(distances), "labels_csv": str(labels), "k": 1}
        )
        data = _data(result)
        assert data["n_calls"] == 15
        assert data["labels"] == ["ind00", "ind01", "ind02"]
        assert 0.0 <= data["accuracy"] <= 1.0
        assert data["metric"] == "manhattan"

    async def test_should_report_missing_files(self, client: Client, tmp_path: Path):
        result = await client.call_tool(
            "classify_distances",
            {"distances_csv": str(tmp_path / "none.csv"), "labels_csv": str(tmp_path / "labels.csv")},
            raise_on_error=False,
        )
        assert result.is_error is True
        assert "[invalid_input]" in result.content[0].text


class TestEmbedDistances:
    async def test_should_write_embedding(self, client: Client, saved_distances, tmp_path: Path):
        distances, labels = saved_distances
        result = await client.call_tool(
            "embed_distances",
            {
                "distances_csv": str(distances),
                "labels_csv": str(labels),
                "out_path": str(tmp_path / "tsne.csv"),
                "perplexity": 4.0,
            },
        )
        data = _data(result)
        assert Path(data["csv"]).exists()
        assert Path(data["png"]).exists()
        assert data["final_kl"] >= 0.0

    async def test_should_reject_a_large_perplexity(self, client: Client, saved_distances, tmp_path: Path):
        distances, labels = saved_distances
        result = await client.call_tool(
            "embed_distances",
            {"distances_csv": str(distances), "labels_csv": str(labels), "out_path": str(tmp_path / "t.csv")},
            raise_on_error=False,
        )
        assert result.is_error is True
        assert "[tsne_failed]" in result.content[0].text
