"""``callkit`` command line: corpus tools, single-stage pipeline commands and the experiment grid."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from callkit.common._serialization import (
    atomic_write_text,
    model_to_json,
    write_spectrogram_binary,
    write_spectrogram_csv,
)
from callkit.common.errors import CallkitError, ConfigError
from callkit.common.models import REPRESENTATIONS, ExperimentGrid, LabelledCall
from callkit.dsp.adft import adft_spectrogram, estimate_f0_track, halve_f0, harmonic_set_frame, refine_f0, regrid
from callkit.dsp.lpc import fit_lpc, is_stable, lpc_spectrum, residual, spectral_flatness
from callkit.dsp.signal_io import align_onset, ingest_directory, labels_for_calls, load_wav, trim_to_onset, write_wav
from callkit.dsp.spectra import log_magnitude, stft_magnitude
from callkit.experiments.cache import ArtifactCache
from callkit.experiments.config import build_run_config, normalize_key, read_config
from callkit.experiments.grid import load_corpus, run_grid, write_lmnn_outputs, write_tsne_outputs
from callkit.experiments.report import CSV_COLUMNS, emit_report, results_frame
from callkit.experiments.representations import corpus_representation, scale_spectrograms
from callkit.experiments.synth_corpus import PRESETS, generate_corpus, write_corpus
from callkit.learn.distances import pairwise_matrix, read_distance_csv, write_distance_binary, write_distance_csv
from callkit.learn.knn_classify import format_report, loo_accuracy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CELLS_FAILED = 1
EXIT_INVALID = 2


# ---------------------------------------------------------------------------
# Shared arguments
# ---------------------------------------------------------------------------


def _add_corpus_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("corpus (a labelled WAV directory, or a synthetic preset)")
    group.add_argument("--data-dir", help="directory of WAV files")
    group.add_argument("--labels", help="labels CSV (filename, individual_id); default <data-dir>/labels.csv")
    group.add_argument("--preset", choices=PRESETS, help="synthetic corpus preset")
    group.add_argument("--individuals", help="synthetic individuals")
    group.add_argument("--calls", help="synthetic calls per individual")
    group.add_argument("--seed", help="synthetic master seed")


def _add_pipeline_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline")
    group.add_argument("--frame-size", help="STFT frame size in samples (default 1024)")
    group.add_argument("--overlap", help="STFT frame overlap in [0, 1) (default 0.75)")
    group.add_argument("--lpc-order", help="LPC order (default 10)")
    group.add_argument("--f0-min", help="lowest F0 searched in Hz (default 80)")
    group.add_argument("--f0-max", help="highest F0 searched in Hz (default 2000)")
    group.add_argument("--refine-iters", help="aDFT refinement iterations (default 8)")
    group.add_argument("--floor-db", help="log-magnitude floor in dB (default -80)")
    group.add_argument("--max-shift-ms", help="alignment search radius in ms (default 20)")
    group.add_argument("-k", "--k", dest="k", help="neighbours (default 3)")
    group.add_argument("--workers", help="worker count (default CALLKIT_WORKERS or the CPU count)")
    group.add_argument("--cache-dir", help="artifact cache directory")
    group.add_argument("--no-cache", action="store_true", help="recompute every artifact")


_PIPELINE_KEYS = (
    "frame_size",
    "overlap",
    "lpc_order",
    "f0_min",
    "f0_max",
    "refine_iters",
    "floor_db",
    "max_shift_ms",
    "k",
    "workers",
    "cache_dir",
)
_CORPUS_KEYS = ("data_dir", "labels", "preset", "individuals", "calls", "seed")


def _flag_values(args: argparse.Namespace, keys: Sequence[str]) -> dict[str, Any]:
    values = {key: getattr(args, key) for key in keys if getattr(args, key, None) is not None}
    if getattr(args, "no_cache", False):
        values["use_cache"] = "false"
    return values


def _cache(grid: ExperimentGrid) -> ArtifactCache:
    return ArtifactCache(grid.cache_dir, enabled=grid.use_cache)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    directory = Path(args.directory)
    calls = ingest_directory(directory, Path(args.labels) if args.labels else directory / "labels.csv")
    table = pd.DataFrame(
        {
            "call_id": [c.call_id for c in calls],
            "individual_id": [c.individual_id for c in calls],
            "duration_s": [c.signal.duration for c in calls],
            "onset_ms": [1000.0 * c.signal.onset_index / c.signal.sample_rate for c in calls],
        }
    )
    print(f"{len(calls)} calls, {table['individual_id'].nunique()} individuals, {calls[0].signal.sample_rate} Hz")
    print(table.groupby("individual_id").size().rename("calls").to_string())
    if args.out:
        atomic_write_text(Path(args.out), table.to_csv(index=False))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    counts = [int(c) for c in args.counts.split(",")] if args.counts else None
    corpus = generate_corpus(
        n_individuals=args.individuals,
        calls_each=args.calls,
        master_seed=args.seed,
        preset=args.preset,
        counts=counts,
        spread=args.spread,
        sample_rate=args.sample_rate,
        workers=args.workers,
    )
    out = write_corpus(corpus, Path(args.out), bits=args.bits)
    print(f"Wrote {len(corpus.calls)} calls from {len(corpus.profiles)} individuals to {out}")
    return EXIT_OK


def cmd_lpc(args: argparse.Namespace) -> int:
    if args.emit and not args.out:
        raise ConfigError(f"--emit {args.emit} needs --out")
    signal = load_wav(Path(args.wav))
    model = fit_lpc(signal, args.order)
    excitation = residual(signal, model)
    print(f"order {model.order}, gain {model.gain:.6g}, stable {is_stable(model)}")
    print("coefficients: " + " ".join(f"{a:.6f}" for a in model.coefficients))
    print(f"spectral flatness: input {spectral_flatness(signal):.4f}, residual {spectral_flatness(excitation):.4f}")
    residual_out = args.residual_out or (args.out if args.emit == "residual" else None)
    if residual_out:
        write_wav(Path(residual_out), excitation, bits=24)
    if args.emit == "filter":
        table = pd.DataFrame(
            {
                "freq_hz": np.linspace(0.0, signal.sample_rate / 2, args.n_bins),
                "magnitude": lpc_spectrum(model, args.n_bins),
            }
        )
        atomic_write_text(Path(args.out), table.to_csv(index=False))
    return EXIT_OK


def cmd_adft(args: argparse.Namespace) -> int:
    signal = align_onset(load_wav(Path(args.wav)))
    track = halve_f0(estimate_f0_track(signal, args.f0_min, args.f0_max))
    if args.refine and args.refine_iters:
        track = refine_f0(signal, track, max_iters=args.refine_iters)
    hspec = adft_spectrogram(signal, track)
    print(
        f"{hspec.n_frames} analysis frames, median F0 {2.0 * float(np.median(hspec.f0)):.1f} Hz, "
        f"{int(hspec.n_harmonics.max(initial=0))} harmonics at most"
    )
    if args.out:
        atomic_write_text(Path(args.out), harmonic_set_frame(hspec).to_csv(index=False))
    if args.spectrogram_out:
        template = stft_magnitude(trim_to_onset(signal), args.frame_size, args.overlap)
        write_spectrogram_binary(Path(args.spectrogram_out), regrid(hspec, template, time_offset=signal.onset_index))
    return EXIT_OK


def _pipeline(args: argparse.Namespace) -> tuple[ExperimentGrid, list[LabelledCall]]:
    values = _flag_values(args, _PIPELINE_KEYS + _CORPUS_KEYS)
    values["representations"] = args.representation
    config = build_run_config(values)
    return config.grid, load_corpus(config.corpus, config.grid.workers)


def cmd_distances(args: argparse.Namespace) -> int:
    grid, calls = _pipeline(args)
    specs, _ = corpus_representation(calls, args.representation, grid, _cache(grid), grid.workers)
    dm = pairwise_matrix(
        scale_spectrograms(specs, args.scale, grid),
        [c.call_id for c in calls],
        args.metric,
        grid.max_shift_ms,
        args.representation,
        workers=grid.workers,
    )
    write_distance_csv(Path(args.out), dm)
    if args.binary:
        write_distance_binary(Path(args.binary), dm)
    print(f"Wrote {dm.n}x{dm.n} {dm.metric_tag} distances for {dm.representation} to {args.out}")
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    labels_csv = args.labels or args.labels_file
    if not labels_csv:
        raise ConfigError("classify needs a labels CSV")
    dm = read_distance_csv(Path(args.distances))
    report = loo_accuracy(dm, labels_for_calls(dm.call_ids, Path(labels_csv)), args.k)
    print(format_report(report))
    if args.json:
        atomic_write_text(Path(args.json), model_to_json(report, indent=2))
    return EXIT_OK


def cmd_lmnn(args: argparse.Namespace) -> int:
    values = _flag_values(args, _PIPELINE_KEYS + _CORPUS_KEYS)
    values.update(representations=args.representation, lmnn_iters=args.iters, lmnn_mu=args.mu, lmnn_pool=args.pool)
    config = build_run_config(values)
    grid, calls = config.grid, load_corpus(config.corpus, config.grid.workers)
    specs, _ = corpus_representation(calls, args.representation, grid, _cache(grid), grid.workers)
    stem = Path(args.out) / args.representation.replace("/", "-")
    metric = write_lmnn_outputs(
        scale_spectrograms(specs, args.scale, grid),
        [c.individual_id for c in calls],
        [c.call_id for c in calls],
        grid,
        stem,
        title=args.representation,
    )
    print(f"LMNN loss {metric.loss_history[0]:.4g} -> {metric.loss_history[-1]:.4g}; outputs in {args.out}")
    return EXIT_OK


def cmd_tsne(args: argparse.Namespace) -> int:
    distances = Path(args.distances)
    dm = read_distance_csv(distances)
    labels = labels_for_calls(dm.call_ids, Path(args.labels)) if args.labels else None
    out = Path(args.out) if args.out else distances.with_name(f"{distances.stem}_tsne.csv")
    embedding = write_tsne_outputs(dm, labels, out.with_suffix(""), perplexity=args.perplexity, seed=args.seed)
    print(f"Embedded {dm.n} calls (final KL {embedding.kl_history[-1]:.4f}) to {out.with_suffix('.csv')}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    values: dict[str, Any] = read_config(Path(args.config)) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[normalize_key(key)] = value.strip()
    values.update(
        _flag_values(args, (*_PIPELINE_KEYS, *_CORPUS_KEYS, "representations", "scales", "metrics", "out_dir"))
    )
    config = build_run_config(values)
    calls = load_corpus(config.corpus, config.grid.workers)
    rows = run_grid(calls, config.grid)
    print(results_frame(rows)[CSV_COLUMNS].to_string(index=False))
    if config.grid.out_dir is not None:
        paths = emit_report(rows, config.grid.out_dir)
        print(f"Results written to {paths['csv']}")
    failed = [row for row in rows if row.status == "error"]
    return EXIT_CELLS_FAILED if failed else EXIT_OK


def cmd_spectrogram(args: argparse.Namespace) -> int:
    if not (args.csv or args.binary):
        raise ConfigError("Nothing to write: pass --csv and/or --binary")
    signal = load_wav(Path(args.wav))
    if args.trim:
        signal = trim_to_onset(align_onset(signal))
    spec = stft_magnitude(signal, args.frame_size, args.overlap)
    if args.scale == "log":
        spec = log_magnitude(spec, args.floor_db)
    if args.csv:
        write_spectrogram_csv(Path(args.csv), spec)
    if args.binary:
        write_spectrogram_binary(Path(args.binary), spec)
    print(f"{spec.n_frames} frames x {spec.n_bins} bins, hop {spec.frame_hop} samples")
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    signal = load_wav(Path(args.wav))
    if args.trim:
        signal = trim_to_onset(align_onset(signal))
    write_wav(Path(args.out), signal, bits=args.bits)
    print(f"Wrote {signal.n_samples} samples as {args.bits}-bit PCM to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="callkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and summarize a labelled WAV directory")
    p.add_argument("directory")
    p.add_argument("--labels")
    p.add_argument("--out", help="write the per-call table as CSV")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus (WAVs, labels.csv, profiles.json)")
    p.add_argument("out")
    p.add_argument("--preset", choices=PRESETS, default="default")
    p.add_argument("--individuals", type=int, default=20)
    p.add_argument("--calls", type=int, default=30)
    p.add_argument("--counts", help="comma-separated calls per individual (overrides --calls)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--sample-rate", type=int, default=48000)
    p.add_argument("--bits", type=int, choices=(16, 24), default=16)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("lpc", help="fit LPC to one WAV and report whitening")
    p.add_argument("wav")
    p.add_argument("--order", type=int, default=10)
    p.add_argument("--emit", choices=("residual", "filter"), help="write the residual WAV or the filter spectrum CSV")
    p.add_argument("--out", help="destination for --emit")
    p.add_argument("--n-bins", type=int, default=513, help="filter spectrum bins over [0, Nyquist]")
    p.add_argument("--residual-out", help="write the residual as 24-bit WAV")
    p.set_defaults(handler=cmd_lpc)

    p = sub.add_parser("adft", help="adaptive harmonic analysis of one WAV")
    p.add_argument("wav")
    p.add_argument("--f0-min", "--fmin", dest="f0_min", type=float, default=80.0)
    p.add_argument("--f0-max", "--fmax", dest="f0_max", type=float, default=2000.0)
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=True, help="refine the F0 track")
    p.add_argument("--refine-iters", type=int, default=8, help="refinement iterations; 0 disables refinement")
    p.add_argument("--frame-size", type=int, default=1024)
    p.add_argument("--overlap", type=float, default=0.75)
    p.add_argument("--out", help="harmonic set CSV (t, k, freq_hz, magnitude)")
    p.add_argument("--spectrogram-out", help="regridded spectrogram in binary form")
    p.set_defaults(handler=cmd_adft)

    p = sub.add_parser("distances", help="pairwise distance matrix for one representation")
    p.add_argument("--representation", choices=REPRESENTATIONS, default="raw/stft")
    p.add_argument("--scale", choices=("mag", "log"), default="log")
    p.add_argument("--metric", choices=("euclidean", "manhattan"), default="manhattan")
    p.add_argument("--out", required=True, help="distance CSV")
    p.add_argument("--binary", help="also write the binary matrix")
    _add_corpus_args(p)
    _add_pipeline_args(p)
    p.set_defaults(handler=cmd_distances)

    p = sub.add_parser("classify", help="leave-one-out kNN over a distance CSV")
    p.add_argument("distances")
    p.add_argument("labels_file", nargs="?", metavar="labels", help="labels CSV (or --labels)")
    p.add_argument("--labels")
    p.add_argument("-k", "--k", dest="k", type=int, default=3)
    p.add_argument("--json", help="write the report as JSON")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("lmnn", help="learn an LMNN metric and write importance maps")
    p.add_argument("--representation", choices=REPRESENTATIONS, default="raw/stft")
    p.add_argument("--scale", choices=("mag", "log"), default="log")
    p.add_argument("--pool", default="48x64", help="pooled frames x bands")
    p.add_argument("--iters", default="200")
    p.add_argument("--mu", default="0.5")
    p.add_argument("--out", required=True, help="output directory")
    _add_corpus_args(p)
    _add_pipeline_args(p)
    p.set_defaults(handler=cmd_lmnn)

    p = sub.add_parser("tsne", help="2-D t-SNE of a distance CSV")
    p.add_argument("distances")
    p.add_argument("--labels", help="labels CSV; adds a label column and colours the plot")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="embedding CSV, default <distances>_tsne.csv (a PNG is written next to it)")
    p.set_defaults(handler=cmd_tsne)

    p = sub.add_parser("run", help="run the experiment grid")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--representations", help="comma-separated representations")
    p.add_argument("--scales", help="comma-separated scales")
    p.add_argument("--metrics", help="comma-separated metrics")
    p.add_argument("--out-dir", help="results directory")
    _add_corpus_args(p)
    _add_pipeline_args(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("spectrogram", help="STFT magnitude spectrogram of one WAV as CSV and/or binary")
    p.add_argument("wav")
    p.add_argument("--csv", help="one row per frame, one column per bin frequency")
    p.add_argument("--binary", help="16-byte header, then float32 values")
    p.add_argument("--frame-size", type=int, default=1024)
    p.add_argument("--overlap", type=float, default=0.75)
    p.add_argument("--scale", choices=("mag", "log"), default="mag")
    p.add_argument("--floor-db", type=float, default=-80.0)
    p.add_argument("--trim", action="store_true", help="drop the samples before the detected onset")
    p.set_defaults(handler=cmd_spectrogram)

    p = sub.add_parser("export", help="re-serialize a WAV as 16- or 24-bit PCM")
    p.add_argument("wav")
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(16, 24), default=16)
    p.add_argument("--trim", action="store_true", help="drop the samples before the detected onset")
    p.set_defaults(handler=cmd_export)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except CallkitError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
    except (ValueError, OSError) as exc:
        print(f"error [invalid_input]: {exc}", file=sys.stderr)
    return EXIT_INVALID


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
