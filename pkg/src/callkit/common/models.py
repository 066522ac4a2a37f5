from __future__ import annotations

from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from callkit.common._paths import default_workers

# ---------------------------------------------------------------------------
# Array coercion
# ---------------------------------------------------------------------------


def _readonly(value: Any, dtype: type) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    arr.setflags(write=False)
    return arr


def readonly_array(value: Any) -> np.ndarray:
    return _readonly(value, np.float64)


FloatArray = Annotated[np.ndarray, BeforeValidator(lambda v: _readonly(v, np.float64))]
IntArray = Annotated[np.ndarray, BeforeValidator(lambda v: _readonly(v, np.int64))]
BoolArray = Annotated[np.ndarray, BeforeValidator(lambda v: _readonly(v, np.bool_))]

_NUMERIC = ConfigDict(arbitrary_types_allowed=True, frozen=True)

Metric = Literal["euclidean", "manhattan"]
Scale = Literal["mag", "log"]

SOURCES = ("raw", "lpc_residual", "lpc_filter")
TRANSFORMS = ("stft", "adft_unrefined", "adft_refined")
REPRESENTATIONS: tuple[str, ...] = tuple(
    f"{source}/{transform}" for source in SOURCES for transform in TRANSFORMS if source != "lpc_filter"
) + ("lpc_filter/stft",)


def split_representation(name: str) -> tuple[str, str]:
    """Split ``"source/transform"`` and validate both halves."""
    source, sep, transform = name.partition("/")
    if not sep or source not in SOURCES or transform not in TRANSFORMS:
        raise ValueError(f"Invalid representation: {name!r}. Use <source>/<transform> from {SOURCES} x {TRANSFORMS}.")
    if source == "lpc_filter" and transform != "stft":
        raise ValueError(f"Invalid representation: {name!r}. lpc_filter only combines with stft.")
    return source, transform


# ---------------------------------------------------------------------------
# Signals and calls
# ---------------------------------------------------------------------------


class Signal(BaseModel):
    model_config = _NUMERIC

    samples: FloatArray
    sample_rate: int = Field(gt=0)
    onset_index: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_samples(self) -> Signal:
        if self.samples.ndim != 1:
            raise ValueError(f"Signal samples must be one-dimensional, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("Signal samples must be finite")
        if self.samples.size and self.onset_index >= self.samples.size:
            raise ValueError(f"onset_index {self.onset_index} outside signal of {self.samples.size} samples")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


class LabelledCall(BaseModel):
    model_config = _NUMERIC

    signal: Signal
    individual_id: str
    call_id: str


# ---------------------------------------------------------------------------
# Spectral representations
# ---------------------------------------------------------------------------


class LpcModel(BaseModel):
    model_config = _NUMERIC

    order: int = Field(gt=0)
    coefficients: FloatArray
    gain: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_coefficients(self) -> LpcModel:
        if self.coefficients.shape != (self.order,):
            raise ValueError(f"Expected {self.order} coefficients, got shape {self.coefficients.shape}")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("LPC coefficients must be finite")
        return self


class Spectrogram(BaseModel):
    """Regular time-frequency matrix, frames along rows and bins along columns."""

    model_config = _NUMERIC

    values: FloatArray
    frame_hop: int = Field(gt=0)
    frame_size: int = Field(gt=0)
    sample_rate: int = Field(gt=0)
    is_log: bool = False
    time_origin: int = 0
    floor_db: float | None = None

    @model_validator(mode="after")
    def _check_values(self) -> Spectrogram:
        if self.values.ndim != 2:
            raise ValueError(f"Spectrogram values must be a matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Spectrogram values must be finite")
        if self.is_log and self.floor_db is None:
            raise ValueError("Log spectrograms must record their floor_db")
        if not self.is_log and np.any(self.values < 0):
            raise ValueError("Magnitude spectrograms must be non-negative")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.values.shape[1])

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.frame_size

    @property
    def pad_value(self) -> float:
        """Value standing in for silence: 0 for magnitudes, the floor for log-magnitudes."""
        return float(self.floor_db) if self.is_log and self.floor_db is not None else 0.0

    def frame_centers(self) -> np.ndarray:
        return self.time_origin + self.frame_hop * np.arange(self.n_frames)


class F0Track(BaseModel):
    model_config = _NUMERIC

    f0: FloatArray
    sample_rate: int = Field(gt=0)
    f_min: float = Field(gt=0)
    f_max: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_range(self) -> F0Track:
        if self.f0.ndim != 1 or self.f0.size == 0:
            raise ValueError("F0 track must be a non-empty one-dimensional curve")
        if self.f_min > self.f_max:
            raise ValueError(f"f_min {self.f_min} exceeds f_max {self.f_max}")
        tol = 1e-9 * self.f_max
        if not np.all(np.isfinite(self.f0)) or self.f0.min() < self.f_min - tol or self.f0.max() > self.f_max + tol:
            raise ValueError(f"F0 values must lie within [{self.f_min}, {self.f_max}] Hz")
        return self

    @property
    def voiced_range(self) -> tuple[float, float]:
        return self.f_min, self.f_max

    def phase(self) -> np.ndarray:
        """Running phase 2π·Σ_{m≤n} f0(m)/fs of the fundamental."""
        return 2.0 * np.pi * np.cumsum(self.f0) / self.sample_rate


class HarmonicSpectrogram(BaseModel):
    """Pitch-synchronous harmonic magnitudes; frame k-columns beyond ``n_harmonics`` are zero."""

    model_config = _NUMERIC

    frame_times: IntArray
    f0: FloatArray
    magnitudes: FloatArray
    n_harmonics: IntArray
    truncated: BoolArray
    sample_rate: int = Field(gt=0)

    @model_validator(mode="after")
    def _check_frames(self) -> HarmonicSpectrogram:
        n = self.frame_times.shape[0]
        if self.magnitudes.ndim != 2 or self.magnitudes.shape[0] != n:
            raise ValueError(f"magnitudes must have {n} rows, got shape {self.magnitudes.shape}")
        for name in ("f0", "n_harmonics", "truncated"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per frame")
        if n and np.any(self.n_harmonics > self.magnitudes.shape[1]):
            raise ValueError("n_harmonics exceeds the stored harmonic columns")
        if n and np.any(self.n_harmonics * self.f0 >= self.sample_rate / 2):
            raise ValueError("Harmonic frequencies must stay below Nyquist")
        if not np.all(np.isfinite(self.magnitudes)) or np.any(self.magnitudes < 0):
            raise ValueError("Harmonic magnitudes must be finite and non-negative")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.frame_times.shape[0])

    def harmonic_freqs(self) -> np.ndarray:
        """k·f0(t_i) per frame, NaN beyond each frame's harmonic count."""
        k = np.arange(1, self.magnitudes.shape[1] + 1)
        freqs = self.f0[:, None] * k[None, :]
        return np.where(k[None, :] <= self.n_harmonics[:, None], freqs, np.nan)


# ---------------------------------------------------------------------------
# Distances and classification
# ---------------------------------------------------------------------------


class DistanceMatrix(BaseModel):
    model_config = _NUMERIC

    values: FloatArray
    call_ids: list[str]
    metric: Metric
    scale: Scale = "mag"
    representation: str = "raw/stft"

    @model_validator(mode="after")
    def _check_matrix(self) -> DistanceMatrix:
        n = len(self.call_ids)
        if self.values.shape != (n, n):
            raise ValueError(f"Distance matrix shape {self.values.shape} does not match {n} call ids")
        if len(set(self.call_ids)) != n:
            raise ValueError("call_ids must be unique")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("Distances must be finite and non-negative")
        if np.any(np.diag(self.values) != 0) or not np.array_equal(self.values, self.values.T):
            raise ValueError("Distance matrix must be symmetric with a zero diagonal")
        return self

    @property
    def n(self) -> int:
        return len(self.call_ids)

    @property
    def metric_tag(self) -> str:
        return f"{self.metric}/{self.scale}"


class ClassificationReport(BaseModel):
    accuracy: float = Field(ge=0, le=1)
    per_class_recall: dict[str, float]
    labels: list[str]
    confusion: list[list[int]]
    chance_level: float = Field(ge=0, le=1)
    n_calls: int = Field(gt=0)
    k: int = 3
    metric: str = ""
    scale: str = ""
    representation: str = ""

    @model_validator(mode="after")
    def _check_consistency(self) -> ClassificationReport:
        confusion = np.asarray(self.confusion)
        if confusion.shape != (len(self.labels), len(self.labels)) or confusion.sum() != self.n_calls:
            raise ValueError("Confusion matrix does not match labels and n_calls")
        if not np.isclose(self.accuracy, np.trace(confusion) / self.n_calls):
            raise ValueError("accuracy must equal trace(confusion)/n_calls")
        if not np.isclose(self.chance_level, confusion.sum(axis=1).max() / self.n_calls):
            raise ValueError("chance_level must equal the majority-class share")
        return self


# ---------------------------------------------------------------------------
# Metric learning and embedding
# ---------------------------------------------------------------------------


class FeatureMatrix(BaseModel):
    model_config = _NUMERIC

    vectors: FloatArray
    pixel_shape: tuple[int, int]
    labels: list[str]
    call_ids: list[str] = Field(default_factory=list)
    mean: FloatArray
    scale: FloatArray

    @model_validator(mode="after")
    def _check_vectors(self) -> FeatureMatrix:
        if self.vectors.ndim != 2:
            raise ValueError("Feature vectors must form an n x d matrix")
        n, d = self.vectors.shape
        if self.pixel_shape[0] * self.pixel_shape[1] != d:
            raise ValueError(f"pixel_shape {self.pixel_shape} does not cover {d} features")
        if len(self.labels) != n or (self.call_ids and len(self.call_ids) != n):
            raise ValueError("labels and call_ids must have one entry per vector")
        if self.mean.shape != (d,) or self.scale.shape != (d,) or np.any(self.scale <= 0):
            raise ValueError("Standardization must hold d means and d positive scales")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("Feature vectors must be finite")
        return self

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.mean) / self.scale


class LinearMetric(BaseModel):
    model_config = _NUMERIC

    projection: FloatArray
    importance: FloatArray
    loss_history: list[float]
    pixel_shape: tuple[int, int] | None = None

    @model_validator(mode="after")
    def _check_projection(self) -> LinearMetric:
        if self.projection.ndim != 2 or self.projection.shape[0] > self.projection.shape[1]:
            raise ValueError(f"Projection must be d' x d with d' <= d, got {self.projection.shape}")
        if not np.allclose(self.importance, np.sum(self.projection**2, axis=0), rtol=1e-9, atol=0):
            raise ValueError("importance must equal the column squared norms of the projection")
        history = np.asarray(self.loss_history)
        if history.size > 1 and np.any(np.diff(history) > 1e-12 * np.abs(history[:-1])):
            raise ValueError("loss_history must be non-increasing")
        return self


class Embedding(BaseModel):
    model_config = _NUMERIC

    coords: FloatArray
    call_ids: list[str]
    kl_history: list[float]
    perplexity: float
    seed: int
    exaggeration_iters: int = 250

    @model_validator(mode="after")
    def _check_coords(self) -> Embedding:
        if self.coords.shape != (len(self.call_ids), 2):
            raise ValueError(f"Embedding coords shape {self.coords.shape} does not match call ids")
        if not np.all(np.isfinite(self.coords)) or not np.all(np.isfinite(self.kl_history)):
            raise ValueError("Embedding coordinates and KL history must be finite")
        return self


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


class Formant(BaseModel):
    center_hz: float = Field(gt=0)
    bandwidth_hz: float = Field(gt=0)
    gain: float = Field(gt=0)


class IndividualProfile(BaseModel):
    individual_id: str
    f0_start: float
    f0_end: float
    harmonic_amps: list[float] = Field(min_length=1)
    formants: list[Formant] = Field(default_factory=list)
    duration_mean: float = Field(gt=0)
    duration_sd: float = Field(default=0.0, ge=0)
    two_voice: float | None = None
    two_voice_gain: float = 0.5
    noise_floor_db: float | None = None
    f0_jitter: float = Field(default=0.0, ge=0)
    amp_jitter: float = Field(default=0.0, ge=0)
    ambient_db: float | None = None
    channel_resonances: int = Field(default=0, ge=0)
    lead_ms: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check_profile(self) -> IndividualProfile:
        for value in (self.f0_start, self.f0_end):
            if not 80 < value < 2000:
                raise ValueError(f"Profile f0 {value} Hz outside (80, 2000)")
        if any(a < 0 for a in self.harmonic_amps):
            raise ValueError("Harmonic amplitudes must be non-negative")
        return self


class SynthCorpus(BaseModel):
    model_config = _NUMERIC

    calls: list[LabelledCall]
    profiles: dict[str, IndividualProfile]
    master_seed: int

    @model_validator(mode="after")
    def _check_ids(self) -> SynthCorpus:
        ids = [c.call_id for c in self.calls]
        if len(set(ids)) != len(ids):
            raise ValueError("call_id must be unique within a corpus")
        return self

    @property
    def labels(self) -> list[str]:
        return [c.individual_id for c in self.calls]


class CorpusSpec(BaseModel):
    """Where a run's calls come from: a labelled WAV directory, or a synthetic preset."""

    data_dir: Path | None = None
    labels: Path | None = None
    preset: Literal["default", "source_identity", "band_identity"] = "default"
    individuals: int = Field(default=20, ge=2)
    calls: int = Field(default=30, ge=1)
    counts: list[int] | None = None
    seed: int = Field(default=0, ge=0)
    spread: float = Field(default=1.0, ge=0)
    sample_rate: int = Field(default=48000, gt=0)


# ---------------------------------------------------------------------------
# Experiment grid
# ---------------------------------------------------------------------------


class ExperimentGrid(BaseModel):
    representations: list[str] = Field(default_factory=lambda: list(REPRESENTATIONS))
    scales: list[Scale] = Field(default_factory=lambda: ["mag", "log"])
    metrics: list[Metric] = Field(default_factory=lambda: ["euclidean", "manhattan"])
    k: int = Field(default=3, gt=0)
    max_shift_ms: float = Field(default=20.0, ge=0)
    frame_size: int = Field(default=1024, gt=1)
    overlap: float = Field(default=0.75, ge=0, lt=1)
    lpc_order: int = Field(default=10, gt=0)
    f0_min: float = Field(default=80.0, gt=0)
    f0_max: float = Field(default=2000.0, gt=0)
    refine_iters: int = Field(default=8, ge=0)
    floor_db: float = Field(default=-80.0, lt=0)
    log_reference: Literal["call", "corpus"] = "call"
    workers: int = Field(default_factory=default_workers, gt=0)
    out_dir: Path | None = None
    cache_dir: Path | None = None
    use_cache: bool = True
    lmnn_representations: list[str] = Field(default_factory=list)
    lmnn_pool: tuple[int, int] = (48, 64)
    lmnn_iters: int = Field(default=200, gt=0)
    lmnn_mu: float = Field(default=0.5, ge=0, le=1)
    tsne_representations: list[str] = Field(default_factory=list)
    tsne_perplexity: float = Field(default=30.0, gt=0)
    tsne_seed: int = 1

    @model_validator(mode="after")
    def _check_selection(self) -> ExperimentGrid:
        if not self.representations or not self.scales or not self.metrics:
            raise ValueError("Experiment grid selections must be non-empty")
        for name in self.representations + self.lmnn_representations + self.tsne_representations:
            split_representation(name)
        if self.f0_min >= self.f0_max:
            raise ValueError(f"f0_min {self.f0_min} must be below f0_max {self.f0_max}")
        return self

    def cells(self) -> list[tuple[str, Scale, Metric]]:
        return [(r, s, m) for r in self.representations for s in self.scales for m in self.metrics]


class GridRow(BaseModel):
    representation: str
    scale: str
    metric: str
    accuracy: float | None = None
    chance_level: float | None = None
    n_calls: int = 0
    wall_time_s: float = 0.0
    status: Literal["ok", "error"] = "ok"
    error: str | None = None
