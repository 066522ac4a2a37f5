"""Whole-clip linear prediction: source/filter split into an LPC residual and an all-pole spectrum."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import signal as sps

from callkit.common.errors import LpcError
from callkit.common.models import LpcModel, Signal, Spectrogram, readonly_array

logger = logging.getLogger(__name__)

STABILITY_TOL = 1e-9


def autocorrelate(signal: Signal, max_lag: int) -> np.ndarray:
    """Biased autocorrelation r[k] = Σ_n x(n)·x(n+k) for k = 0..max_lag."""
    x = signal.samples
    if x.size == 0:
        raise LpcError("Cannot autocorrelate an empty signal")
    if not 0 <= max_lag < x.size:
        raise LpcError(f"max_lag {max_lag!r} must lie in [0, {x.size - 1}]")
    return np.array([np.dot(x[: x.size - k], x[k:]) for k in range(max_lag + 1)])


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Solve the Toeplitz normal equations for predictor coefficients a[1..order].

    Returns ``(coefficients, errors)`` where ``errors[p]`` is the prediction error power of the
    order-p predictor (``errors[0] == r[0]``). The sequence is non-increasing.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.size < order + 1:
        raise LpcError(f"Need {order + 1} autocorrelation lags, got {r.size}")
    if r[0] <= 0:
        raise LpcError("degenerate autocorrelation: zero signal energy")

    a = np.zeros(order)
    errors = np.empty(order + 1)
    errors[0] = err = r[0]
    for i in range(order):
        reflection = (r[i + 1] - np.dot(a[:i], r[i:0:-1])) / err
        previous = a[:i].copy()
        a[i] = reflection
        a[:i] = previous - reflection * previous[::-1]
        err *= 1.0 - reflection * reflection
        if not math.isfinite(err) or not np.all(np.isfinite(a)):
            raise LpcError(f"Non-finite value in Levinson-Durbin recursion at order {i + 1}")
        errors[i + 1] = err
    return a, errors


def fit_lpc(signal: Signal, order: int = 10) -> LpcModel:
    """Autocorrelation-method LPC over the whole clip (no windowing, no pre-emphasis)."""
    if signal.n_samples <= order:
        raise LpcError(f"Signal of {signal.n_samples} samples is too short for order {order}")
    r = autocorrelate(signal, order)
    if r[0] == 0:
        raise LpcError("degenerate autocorrelation: signal is identically zero")
    coefficients, errors = levinson_durbin(r, order)
    return LpcModel(order=order, coefficients=coefficients, gain=math.sqrt(max(errors[-1], 0.0)))


def _inverse_filter(model: LpcModel) -> np.ndarray:
    return np.r_[1.0, -model.coefficients]


def residual(signal: Signal, model: LpcModel) -> Signal:
    """e(n) = x(n) − Σ_k a[k]·x(n−k) with zero initial conditions."""
    e = sps.lfilter(_inverse_filter(model), [1.0], signal.samples)
    return Signal(samples=e, sample_rate=signal.sample_rate, onset_index=signal.onset_index)


def synthesize(excitation: Signal, model: LpcModel) -> Signal:
    """All-pole synthesis 1/A(z); inverts :func:`residual`."""
    x = sps.lfilter([1.0], _inverse_filter(model), excitation.samples)
    return Signal(samples=x, sample_rate=excitation.sample_rate, onset_index=excitation.onset_index)


def is_stable(model: LpcModel) -> bool:
    poles = np.roots(_inverse_filter(model))
    return bool(np.all(np.abs(poles) < 1.0 - STABILITY_TOL))


def lpc_spectrum(model: LpcModel, n_bins: int = 513) -> np.ndarray:
    """|gain / A(e^{jω})| at ``n_bins`` frequencies spread uniformly over [0, Nyquist]."""
    if n_bins < 2:
        raise LpcError(f"n_bins must be at least 2, got {n_bins!r}")
    if not is_stable(model):
        raise LpcError("Unstable LPC model: a pole lies on or outside the unit circle")
    _, response = sps.freqz([model.gain], _inverse_filter(model), worN=np.linspace(0.0, np.pi, n_bins))
    return np.abs(response)


def lpc_filter_spectrogram(model: LpcModel, template: Spectrogram) -> Spectrogram:
    """The call's single LPC spectrum tiled over every frame of ``template``."""
    envelope = lpc_spectrum(model, template.n_bins)
    values = readonly_array(np.tile(envelope, (template.n_frames, 1)))
    return template.model_copy(update={"values": values, "is_log": False, "floor_db": None})


def spectral_flatness(signal: Signal, nperseg: int = 1024, floor_db: float = -120.0) -> float:
    """Geometric over arithmetic mean of the Welch power spectrum, floored at ``floor_db`` below its peak."""
    _, power = sps.welch(signal.samples, fs=signal.sample_rate, nperseg=min(nperseg, signal.n_samples))
    if not np.any(power > 0):
        return 0.0
    power = np.maximum(power, power.max() * 10 ** (floor_db / 10))
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))
