"""Signal builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from callkit.common.models import Signal

TEST_RATE = 16000


def harmonic_signal(
    f0_start: float = 600.0,
    f0_end: float | None = None,
    duration: float = 0.25,
    sample_rate: int = TEST_RATE,
    amps: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125),
    lead: int = 0,
) -> Signal:
    """Linear-chirp harmonic stack with an optional leading silence, peak 0.9."""
    n = round(duration * sample_rate)
    f0 = np.linspace(f0_start, f0_start if f0_end is None else f0_end, n)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    x = sum(a * np.sin((k + 1) * phase) for k, a in enumerate(amps))
    x = np.concatenate([np.zeros(lead), 0.9 * x / np.max(np.abs(x))])
    return Signal(samples=x, sample_rate=sample_rate)
