"""Error types raised by callkit.

Every error carries a stable ``code`` so surfaces (CLI exit messages, MCP tool
errors, grid status columns) can report failures without parsing messages.
"""

from __future__ import annotations


class CallkitError(ValueError):
    code = "callkit_error"


class WavReadError(CallkitError):
    code = "wav_unreadable"


class WavEncodingError(CallkitError):
    code = "wav_unsupported_encoding"


class SampleRateMismatchError(CallkitError):
    code = "sample_rate_mismatch"


class OnsetError(CallkitError):
    code = "no_onset"


class LpcError(CallkitError):
    code = "lpc_failed"


class SpectraError(CallkitError):
    code = "spectrogram_failed"


class F0Error(CallkitError):
    code = "unvoiced_signal"


class AdftError(CallkitError):
    code = "adft_failed"


class DistanceError(CallkitError):
    code = "distance_failed"


class ClassificationError(CallkitError):
    code = "classification_failed"


class LmnnError(CallkitError):
    code = "lmnn_failed"


class TsneError(CallkitError):
    code = "tsne_failed"


class GridError(CallkitError):
    code = "grid_invalid"


class ReportError(CallkitError):
    code = "report_failed"


class ConfigError(CallkitError):
    code = "config_invalid"
