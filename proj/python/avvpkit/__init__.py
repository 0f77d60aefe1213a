"""Weakly-supervised audio-visual video parsing toolkit.

Thin wrapper over the C++ core: synthetic data generation, the three-stage
training pipeline, the full metric suite, and self-verification.
"""

from avvpkit._core import (
    ConfigurationError,
    FileFormatError,
    InvalidArgumentError,
    NumericFailure,
    ShapeError,
    __version__,
    evaluate,
    evaluate_parses,
    extract_events,
    forward,
    synth,
    train,
    type_at_av,
    verify,
)

__all__ = [
    "ConfigurationError",
    "FileFormatError",
    "InvalidArgumentError",
    "NumericFailure",
    "ShapeError",
    "__version__",
    "evaluate",
    "evaluate_parses",
    "extract_events",
    "forward",
    "synth",
    "train",
    "type_at_av",
    "verify",
]
