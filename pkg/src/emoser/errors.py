"""Exception hierarchy shared across the pipeline.

The CLI maps these onto its exit codes: ConfigError -> 2, I/O (OSError)
-> 3, DataError and subclasses -> 4, NumericError -> 5.
"""


class EmoserError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EmoserError):
    """Invalid or contradictory configuration."""


class DataError(EmoserError):
    """Invalid input data (manifests, audio files, labels, protocols)."""


class AudioFormatError(DataError):
    """WAV container or encoding we refuse to read."""


class SegmentTooShortError(DataError):
    """Signal shorter than one analysis window."""


class ManifestError(DataError):
    """Malformed dataset manifest."""


class ProtocolError(DataError):
    """Splitting protocol preconditions violated (sessions, class counts)."""


class CheckpointError(EmoserError):
    """Malformed, truncated or incompatible checkpoint file."""


class NumericError(EmoserError):
    """NaN/Inf detected in a computation."""
