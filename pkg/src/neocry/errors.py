"""Exception types shared across the package."""


class NeocryError(Exception):
    """Base class for all errors raised by this package."""


class WavFormatError(NeocryError, ValueError):
    """Malformed RIFF/WAVE container."""


class UnsupportedFormatError(NeocryError, ValueError):
    """Well-formed WAV using a codec or sample width we do not decode."""


class DegenerateSignalError(NeocryError, ValueError):
    """An operation would produce (or received) a signal too short to use."""


class ShapeError(NeocryError, ValueError):
    """Tensor shapes do not agree."""


class TrainingDivergenceError(NeocryError, RuntimeError):
    """A non-finite loss or gradient appeared during training."""


class ManifestError(NeocryError, ValueError):
    """Manifest file violates the schema."""


class FoldError(NeocryError, ValueError):
    """A cross-validation plan cannot be built for the given manifest."""
