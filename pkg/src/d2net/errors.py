"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: user-input problems
(bad shapes, bad values, missing data) exit 2, artifact/format problems
(checkpoints, image files) exit 3, failed numerical checks exit 1.
"""


class D2NetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(D2NetError, ValueError):
    """Array extents do not satisfy an operation's contract."""


class PrecisionError(D2NetError, TypeError):
    """Mixed or unsupported scalar precisions."""


class ConfigError(D2NetError, ValueError):
    """Invalid architectural or training configuration."""


class DataError(D2NetError, ValueError):
    """Unusable user input (pixel range, missing images, bad sizes)."""


class NonFiniteError(D2NetError, FloatingPointError):
    """NaN/Inf produced where the debug guards forbid it."""


class SpectralResidueError(D2NetError, FloatingPointError):
    """Inverse transform of a supposedly real spectrum had a large
    imaginary part; indicates a corrupted spectrum upstream."""


class MemoryGuardError(D2NetError, RuntimeError):
    """A single allocation exceeded the linear-memory budget."""


class TrainingDivergedError(D2NetError, RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class CheckpointError(D2NetError, RuntimeError):
    """Base class for checkpoint (de)serialization failures."""


class BadMagicError(CheckpointError):
    """Stream does not start with the checkpoint magic bytes."""


class BadVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class TruncatedError(CheckpointError):
    """Stream ended before the declared contents were read."""


class RegistryMismatchError(CheckpointError):
    """Checkpoint tensors do not match the live parameter registry."""


class ImageFormatError(D2NetError, ValueError):
    """Malformed portable-pixmap stream."""
