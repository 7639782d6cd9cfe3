"""Exception hierarchy shared across the package."""


class ShadocError(Exception):
    """Base class for every error raised by shadoc."""


class ShapeError(ShadocError, ValueError):
    """Tensor or image extents do not satisfy an operation's contract."""


class ConfigError(ShadocError, ValueError):
    """An invalid hyperparameter, flag combination or config file entry."""


class ContractError(ShadocError, ValueError):
    """A caller broke an API precondition (e.g. non-scalar loss)."""


class TapeStateError(ShadocError, RuntimeError):
    """The gradient tape was used in an invalid state (e.g. replayed twice)."""


class NonFiniteError(ShadocError, FloatingPointError):
    """An operation produced NaN or Inf while debug checks were active."""

    def __init__(self, op: str, message: str | None = None):
        self.op = op
        super().__init__(message or f"non-finite values produced by op '{op}'")


class DecodeError(ShadocError, ValueError):
    """A file is truncated or corrupt. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class UnsupportedFormatError(ShadocError, ValueError):
    """A file is well formed but uses a format variant we do not handle."""


class FormatError(ShadocError, ValueError):
    """A checkpoint file has the wrong magic or version."""


class DataError(ShadocError, ValueError):
    """Dataset layout problems: missing directories, unpaired files."""


class CheckpointMismatchError(ShadocError, ValueError):
    """Checkpoint contents do not fit the model they are loaded into."""


class TrainingError(ShadocError, RuntimeError):
    """Training had to abort (for example on a NaN loss)."""
