"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration object violates its invariants."""


class DataError(Exception):
    """Dataset ingestion or preparation failed (missing file, bad row, ...)."""


class StratificationError(DataError):
    """A score decile is too thin to feed every split."""


class TrainingDivergedError(RuntimeError):
    """Training loss left the finite range."""

    def __init__(self, message: str, last_finite_epoch: int):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class CheckpointError(Exception):
    """Base class for checkpoint serialization failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a checkpoint or is truncated/garbled."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unknown future format version."""


class CheckpointDigestError(CheckpointError):
    """Stored content digest does not match the file bytes."""


class StudyError(Exception):
    """Invalid study bookkeeping (duplicate items, missing testers, ...)."""


class SessionError(Exception):
    """Judging-service request violated the session protocol.

    ``code`` is the machine-readable identifier exposed over HTTP.
    """

    code = "session_error"


class UnknownDatasetError(SessionError):
    code = "unknown_dataset"


class UnknownSessionError(SessionError):
    code = "unknown_session"


class UnknownItemError(SessionError):
    code = "unknown_item"


class SessionClosedError(SessionError):
    code = "session_closed"


class OutOfOrderError(SessionError):
    code = "out_of_order"


class DuplicateJudgmentError(SessionError):
    code = "duplicate"


class BadChoiceError(SessionError):
    code = "bad_choice"
