"""Exception hierarchy shared across the package.

Exit-code mapping in the CLI: ``InvalidInputError``/``ConfigError``/
``CheckpointError`` are usage-level failures (exit 1); ``NumericalError``
and its subclasses are runtime failures (exit 2).
"""


class ViewfillError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ViewfillError):
    """Caller passed data violating a documented precondition."""


class ConfigError(ViewfillError):
    """A configuration value violates its schema or invariants."""


class CheckpointError(ViewfillError):
    """Checkpoint file cannot be used."""


class CorruptCheckpointError(CheckpointError):
    """File is truncated, has a bad magic, or fails to parse."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint parameters do not match the target architecture."""


class NumericalError(ViewfillError):
    """A computation produced non-finite values."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite; carries epoch/batch context."""

    def __init__(self, epoch: int, batch: int, message: str = ""):
        self.epoch = epoch
        self.batch = batch
        detail = message or "training loss is not finite"
        super().__init__(f"{detail} (epoch {epoch}, batch {batch})")
