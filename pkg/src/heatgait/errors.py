"""Exception hierarchy shared across the package.

The CLI maps :class:`ValidationError` subclasses to exit code 1 and every
other :class:`HeatGaitError` to exit code 2.
"""


class HeatGaitError(Exception):
    """Base class for all package errors."""


class ValidationError(HeatGaitError):
    """Input data or configuration failed validation."""


# graph
class ZeroDegreeError(HeatGaitError):
    pass


class DisconnectedGraphError(HeatGaitError):
    pass


# data
class EmptySequenceError(HeatGaitError):
    pass


class DegenerateSequenceError(HeatGaitError):
    pass


class TooFewSubjectsError(HeatGaitError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ValidationError):
    def __init__(self, message, record=None):
        self.record = record
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)


# nnkernel
class ShapeMismatch(HeatGaitError):
    def __init__(self, op, detail):
        self.op = op
        super().__init__(f"{op}: {detail}")


class NonFinite(HeatGaitError):
    def __init__(self, op, epoch=None):
        self.op = op
        self.epoch = epoch
        msg = f"non-finite values produced by {op}"
        if epoch is not None:
            msg += f" (epoch {epoch})"
        super().__init__(msg)


class CheckpointError(HeatGaitError):
    pass


# train / eval
class NoPositivesError(HeatGaitError):
    pass


class InsufficientClassesError(HeatGaitError):
    pass


class EmptyGalleryError(HeatGaitError):
    pass


# cli
class UsageError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ConfigNotFound(ConfigError):
    pass
