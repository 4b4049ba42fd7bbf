"""Exception types shared across the simulator."""


class HBFLError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(HBFLError, ValueError):
    pass


class PreconditionError(HBFLError, ValueError):
    pass


class DataError(HBFLError, ValueError):
    pass


class NumericError(HBFLError, FloatingPointError):
    def __init__(self, message, *, epoch=None, batch=None, context=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.context = context


class ArgumentError(HBFLError, ValueError):
    pass


class SchemaError(HBFLError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep it readable
        return str(self.args[0]) if self.args else ""


class IngestionError(HBFLError):
    pass


class PlanError(HBFLError, ValueError):
    pass


class AggregationError(HBFLError, ValueError):
    pass


class MembershipError(HBFLError):
    pass


class WorkflowDefinitionError(HBFLError):
    pass


class RegistrationError(HBFLError):
    pass


class AccessError(HBFLError, PermissionError):
    pass


class AuthenticityError(HBFLError):
    pass


class SealError(HBFLError):
    pass
