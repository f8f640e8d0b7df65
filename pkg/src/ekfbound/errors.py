"""Exception hierarchy shared across the package."""


class EkfBoundError(Exception):
    """Base class for all errors raised by ekfbound."""


class ConfigurationError(EkfBoundError):
    """Inputs have inconsistent dimensions or an invalid scenario config."""


class UnsupportedSystemError(EkfBoundError):
    pass


class InvalidParameterError(EkfBoundError):
    pass


class RequiresBoundedSetError(EkfBoundError):
    pass


class DecompositionInvalidError(EkfBoundError):
    """A decomposition failed the exactness residual check."""

    def __init__(self, message, worst_sample=None, residual=None):
        super().__init__(message)
        self.worst_sample = worst_sample
        self.residual = residual


class InvalidIntervalError(EkfBoundError):
    pass


class BoundUnavailableError(EkfBoundError):
    """The bounding SDP was infeasible or the solver failed."""

    def __init__(self, message, entry=None, status=None, step=None, phase=None):
        super().__init__(message)
        self.entry = entry
        self.status = status
        self.step = step
        self.phase = phase


class NumericalError(EkfBoundError):
    pass


class InsufficientSamplesError(EkfBoundError):
    pass


class HorizonMismatchError(EkfBoundError):
    pass
