"""Exception hierarchy for low-precision emulation and the GD harness."""


class LowPrecisionError(Exception):
    """Base class for every error raised by lowprec_gd."""


class InvalidInput(LowPrecisionError, ValueError):
    """A NaN or infinite value reached a rounding routine."""


class FormatOverflowError(LowPrecisionError, OverflowError):
    """A value lies outside [-x_max, x_max] of its format."""


class MissingBiasSign(LowPrecisionError, ValueError):
    """Signed-SR_eps was requested without a bias source v."""


class UnsupportedMode(LowPrecisionError, ValueError):
    """The requested rounding mode cannot serve this operation."""


class DivisionByZero(LowPrecisionError, ZeroDivisionError):
    pass


class DimensionMismatch(LowPrecisionError, ValueError):
    pass


class NonFiniteGradient(LowPrecisionError, ArithmeticError):
    pass


class ParameterOutOfRange(LowPrecisionError, ValueError):
    """A bound evaluator was called outside its valid parameter range."""


class ConfigError(LowPrecisionError, ValueError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, message: str, key: str = ""):
        super().__init__(message)
        self.key = key


class DataError(LowPrecisionError):
    """Dataset could not be loaded."""


class FormatError(DataError):
    """Malformed IDX file (bad magic number, truncated payload, ...)."""


class EmptyDataset(DataError):
    pass


class LengthMismatch(LowPrecisionError, ValueError):
    """Traces of different lengths were handed to aggregation."""


class PreconditionViolated(UserWarning):
    """A bound's precondition does not hold; the bound is still returned."""
