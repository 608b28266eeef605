"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`SysIdError`.
The four families below map to distinct CLI exit codes.
"""


class SysIdError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1


# --- configuration ------------------------------------------------------


class ConfigError(SysIdError):
    exit_code = 2


class InvalidInputError(SysIdError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    """Physically invalid model parameters (e.g. non-SPD inertia)."""


# --- data ---------------------------------------------------------------


class DataError(SysIdError):
    exit_code = 3


class SchemaError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyLogError(DataError):
    pass


class DegenerateFeatureError(DataError):
    def __init__(self, feature, message=None):
        super().__init__(message or f"feature {feature!r} has zero standard deviation")
        self.feature = feature


class DegenerateTargetError(DegenerateFeatureError):
    pass


class SegmentBoundaryError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


# --- numerics -----------------------------------------------------------


class NumericError(SysIdError, ArithmeticError):
    exit_code = 4


class IllPosedError(NumericError):
    pass


class SingularityError(NumericError):
    """Pitch reached the gimbal guard of the ZYX Euler parameterisation."""


class DivergenceError(NumericError):
    def __init__(self, message, when=None):
        super().__init__(message)
        self.when = when


class InstabilityError(DivergenceError):
    pass


# --- I/O ----------------------------------------------------------------


class ContainerError(SysIdError, IOError):
    exit_code = 5
