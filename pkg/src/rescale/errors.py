"""Exception hierarchy shared by the library and the command line."""


class RescaleError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RescaleError, ValueError):
    pass


class InvalidDensityError(InvalidInputError):
    """A density is non-positive or non-finite somewhere on the check grid."""


class AssumptionViolationError(RescaleError):
    """The killing rate is not bounded away from zero."""


class ConfigError(RescaleError):
    """Bad configuration: unknown key, bad value, or violated invariant.

    ``key`` and ``line`` are filled in when the error comes from a config file.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        self.reason = message
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(RescaleError):
    """Singular matrix, non-convergence, non-finite state and similar failures."""


class GridTooCoarseError(NumericalError):
    """Central differences would lose monotonicity; increase the grid size."""
