"""Exception hierarchy. Each class maps to one CLI exit code."""


class TunaError(Exception):
    exit_code = 1


class DimensionError(TunaError, ValueError):
    """Operand shapes do not agree."""

    exit_code = 2


class ConfigError(TunaError, ValueError):
    exit_code = 2


class ContractError(TunaError, RuntimeError):
    """A documented precondition was violated by the caller."""

    exit_code = 2


class DataError(TunaError, ValueError):
    exit_code = 1


class FormatError(TunaError, ValueError):
    """Malformed checkpoint container."""

    exit_code = 1


class CompatibilityError(TunaError, RuntimeError):
    """Checkpoint was produced against a different frozen backbone."""

    exit_code = 3


class NumericalError(TunaError, FloatingPointError):
    exit_code = 4


class DatasetIOError(TunaError, OSError):
    """A dataset or checkpoint file could not be read or written."""

    exit_code = 1
