"""Exception hierarchy.  CLI exit codes are attached to the classes."""


class BlcbError(Exception):
    exit_code = 1


class ConfigError(BlcbError, ValueError):
    exit_code = 2


class MissingArtifactError(BlcbError, FileNotFoundError):
    exit_code = 3


class NumericError(BlcbError, FloatingPointError):
    exit_code = 4


class DecodeError(BlcbError, ValueError):
    pass


class DimensionError(BlcbError, ValueError):
    pass


class CoverageError(BlcbError, ValueError):
    pass


class BalanceError(BlcbError, ValueError):
    pass


class PreconditionError(BlcbError, ValueError):
    pass


class UndefinedMetricError(BlcbError, ZeroDivisionError):
    pass


class DatasetError(MissingArtifactError):
    pass
