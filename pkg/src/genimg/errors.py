"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`GenimgError`.
The three intermediate classes map onto CLI exit codes (config 2, data 3,
numerical 4).
"""


class GenimgError(Exception):
    exit_code = 1


class ConfigError(GenimgError, ValueError):
    exit_code = 2


class DataError(GenimgError, ValueError):
    exit_code = 3


class NumericalError(GenimgError, ArithmeticError):
    exit_code = 4


class DimensionError(DataError):
    pass


class DegenerateEmbeddingError(NumericalError):
    pass


class BatchTooSmallError(DataError):
    pass


class EmptyLossError(DataError):
    pass


class NoOverlapError(DataError):
    pass


class RankDeficientError(NumericalError):
    pass


class SingularDesignError(NumericalError):
    pass


class StaleArtifactError(DataError):
    pass
