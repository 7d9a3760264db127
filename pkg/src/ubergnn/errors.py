"""Exception hierarchy shared across the package."""


class UberGNNError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InvalidArgumentError(UberGNNError, ValueError):
    exit_code = 3


class ConfigurationError(UberGNNError, ValueError):
    exit_code = 3


class SchemaError(UberGNNError, ValueError):
    exit_code = 4


class EmptyDatasetError(UberGNNError, ValueError):
    exit_code = 5


class LookupFailure(UberGNNError, KeyError):
    exit_code = 4

    def __str__(self):
        return Exception.__str__(self)


class UnsupportedVersionError(UberGNNError):
    exit_code = 6


class IntegrityError(UberGNNError):
    exit_code = 6


class TrainingDivergenceError(UberGNNError, FloatingPointError):
    exit_code = 7


class OracleFailureError(UberGNNError, FloatingPointError):
    exit_code = 7


class GradientCheckFailed(UberGNNError):
    exit_code = 8


class RecommendationError(UberGNNError):
    exit_code = 9
