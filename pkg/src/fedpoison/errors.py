"""Exception hierarchy shared by all fedpoison modules."""


class FedPoisonError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FedPoisonError, ValueError):
    pass


class ShapeError(FedPoisonError, ValueError):
    pass


class DataError(FedPoisonError, ValueError):
    pass


class NumericError(FedPoisonError, FloatingPointError):
    pass


class IngestionError(DataError):
    pass


class OversamplingError(DataError):
    pass


class PartitionError(DataError):
    pass


class AttackError(FedPoisonError):
    pass


class RankingError(AttackError):
    pass


class AggregationError(FedPoisonError, ValueError):
    pass


class UndefinedMetricError(FedPoisonError, ValueError):
    """Raised when a metric has a zero denominator and no convention applies."""
