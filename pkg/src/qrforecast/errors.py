"""Exception types shared across the package."""


class QrfError(Exception):
    """Base class for all package errors."""


class InvalidQuote(QrfError):
    """A market record violates basic quote sanity (crossed or non-positive)."""


class ConfigError(QrfError):
    """A configuration value is out of its admissible range."""


class DomainError(QrfError):
    """A numeric argument is outside the mathematical domain of an operation."""


class InconsistentSeries(QrfError):
    """Snapshots passed together do not form one consecutive-day series."""


class InvalidBoundary(QrfError):
    """Extrapolated boundary data is unusable (crossed quotes or bad volatility)."""


class RangeError(QrfError):
    """Evaluation requested outside the supported interval; indicates a pipeline bug."""


class ResolutionError(QrfError):
    """Too few samples for the requested series truncation order."""


class NonFiniteValue(QrfError):
    """NaN or Inf encountered inside the solver."""


class EmptyInput(QrfError):
    """An aggregation was called with no records."""


class EmptyBatch(QrfError):
    """A loss was evaluated on an empty batch."""


class DivergenceDetected(QrfError):
    """Training loss became non-finite; learning rate is too high."""


class MissingDay(QrfError):
    """A required trading day is absent from the series."""


class EmptyDataset(QrfError):
    """No usable options remain after validation and preprocessing."""
