"""Exception types shared across the package."""


class ChirpVitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ChirpVitError):
    """A configuration value violates its documented bound."""


class DomainError(ChirpVitError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(ChirpVitError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(ChirpVitError):
    """A computation produced a non-finite (NaN/Inf) value."""


class NormalizationError(ChirpVitError):
    """Label statistics are degenerate (zero variance or too few rows)."""


class MetricError(ChirpVitError):
    """A metric is undefined for the given inputs."""


class DataError(ChirpVitError):
    """Dataset files are missing, malformed, or empty."""


class GenerationError(ChirpVitError):
    """Dataset generation failed partway through.

    ``written`` holds the number of samples fully written before the failure.
    """

    def __init__(self, message, written=0):
        super().__init__(message)
        self.written = written


class CheckpointError(ChirpVitError):
    """A checkpoint file cannot be read or fails validation."""


class TrainingError(ChirpVitError):
    """Training aborted; carries the epoch, batch, and learning rate at failure."""

    def __init__(self, message, epoch=None, batch=None, lr=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
