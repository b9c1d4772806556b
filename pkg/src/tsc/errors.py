"""Exception hierarchy shared across the toolkit."""


class TscError(Exception):
    """Base class for all toolkit errors."""


class InputError(TscError):
    """Malformed data handed to an operation (shape, range, format)."""


class ConfigError(TscError):
    """Invalid configuration value or combination."""


class GenerationError(TscError):
    """Synthetic data generation could not satisfy its contract."""


class TrainingError(TscError):
    """Training aborted (non-finite values or a broken optimizer state)."""
