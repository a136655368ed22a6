"""Exception hierarchy shared by all bandcm modules."""


class BandcmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(BandcmError):
    """Invalid configuration or incompatible parameter combination."""


class DataError(BandcmError):
    """Malformed or inconsistent input data (files, protocols, shapes)."""


class TrainingError(BandcmError):
    """Model training failed (insufficient data, non-convergence, ...)."""
