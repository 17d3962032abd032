"""Exception hierarchy shared across the package."""


class BndlError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(BndlError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(BndlError):
    """Array dimensions are inconsistent."""


class ConfigError(BndlError):
    """A configuration value is invalid or incompatible with the data."""


class LabelError(BndlError):
    """A class label is out of range."""


class IngestionError(BndlError):
    """A dataset file has invalid content."""


class FormatError(BndlError):
    """A binary file violates its wire format (bad magic, truncation, ...)."""


class NumericsError(BndlError):
    """A numerical computation produced non-finite values."""


class OracleError(BndlError):
    """A test-only reference computation failed to converge."""
