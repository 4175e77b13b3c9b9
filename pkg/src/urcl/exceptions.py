"""Exception types shared across the package."""


class UrclError(Exception):
    """Base class for all package-specific errors."""


class IngestError(UrclError):
    """A dataset file is missing or unreadable."""


class SchemaError(UrclError):
    """File contents violate the declared dataset schema."""


class ParseError(UrclError):
    """A cell could not be parsed; message carries row/column position."""


class DomainError(UrclError):
    """A value is outside its mathematical domain (e.g. non-positive distance)."""


class ConfigError(UrclError):
    """An experiment configuration is inconsistent or infeasible."""


class ContractError(UrclError):
    """A caller violated an operation's precondition."""


class NumericalError(UrclError):
    """A non-finite value appeared where a finite one is required."""
