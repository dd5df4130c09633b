"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside its physical or mathematical domain."""


class ConfigurationError(ValueError):
    """A configuration is internally inconsistent (sizes, identifiability)."""


class NumericalError(RuntimeError):
    """A numerical operation failed beyond the tolerated degradation."""
