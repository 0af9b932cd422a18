"""Exception types shared across the package.

All inherit from ValueError so callers can catch broadly, but each kind
maps to one failure mode of the library contracts.
"""


class NlplabError(ValueError):
    """Base class for all package errors."""


class DomainError(NlplabError):
    """A point lies outside the domain closure, or a region is empty."""


class ParameterError(NlplabError):
    """A scalar parameter violates its admissible range."""


class ConfigurationError(NlplabError):
    """A composite object (labeled set, config file, plan) is inconsistent."""


class AdmissibilityError(NlplabError):
    """A theorem's admissibility condition fails for the given parameters."""


class NormalizationError(NlplabError):
    """A kernel or mollifier profile cannot be normalized (zero mass)."""
