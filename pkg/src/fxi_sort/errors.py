"""Exception types shared across the package."""


class FxiSortError(Exception):
    """Base class for all package errors."""


class DimensionError(FxiSortError, ValueError):
    """Array shape incompatible with the requested operation."""


class DomainError(FxiSortError, ValueError):
    """Scalar argument outside its valid domain."""


class ResolutionError(FxiSortError, ValueError):
    """Particle does not fit the simulation sampling box."""


class DegenerateTemplateError(FxiSortError, ValueError):
    """Template carries no usable intensity on the shared mask."""


class DegenerateTrainingError(FxiSortError, ValueError):
    """Training set has rank zero (all frames identical)."""


class ConfigurationError(FxiSortError, RuntimeError):
    """A builder or job configuration cannot be satisfied."""


class ContractError(FxiSortError, ValueError):
    """Inputs violate a cross-object contract (shape, alignment, schema)."""
