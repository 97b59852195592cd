"""Exception types shared across the package."""


class CapexError(Exception):
    """Base class for all package errors."""


class InvalidVariableError(CapexError):
    """A variable spec or variable reference is malformed."""


class MissingBindingError(CapexError):
    """An instantiation does not bind a required variable."""


class InvalidValueError(CapexError):
    """A bound value is outside the variable's domain, or an index is out of range."""


class InvalidModelError(CapexError):
    """A model state violates a structural invariant."""


class UndefinedEstimateError(CapexError):
    """An empirical estimate was requested for a situation never observed."""


class ScenarioError(CapexError):
    """A scenario file or definition failed validation."""
