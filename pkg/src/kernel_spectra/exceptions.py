"""Exception types shared across the package."""


class KernelSpectraError(Exception):
    """Base class for all package errors."""


class DomainError(KernelSpectraError, ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(KernelSpectraError, ValueError):
    """Inputs are well-typed but violate a documented precondition."""


class ComputationError(KernelSpectraError, ArithmeticError):
    """A numerical routine failed in a way that should not happen for valid input."""


class ResourceError(KernelSpectraError, MemoryError):
    """A desk-scale size guard was exceeded."""


class ConfigError(KernelSpectraError, ValueError):
    """Invalid experiment configuration. ``field`` names the offending key path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
