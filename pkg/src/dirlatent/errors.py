"""Exception types shared across the package."""


class DirlatentError(Exception):
    """Base class for all package errors."""


class DimensionError(DirlatentError, ValueError):
    """Incompatible tensor extents."""


class ContractError(DirlatentError, ValueError):
    """A documented precondition of an operation was violated."""


class DomainError(DirlatentError, ValueError):
    """Argument outside the domain of a mathematical function."""


class NumericError(DirlatentError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigError(DirlatentError, ValueError):
    """Invalid or unknown configuration keys/values."""
