"""Exception types shared across the package."""


class NavMorphError(Exception):
    """Base class for all package errors."""


class DimensionError(NavMorphError, ValueError):
    """Operand shapes do not conform."""


class DomainError(NavMorphError, ValueError):
    """An argument lies outside the domain of the operation (e.g. sigma <= 0)."""


class UsageError(NavMorphError, ValueError):
    """An operation was called in a way its contract forbids."""


class NonFiniteError(NavMorphError, FloatingPointError):
    """A NaN or Inf appeared in a forward or backward computation."""


class ConfigError(NavMorphError, ValueError):
    """Invalid or inconsistent configuration."""


class FormatError(NavMorphError, ValueError):
    """A serialized file could not be parsed."""


class UnreachableError(NavMorphError, RuntimeError):
    """No obstacle-free path exists to the requested goal."""
