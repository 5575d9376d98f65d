"""Exception hierarchy shared by every module."""


class PlgsError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PlgsError, ValueError):
    """An argument lies outside the admissible parameter regime."""


class ExponentTooSmallError(DomainError):
    pass


class ExponentTooLargeError(DomainError):
    pass


class NegativeCouplingError(DomainError):
    pass


class DegenerateInputError(PlgsError, ValueError):
    """The input field is identically zero (or has zero norm)."""


class BracketError(PlgsError, RuntimeError):
    """Shooting could not bracket the central amplitude."""


class TailUnderflowError(PlgsError, ValueError):
    pass


class NonConvergenceError(PlgsError, RuntimeError):
    """Iteration budget exhausted without meeting the residual tolerance."""


class ResolutionError(PlgsError, ValueError):
    """A feature is too narrow for the grid spacing."""


class InsufficientDataError(PlgsError, ValueError):
    pass


class InconclusiveError(PlgsError, RuntimeError):
    pass


class ConfigError(PlgsError, ValueError):
    """Run configuration failed schema validation."""
