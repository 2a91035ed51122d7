"""Exception types shared across the package."""


class ResobsError(Exception):
    """Base class for all package-specific errors."""


class InvalidModelError(ResobsError):
    """System matrices are malformed (shape mismatch, non-finite entries)."""


class AnnihilatorUnavailableError(ResobsError):
    """No measurement annihilator exists for the requested horizon."""


class OracleTooLargeError(ResobsError):
    """A brute-force enumeration would exceed its combinatorial guard."""


class BoundInapplicableError(ResobsError):
    """A recovery bound was requested outside its hypothesis region."""


class PriorDegenerateError(ResobsError):
    """Prior covariance is singular or not positive definite."""


class InfeasiblePriorError(ResobsError):
    """The prior credibility set excludes every model-consistent trajectory."""


class InvalidGainError(ResobsError):
    """Observer gain does not stabilize the error dynamics."""


class ConfigurationError(ResobsError):
    """A scenario or component configuration failed validation."""


class SolverFailureError(ResobsError):
    """The iterative solver stopped without producing a usable solution."""
