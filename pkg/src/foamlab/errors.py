"""Exception hierarchy shared by all foamlab modules."""


class FoamError(Exception):
    """Base class for foamlab errors."""


class ConfigurationError(FoamError):
    """Inconsistent geometry or configuration (shape mismatch, bad config file)."""


class ParameterError(FoamError, ValueError):
    """A numeric parameter is outside its valid range."""


class AuctionError(FoamError):
    """The auction exceeded its bid cap; ``state`` holds a diagnostic dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class InsertionError(FoamError):
    """Not enough complement cells to carve a new bubble."""


class InfeasibleRampError(FoamError):
    """A volume ramp would exhaust the complement or empty the target bubble."""


class ConvergenceError(FoamError):
    """Raised by drivers configured to abort on non-convergence."""
