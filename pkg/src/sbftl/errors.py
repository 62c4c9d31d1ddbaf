class SBFError(Exception):
    """Base class for all errors raised by sbftl."""


class InvalidBandwidthError(SBFError, ValueError):
    pass


class DomainError(SBFError, ValueError):
    """Input value outside [0, 1] (or otherwise outside the supported domain)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DimensionError(SBFError, ValueError):
    pass


class IllConditionedError(SBFError, ArithmeticError):
    """A local-linear design matrix is (numerically) singular at some grid point."""

    def __init__(self, message, covariate=None, grid_point=None):
        super().__init__(message)
        self.covariate = covariate
        self.grid_point = grid_point


class DegenerateMarginalError(SBFError, ArithmeticError):
    pass


class InsufficientSampleError(SBFError, ValueError):
    pass


class ConfigError(SBFError, ValueError):
    pass


class DataError(SBFError, ValueError):
    """Malformed or unusable input data (CSV parsing, missing columns...)."""
