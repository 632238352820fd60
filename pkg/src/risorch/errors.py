"""Exception types raised across the package."""


class RisError(Exception):
    """Base class for every error raised by risorch."""


class ConfigurationError(RisError, ValueError):
    """Invalid scene, panel layout, or run configuration."""


class GeometryError(RisError, ValueError):
    """Degenerate geometry, e.g. a transmitter sitting on an element."""


class EvaluationError(RisError, ValueError):
    """An observation point cannot be evaluated."""


class SolverDivergenceError(RisError, RuntimeError):
    """The coupled incident-field system could not be solved to tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FingerprintMismatchError(RisError):
    """A codebook was compiled for a different scene."""


class CodebookFormatError(RisError):
    """The codebook payload or manifest is malformed."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
