"""Exception hierarchy for the multi-peak construction pipeline."""


class LogPeaksError(Exception):
    """Base class for all package errors."""


class ModelDomainError(LogPeaksError):
    """Potential evaluation produced a non-finite or out-of-range value."""


class DegenerateCriticalPointError(LogPeaksError):
    """A critical point with (numerically) singular Hessian was encountered."""


class DegenerateKernelError(LogPeaksError):
    """The kernel-basis Gram matrix is numerically singular."""


class StarNormOverflowError(LogPeaksError):
    """The weighted sup-norm ratio overflows at some grid point.

    Raised when the Gaussian envelope is below exp(-700) while the field
    value there is non-negligible.
    """

    def __init__(self, point, field_value, log_envelope):
        self.point = tuple(point)
        self.field_value = field_value
        self.log_envelope = log_envelope
        super().__init__(
            f"envelope underflow at x={self.point}: |phi|={field_value:.3e}, "
            f"log-envelope={log_envelope:.1f}"
        )


class LinearSolveError(LogPeaksError):
    """Krylov solve on the bordered system failed to reach tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class TrustRegionError(LogPeaksError):
    """A contraction iterate left the trust ball (or broke positivity)."""


class NonContractionError(LogPeaksError):
    """Fixed-point iteration exhausted its budget without converging."""

    def __init__(self, message, history=None):
        self.history = history or []
        super().__init__(message)


class BallExitError(LogPeaksError):
    """Outer peak-location iterate left its search ball."""


class DegenerateOuterError(LogPeaksError):
    """Outer Jacobian numerically singular (non-degeneracy fails at this eps)."""


class GeometryError(LogPeaksError):
    """Requested ball/shell does not fit inside the computational box."""


class OracleDivergenceError(LogPeaksError):
    """Newton line search in the reference solver stagnated."""


class ProbeError(LogPeaksError):
    """Coercivity/spectrum probe iteration failed to converge."""


class FieldFormatError(LogPeaksError):
    """Malformed binary field file."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class ConfigError(LogPeaksError):
    """Invalid or unknown entry in a run configuration."""
