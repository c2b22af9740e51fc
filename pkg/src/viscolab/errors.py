"""Exception types raised across the package."""


class ViscolabError(Exception):
    """Base class for every error raised by viscolab."""


class InvalidArgument(ViscolabError, ValueError):
    pass


class AlignmentError(InvalidArgument):
    """Delay is not an integer multiple of the time step."""

    def __init__(self, tau, dt, suggestions):
        self.tau = tau
        self.dt = dt
        self.suggestions = tuple(suggestions)
        pretty = " or ".join(f"{s:.12g}" for s in self.suggestions)
        super().__init__(
            f"tau={tau!r} is not an integer multiple of dt={dt!r}; "
            f"nearest admissible tau: {pretty}"
        )


class CertificationFailure(ViscolabError):
    """The kernel does not satisfy the relaxation-function hypotheses."""

    def __init__(self, message, integral=None, worst_time=None, worst_violation=None):
        self.integral = integral
        self.worst_time = worst_time
        self.worst_violation = worst_violation
        super().__init__(message)


class InvalidKernel(ViscolabError, ValueError):
    pass


class UnsupportedKernel(ViscolabError, TypeError):
    pass


class BlowUpDetected(ViscolabError):
    def __init__(self, t, vmax):
        self.t = t
        self.vmax = vmax
        super().__init__(f"blow-up detected at t={t:.6g}: max|u_t|={vmax:.6g}")


class NumericalFailure(ViscolabError):
    pass


class SelectionFailure(ViscolabError):
    """Lyapunov constant selection could not produce positive constants."""

    def __init__(self, message, constant=None):
        self.constant = constant
        super().__init__(message)


class InvalidWindow(ViscolabError, ValueError):
    pass


class EnvelopeRangeError(ViscolabError, ValueError):
    pass


class CalibrationFailure(ViscolabError):
    pass


class ConfigParseError(ViscolabError, ValueError):
    def __init__(self, message, path=""):
        self.path = path
        where = f" at '{path}'" if path else ""
        super().__init__(f"{message}{where}")


class ConfigValidationError(ViscolabError, ValueError):
    pass
