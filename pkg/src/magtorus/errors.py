"""Exception types raised across the package."""


class MagtorusError(Exception):
    """Base class for all package errors."""


class ModelError(MagtorusError):
    """Invalid model data (bad dimensions, non-positive conformal factor, ...)."""


class NotClosed(ModelError):
    """The magnetic 2-form fails the closedness check."""

    def __init__(self, residual: float, tol: float):
        self.residual = residual
        self.tol = tol
        super().__init__(f"2-form is not closed: residual {residual:.3e} exceeds {tol:.1e}")


class ZeroVelocity(MagtorusError):
    """Kinetic momentum vanishes, so the point cannot be moved to the energy level."""


class StepSizeCollapse(MagtorusError):
    """Adaptive controller requested a step below the minimum step."""

    def __init__(self, t: float, h: float, h_min: float):
        self.t = t
        self.h = h
        self.h_min = h_min
        super().__init__(f"step size collapsed at t={t:.12g}: h={h:.3e} < h_min={h_min:.3e}")


class NoneFound(MagtorusError):
    """No conjugate point in the scanned window."""

    def __init__(self, t_max: float, report=None):
        self.t_max = t_max
        self.report = report
        super().__init__(f"no conjugate point in (0, {t_max:g}]")


class DetectorAmbiguous(MagtorusError):
    """sigma_min(J) dipped below threshold without a certified zero."""

    def __init__(self, t_dip: float, sigma_dip: float, report=None):
        self.t_dip = t_dip
        self.sigma_dip = sigma_dip
        self.report = report
        super().__init__(f"ambiguous dip of sigma_min(J) = {sigma_dip:.3e} at t = {t_dip:.12g}")


class InvalidInitial(MagtorusError):
    """Initial Riccati matrix violates the Lagrangian condition."""


class FrameSingular(MagtorusError):
    """J(T) is numerically singular (conjugate point at T)."""


class ConfigInvalid(MagtorusError):
    """Experiment configuration failed validation."""

    def __init__(self, message: str, fields: dict | None = None):
        self.fields = dict(fields or {})
        super().__init__(message)
