"""Exception hierarchy shared by every module."""


class ProxSapgError(Exception):
    """Base class for all library errors."""


class InvalidArgument(ProxSapgError, ValueError):
    """An argument has the wrong shape, sign or type."""


class DomainError(ProxSapgError, ValueError):
    """A parameter lies outside the region where a formula is defined."""


class UnsupportedConfiguration(ProxSapgError):
    """The requested combination of model, kernel and estimator is not supported."""


class AdmissibilityError(UnsupportedConfiguration):
    """A kernel step size or smoothing ratio violates the ergodicity bounds."""


class NumericalFailure(ProxSapgError, ArithmeticError):
    """A quadrature or root-finding routine could not reach its tolerance."""


class ScheduleInvalid(InvalidArgument):
    """A step-size schedule fails the summability conditions."""
