"""Exception hierarchy shared by every module."""


class MfgError(Exception):
    """Base class for all library errors."""


class DimMismatch(MfgError, ValueError):
    pass


class NotSymmetric(MfgError, ValueError):
    pass


class BadLength(MfgError, ValueError):
    pass


class Unstable(MfgError):
    """A gain K with rho(A - BK) >= 1 - stab_margin was supplied."""


class NoConvergence(MfgError):
    pass


class RiccatiFailure(NoConvergence):
    """The Riccati iteration did not settle; the instance is likely not admissible."""


class CholeskyFailure(MfgError):
    pass


class SingularSolve(MfgError):
    pass


class NotContraction(MfgError):
    """L0 >= 1, so the mean-field operator is not certified to contract."""


class NonFinite(MfgError, FloatingPointError):
    pass


class UnstableIterate(Unstable):
    """An actor iterate left the stable region."""

    def __init__(self, message, *, phase=None, iteration=None, rho=None):
        super().__init__(message)
        self.phase = phase
        self.iteration = iteration
        self.rho = rho
