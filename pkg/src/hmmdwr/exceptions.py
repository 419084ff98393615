"""Exception types raised by the solver stack."""


class HMMError(Exception):
    """Base class for all errors raised by :mod:`hmmdwr`."""


class ConfigurationError(HMMError, ValueError):
    """Invalid problem id, flag value or config file entry."""


class StructuralError(HMMError, ValueError):
    """A mesh violates the patch / micro-grid invariants."""


class UsageError(HMMError, ValueError):
    """Objects were combined inconsistently (e.g. orbit anchored elsewhere)."""


class NonConvergenceError(HMMError, RuntimeError):
    """Periodic cycling did not reach the requested tolerance."""

    def __init__(self, message, defect=None, cycles=None):
        super().__init__(message)
        self.defect = defect
        self.cycles = cycles


class DegenerateMonodromyError(HMMError, RuntimeError):
    """``I - M`` is numerically singular for a linear periodic problem."""


class StepError(HMMError, RuntimeError):
    """Newton iteration of a macro step failed."""

    def __init__(self, message, interval=None, residuals=()):
        super().__init__(message)
        self.interval = interval
        self.residuals = list(residuals)


class AdjointAssemblyError(HMMError, RuntimeError):
    """A local block of the backward adjoint recursion is singular."""


class ConsistencyError(HMMError, RuntimeError):
    """Primal, adjoint and estimator data do not belong together."""
