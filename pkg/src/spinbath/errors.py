"""Exception hierarchy shared by all spinbath modules."""


class SpinbathError(Exception):
    """Base class for every error raised by spinbath."""


class CapacityError(SpinbathError, ValueError):
    """A dense operator would exceed the configured site cap."""


class NotHermitianError(SpinbathError, ValueError):
    pass


class InvalidStateError(SpinbathError, ValueError):
    """Matrix fails the density-matrix invariants (trace, Hermiticity, positivity)."""


class NumericalError(SpinbathError, RuntimeError):
    """An integrator or decomposition could not meet its accuracy contract."""


class PositivityError(NumericalError):
    def __init__(self, message, min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class StepSizeError(NumericalError):
    pass


class SingularMapError(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NotCompletelyPositiveError(SpinbathError, ValueError):
    def __init__(self, message, min_eig):
        super().__init__(message)
        self.min_eig = min_eig


class GridError(SpinbathError, ValueError):
    """Time grid is unsuitable (non-uniform, mismatched, or too coarse)."""


class EngineIncompatibleError(SpinbathError, ValueError):
    """The requested engine cannot handle the given Hamiltonian or molecule."""


class ConfigError(SpinbathError, ValueError):
    pass


class DisconnectedSiteError(SpinbathError, ValueError):
    """A probe site has no coupling path to the source site."""
