"""Exception types raised by the numerical kernels and steppers."""


class NumericalFailure(RuntimeError):
    """Base class for failures that abort an integration."""

    def __init__(self, message, *, step=None, **details):
        super().__init__(message)
        self.step = step
        self.details = details

    def at_step(self, step):
        self.step = step
        return self


class MeshCrossing(NumericalFailure):
    """A cell width dropped to or below the crossing floor."""


class NoConvergence(NumericalFailure):
    """Newton iteration did not reach the residual tolerance."""


class SingularJacobian(NumericalFailure):
    """The Newton matrix could not be factored."""


class SingularMatrix(NumericalFailure):
    """A linear system is singular to working precision."""


class SingularKkt(SingularMatrix):
    """The bordered mass/constraint matrix is singular."""
