"""Exception hierarchy shared by the library and the command line tool."""


class PTDynError(Exception):
    """Base class for all errors raised by ptdyn."""


class ConfigError(PTDynError, ValueError):
    """Invalid user input: bad parameters, shapes or configuration files."""


class NumericalError(PTDynError, ArithmeticError):
    """A numerical procedure failed (non-finite values, no convergence...)."""


class ConvergenceError(NumericalError):
    """Fixed-point or bracketing iteration did not reach its tolerance."""

    def __init__(self, message, best_residual=float("nan"), iterations=0):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class SingularMidpointError(NumericalError):
    """The midpoint Gram matrix is too ill-conditioned to build a projector."""


class PropagationError(NumericalError):
    """A time step failed; ``trajectory`` holds the samples computed so far."""

    def __init__(self, message, step=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory
