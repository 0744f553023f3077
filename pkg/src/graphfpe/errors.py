"""Exception hierarchy shared by all modules.

The CLI maps :class:`InputError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class GraphFPEError(Exception):
    """Base class for every error raised by this package."""


class InputError(GraphFPEError, ValueError):
    """Invalid user-supplied data (bad shapes, non-simplex points, parse errors)."""


class NumericalError(GraphFPEError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class DisconnectedGraphError(InputError):
    pass


class EigenConvergenceError(NumericalError):
    pass


class BruteForceCapError(InputError):
    pass


class StepSizeUnderflowError(NumericalError):
    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class IdentificationError(NumericalError):
    pass
