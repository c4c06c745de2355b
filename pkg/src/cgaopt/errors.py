class CgaoptError(Exception):
    pass


class InvalidArgument(CgaoptError, ValueError):
    pass


class InvalidConfig(CgaoptError, ValueError):
    pass


class FitFailure(CgaoptError):
    pass


class IllPosedProblem(CgaoptError):
    pass


class SolverFailure(CgaoptError):
    pass


class NonFiniteError(CgaoptError, FloatingPointError):
    """Raised when a loss, gradient or update stops being finite."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class CheckpointError(CgaoptError):
    pass


class RunAborted(CgaoptError):
    """An optimization stopped on a numerical failure; carries the state reached so far."""

    def __init__(self, cause: Exception, iteration: int, history: list, params=None, rho=None):
        super().__init__(f"run aborted at iteration {iteration}: {cause}")
        self.cause = cause
        self.iteration = iteration
        self.history = history
        self.params = params
        self.rho = rho
