"""Exception hierarchy for jitteradj."""


class JitterAdjError(Exception):
    """Base class for all package errors."""


class InvalidInputError(JitterAdjError, ValueError):
    """Input rejected before any computation (degenerate polygon, bad counts, ...)."""


class AssemblyError(JitterAdjError):
    """Finite-element assembly failed, e.g. on a zero-area triangle."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class NumericalError(JitterAdjError):
    """A matrix that must be positive definite was not."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class DegenerateDesignError(JitterAdjError):
    """All integration weights of a cluster vanished."""

    def __init__(self, message, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class JitterRejectionError(JitterAdjError):
    """Rejection sampling of a displaced location did not terminate."""


class ConvergenceError(JitterAdjError):
    """An optimizer failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class FormatError(JitterAdjError, ValueError):
    """Malformed input file; message carries file and line context."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ScenarioError(JitterAdjError):
    """Too many fits failed within a simulation scenario."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
