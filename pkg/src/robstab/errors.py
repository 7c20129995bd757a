"""Exception hierarchy shared by the solvers."""


class RobstabError(Exception):
    pass


class CaseError(RobstabError, ValueError):
    """Malformed or inconsistent case data."""


class NoConvergence(RobstabError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularJacobian(RobstabError):
    pass


class NearSingularAlgebraic(RobstabError):
    """The algebraic Jacobian is too ill-conditioned to eliminate the network variables."""

    def __init__(self, message, cond=float("inf")):
        super().__init__(message)
        self.cond = cond


class SolverFailure(RobstabError):
    pass


class CertificateViolation(RobstabError):
    pass


class NoCrossing(RobstabError):
    pass


class NoCoalescence(RobstabError):
    pass


class TrackingAmbiguity(RobstabError):
    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)


class StepFailure(RobstabError):
    """The integrator could not take a step above the minimum step size."""
