"""Exception hierarchy shared by all modules."""


class ProjNewtonError(Exception):
    pass


class InvalidDimensionError(ProjNewtonError, ValueError):
    pass


class InvalidParameterError(ProjNewtonError, ValueError):
    pass


class InvalidInputError(ProjNewtonError, ValueError):
    pass


class DegenerateProblemError(ProjNewtonError):
    """A^T b vanishes, so b is orthogonal to the range of A."""


class SingularJacobianError(ProjNewtonError):
    def __init__(self, msg, iterate=None):
        super().__init__(msg)
        self.iterate = iterate


class LineSearchError(ProjNewtonError):
    def __init__(self, msg, iterate=None, F_norm=None):
        super().__init__(msg)
        self.iterate = iterate
        self.F_norm = F_norm


class DiscrepancyUnreachableError(ProjNewtonError):
    pass


class SingularSystemError(ProjNewtonError):
    pass


class OracleFailure(ProjNewtonError):
    """An oracle did not converge; tests relying on it are inconclusive."""
