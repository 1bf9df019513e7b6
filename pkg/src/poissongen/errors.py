"""Exception hierarchy.

Two families matter to the CLI: `PreconditionError` (a caller asked for
something a result does not cover, exit code 2) and `NumericFailure`
(a computation did not reach its tolerance, exit code 3).
"""


class PoissonGenError(Exception):
    pass


class PreconditionError(PoissonGenError, ValueError):
    pass


class NumericFailure(PoissonGenError, ArithmeticError):
    pass


class DimensionMismatch(PreconditionError):
    pass


class ParameterOutOfRange(PreconditionError):
    pass


class ReducibleChain(PreconditionError):
    pass


class PeriodicChain(PreconditionError):
    pass


class NoConvergence(NumericFailure):
    def __init__(self, tol, iterations, message=None):
        self.tol = tol
        self.iterations = iterations
        super().__init__(message or f"no convergence to tol={tol:g} after {iterations} iterations")


class SupportViolation(PreconditionError):
    pass


class UnsupportedDimension(PreconditionError):
    pass


class NonInvariantPrior(PreconditionError):
    pass


class ConstantFunction(PreconditionError):
    pass


class NoInvariantMeasure(PreconditionError):
    pass


class UnsoundCertificate(PreconditionError):
    pass


class MissingCertificate(PreconditionError):
    pass


class GrowthBoundViolation(PreconditionError):
    pass


class InconsistentMoments(PreconditionError):
    pass


class UnsupportedKernel(PreconditionError, TypeError):
    pass


class GridTooCoarse(PreconditionError):
    pass


class NotEntire(NumericFailure):
    pass
