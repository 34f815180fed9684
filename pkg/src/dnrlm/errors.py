"""Exception hierarchy shared by all modules."""


class DnrError(Exception):
    """Base class for errors raised by dnrlm."""


class DimensionMismatch(DnrError, ValueError):
    pass


class DomainError(DnrError, ValueError):
    pass


class NotPositiveDefinite(DnrError, ValueError):
    pass


class ScaleNotPd(NotPositiveDefinite):
    """A fitted scale or covariance matrix is not positive definite."""


class TooFewDraws(DnrError, ValueError):
    pass


class NoConverge(DnrError, RuntimeError):
    def __init__(self, max_iter, message=None):
        self.max_iter = max_iter
        super().__init__(message or f"no convergence within {max_iter} iterations")


class SingularInformation(DnrError, RuntimeError):
    pass


class BadInitialPoint(DnrError, ValueError):
    pass


class DegenerateChain(DnrError, RuntimeError):
    pass


class Inadmissible(DnrError, ValueError):
    """Moments that do not map back to valid skew-normal parameters."""


class InadmissibleSkewness(Inadmissible):
    pass


class InadmissibleDelta(Inadmissible):
    pass


class FitFailed(DnrError, RuntimeError):
    pass


class EmptySample(DnrError, ValueError):
    pass


class ModeNotMax(DnrError, ValueError):
    pass


class IndivisibleRows(DnrError, ValueError):
    pass
