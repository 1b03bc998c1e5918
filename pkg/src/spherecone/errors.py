"""Exception types raised across the package."""


class SphereConeError(Exception):
    """Base class for all package errors."""


class DegenerateTriangle(SphereConeError):
    pass


class DomainError(SphereConeError, ValueError):
    pass


class ArcTooLong(SphereConeError, ValueError):
    pass


class BasepointOnLoop(SphereConeError, ValueError):
    pass


class TopologyError(SphereConeError):
    pass


class InvalidSurface(SphereConeError):
    pass


class ConvergenceError(SphereConeError):
    pass


class BudgetExceeded(SphereConeError):
    pass


class NeedsRefinement(SphereConeError):
    pass


class NearCriticalLevel(SphereConeError):
    pass


class SaddleInInterval(SphereConeError):
    pass


class EstimateInapplicable(SphereConeError):
    pass


class LoopThroughCone(SphereConeError):
    pass


class NotHalfInteger(SphereConeError, ValueError):
    pass


class TooManyPoints(SphereConeError, ValueError):
    pass


class WrongRegime(SphereConeError):
    pass


class NotEssential(SphereConeError):
    pass


class UnknownFamily(SphereConeError, KeyError):
    pass
