"""Exception types raised across the calibration pipeline."""


class PanorigError(Exception):
    """Base class for every error raised by this package."""


class InvalidDepth(PanorigError, ValueError):
    pass


class BehindCamera(PanorigError, ValueError):
    pass


class MissingDepth(PanorigError, LookupError):
    pass


class EmptyFrame(PanorigError, ValueError):
    pass


class DimensionMismatch(PanorigError, ValueError):
    pass


class TooFewPoints(PanorigError, ValueError):
    pass


class DegenerateGeometry(PanorigError, ValueError):
    pass


class AngleNearPi(PanorigError, ValueError):
    """The rotation is too close to pi for a well-conditioned logarithm."""


class MissingEdge(PanorigError, LookupError):
    pass


class MissingPose(PanorigError, LookupError):
    pass


class NoOverlap(PanorigError, ValueError):
    pass


class SingularSystem(PanorigError, ArithmeticError):
    """Normal equations are rank deficient beyond the fixed gauge."""


class NotConverged(PanorigError, ArithmeticError):
    """Iteration budget exhausted. ``best`` holds the best estimate found so far."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
