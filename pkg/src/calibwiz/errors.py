"""Exception types shared across the package."""


class CalibwizError(Exception):
    """Base class for all package errors."""


class PointBehindCamera(CalibwizError):
    """A 3D point has non-positive depth in the camera frame."""

    def __init__(self, depth, image=None, point=None):
        self.depth = depth
        self.image = image
        self.point = point
        loc = ""
        if image is not None or point is not None:
            loc = f" (image={image}, point={point})"
        super().__init__(f"point behind camera, depth={depth:.3g}{loc}")


class DegenerateConfiguration(CalibwizError):
    """Linear calibration system is rank-deficient (e.g. all views fronto-parallel)."""


class NonConvergence(CalibwizError):
    """Optimizer hit the iteration cap without meeting the tolerance."""


class SingularNormalEquations(CalibwizError):
    """Damped normal equations remained singular after retries."""


class EmptyObservations(CalibwizError):
    """Operation requires at least one observed corner."""


class NoFeasiblePose(CalibwizError):
    """Every candidate evaluated by the planner was infeasible."""


class InvalidAngle(CalibwizError):
    """Corner opening angle outside the renderable range."""


class InvalidSize(CalibwizError):
    """Patch size must be odd and large enough to hold the corner."""


class DegeneratePatch(CalibwizError):
    """Patch has no gradient content (constant intensity)."""


class FitFailure(CalibwizError):
    """Polynomial fit residual exceeded the accepted bound."""


class AngleOutOfRange(CalibwizError):
    """Requested opening angle lies outside the fitted model range."""


class InsufficientNeighbors(CalibwizError):
    """Grid point lacks the row/column neighbors needed for corner geometry."""


class UndistortDivergence(CalibwizError):
    """Fixed-point undistortion did not converge for this pixel."""


class SamplingExhausted(CalibwizError):
    """Random pose sampler exceeded its rejection budget."""
