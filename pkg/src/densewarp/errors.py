"""Exception types raised across the package."""


class DenseWarpError(Exception):
    """Base class for all package errors."""


class NonFinite(DenseWarpError):
    """Input contains NaN or Inf where finite values are required."""


class PointBehindCamera(DenseWarpError):
    """3D point has non-positive depth in the camera frame."""


class CoincidentCenters(DenseWarpError):
    """Two cameras share a center; their epipolar geometry is undefined."""


class DegenerateLine(DenseWarpError):
    """Epipolar line has a vanishing direction vector (point is the epipole)."""


class DegenerateDenominator(DenseWarpError):
    """Sampson denominator too small to divide by."""


class BadDimensions(DenseWarpError):
    """Heatmap dimensions too small for the requested Gaussian."""


class EmptyChannel(DenseWarpError):
    """Heatmap channel contains no response to decode."""


class GroupShapeMismatch(DenseWarpError):
    """Heatmap list does not form a valid interleaved group."""


class RigMismatch(DenseWarpError):
    """Camera rig does not match the heatmap grid."""


class ShapeMismatch(DenseWarpError):
    """Array shapes disagree."""


class ModeMismatch(DenseWarpError):
    """Warper weights serve a different temporal mode than the input."""


class EmptyDataset(DenseWarpError):
    """Training dataset is empty."""


class DivergedLoss(DenseWarpError):
    """Training loss became non-finite."""


class InsufficientViews(DenseWarpError):
    """Fewer than two usable views for triangulation."""


class DegenerateGeometry(DenseWarpError):
    """Triangulation system has an ambiguous null space."""


class JointCountMismatch(DenseWarpError):
    """Skeletons have different joint counts."""


class DegenerateConfiguration(DenseWarpError):
    """Joints are collinear or coincident; alignment is underdetermined."""


class TooFewFrames(DenseWarpError):
    """Not enough frames to form a single interleaved group."""


class OutOfOrderArrival(DenseWarpError):
    """Arrival frame is not newer than the view's cached frame."""


class BadPlan(DenseWarpError):
    """Sampling plan parameters are invalid."""


class OutOfBounds(DenseWarpError):
    """Motion left the configured bounding box."""


class LookAtDegenerate(DenseWarpError):
    """Camera center coincides with its look-at target."""


class ConfigError(DenseWarpError):
    """Configuration file failed validation."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
