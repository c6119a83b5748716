"""Two-robot SE(2) relative-pose estimation toolkit."""

from .errors import (
    DegenerateFitError,
    InvalidArgumentError,
    NumericFailureError,
    RelPoseError,
    SingularityError,
)
from .se2 import GaussianPose, Pose2, compose, inverse, wrap_angle

__version__ = "0.1.0"
