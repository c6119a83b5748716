"""Exception types raised across the package."""


class RelPoseError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RelPoseError, ValueError):
    """An argument is outside its documented domain."""


class SingularityError(RelPoseError, ArithmeticError):
    """Evaluation at a coordinate singularity (zero range, coincident points)."""


class NumericFailureError(RelPoseError, ArithmeticError):
    """A numerical routine produced a non-finite value or a singular system."""


class DegenerateFitError(RelPoseError, ValueError):
    """A least-squares fit has a rank-deficient regressor."""
