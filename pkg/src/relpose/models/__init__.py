"""Motion models, measurement channels, noise and calibration."""

from .calibration import CalibrationModel, apply_calibration, fit_calibration
from .kinematics import (
    AugmentedState,
    Case,
    Coord,
    Integrator,
    OdometryInput,
    cart_to_polar,
    cart_to_polar_jacobian,
    polar_to_cart,
    step,
    vector_field_m1,
    vector_field_m2,
)
from .measurements import Channel, measure_landmark, measure_relative, relative_pose
from .noise import (
    MeasurementKind,
    MeasurementSample,
    MeasurementStream,
    NoiseConfig,
    inject_noise,
    inject_outliers,
)

__all__ = [
    "AugmentedState", "CalibrationModel", "Case", "Channel", "Coord", "Integrator",
    "MeasurementKind", "MeasurementSample", "MeasurementStream", "NoiseConfig", "OdometryInput",
    "apply_calibration", "cart_to_polar", "cart_to_polar_jacobian", "fit_calibration",
    "inject_noise", "inject_outliers", "measure_landmark", "measure_relative", "polar_to_cart",
    "relative_pose", "step", "vector_field_m1", "vector_field_m2",
]
