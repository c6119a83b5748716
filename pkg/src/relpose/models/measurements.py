"""Landmark and inter-robot measurement models with analytic Jacobians."""

from __future__ import annotations

import enum
import math

import numpy as np

from ..errors import InvalidArgumentError, SingularityError
from ..se2 import Pose2, wrap, wrap_angle
from .kinematics import RHO_EPS, Coord, _check_rho


class Channel(str, enum.Enum):
    RANGE = "range"
    BEARING = "bearing"
    ORIENTATION = "orientation"


ANGULAR_CHANNELS = frozenset({Channel.BEARING, Channel.ORIENTATION})


def measure_relative(ego: Pose2, other: Pose2) -> tuple[float, float, float]:
    """Range, bearing and relative heading of ``other`` seen from ``ego``."""
    dx, dy = other.x - ego.x, other.y - ego.y
    rho = math.hypot(dx, dy)
    if rho <= RHO_EPS:
        raise SingularityError("robots are coincident")
    return rho, wrap_angle(math.atan2(dy, dx) - ego.theta), wrap_angle(other.theta - ego.theta)


def relative_pose(ego: Pose2, other: Pose2) -> np.ndarray:
    """Cartesian relative pose ``(x_ji, y_ji, th_ji)`` of ``other`` in ``ego``'s frame."""
    c, s = math.cos(ego.theta), math.sin(ego.theta)
    dx, dy = other.x - ego.x, other.y - ego.y
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(other.theta - ego.theta)])


def relative_pose_arrays(ego: np.ndarray, other: np.ndarray) -> np.ndarray:
    ego = np.asarray(ego, dtype=float)
    other = np.asarray(other, dtype=float)
    c, s = np.cos(ego[..., 2]), np.sin(ego[..., 2])
    dx, dy = other[..., 0] - ego[..., 0], other[..., 1] - ego[..., 1]
    out = np.empty(np.broadcast_shapes(ego.shape, other.shape))
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = wrap(other[..., 2] - ego[..., 2])
    return out


def measure_landmark(ego: Pose2, landmark, d: float = 0.0) -> tuple[float, float]:
    """Range and bearing of a known landmark from a sensor offset ``d`` along the heading."""
    c, s = math.cos(ego.theta), math.sin(ego.theta)
    dx = landmark[0] - ego.x - d * c
    dy = landmark[1] - ego.y - d * s
    r = math.hypot(dx, dy)
    if r <= RHO_EPS:
        raise SingularityError("landmark coincides with the sensor")
    return r, wrap_angle(math.atan2(dy, dx) - ego.theta)


def landmark_model(ego: np.ndarray, landmark: np.ndarray, d: float = 0.0):
    """Vectorised landmark model: returns values (..., 2) and Jacobians (..., 2, 3)."""
    ego = np.asarray(ego, dtype=float)
    landmark = np.asarray(landmark, dtype=float)
    th = ego[..., 2]
    c, s = np.cos(th), np.sin(th)
    dx = landmark[..., 0] - ego[..., 0] - d * c
    dy = landmark[..., 1] - ego[..., 1] - d * s
    q = dx * dx + dy * dy
    r = np.sqrt(q)
    if np.any(r <= RHO_EPS):
        raise SingularityError("landmark coincides with the sensor")
    shape = np.broadcast_shapes(ego.shape[:-1], landmark.shape[:-1])
    h = np.empty(shape + (2,))
    h[..., 0] = r
    h[..., 1] = wrap(np.arctan2(dy, dx) - th)
    # d(dx)/dth = d*s, d(dy)/dth = -d*c
    H = np.zeros(shape + (2, 3))
    H[..., 0, 0] = -dx / r
    H[..., 0, 1] = -dy / r
    H[..., 0, 2] = (dx * d * s - dy * d * c) / r
    H[..., 1, 0] = dy / q
    H[..., 1, 1] = -dx / q
    H[..., 1, 2] = (dx * (-d * c) - dy * (d * s)) / q - 1.0
    return h, H


def relative_model(rel, coord: Coord, channels):
    """Predicted channel values (..., m) and Jacobians (..., m, 3) w.r.t. the relative block."""
    rel = np.asarray(rel, dtype=float)
    channels = [Channel(c) for c in channels]
    m = len(channels)
    h = np.empty(rel.shape[:-1] + (m,))
    H = np.zeros(rel.shape[:-1] + (m, 3))
    polar = Coord(coord) is Coord.POLAR
    if polar:
        _check_rho(rel[..., 0])
    else:
        x, y = rel[..., 0], rel[..., 1]
        q = x * x + y * y
        r = np.sqrt(q)
        if any(c is not Channel.ORIENTATION for c in channels):
            _check_rho(r)
    for k, ch in enumerate(channels):
        if ch is Channel.ORIENTATION:
            h[..., k] = rel[..., 2]
            H[..., k, 2] = 1.0
        elif polar:
            idx = 0 if ch is Channel.RANGE else 1
            h[..., k] = rel[..., idx]
            H[..., k, idx] = 1.0
        elif ch is Channel.RANGE:
            h[..., k] = r
            H[..., k, 0] = x / r
            H[..., k, 1] = y / r
        else:
            h[..., k] = np.arctan2(y, x)
            H[..., k, 0] = -y / q
            H[..., k, 1] = x / q
    return h, H


def channel_residual(y, h, channels) -> np.ndarray:
    """Innovation ``y - h`` with angular channels wrapped."""
    r = np.asarray(y, dtype=float) - np.asarray(h, dtype=float)
    for k, ch in enumerate(channels):
        if Channel(ch) in ANGULAR_CHANNELS:
            r[..., k] = wrap(r[..., k])
    return r


def reciprocal_relative(rho: float, beta: float, theta: float) -> tuple[float, float, float]:
    """Polar relative pose of i seen from j, given j seen from i.

    The bearing back towards i is ``pi - (theta - beta)``: the antipodal
    direction of the line of sight, re-expressed in j's heading.
    """
    if rho <= RHO_EPS:
        raise InvalidArgumentError("range must be positive")
    return rho, wrap_angle(math.pi - (theta - beta)), wrap_angle(-theta)
