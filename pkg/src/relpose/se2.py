"""SE(2) pose algebra and first-order uncertainty propagation.

Poses are immutable ``Pose2`` values with the heading wrapped to (-pi, pi].
Covariances are plain 3x3 numpy arrays ordered (x, y, theta); the heading
variance lives in the tangent space and is never wrapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap a finite angle to (-pi, pi]."""
    a = float(a)
    if not math.isfinite(a):
        raise InvalidArgumentError(f"angle must be finite, got {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap(a):
    """Vectorised ``wrap_angle`` for numpy arrays (no finiteness check)."""
    r = np.remainder(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(r <= -math.pi, r + TWO_PI, r)


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidArgumentError("pose components must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_array(cls, v) -> Pose2:
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


IDENTITY = Pose2()


def _check_cov(cov) -> np.ndarray:
    c = np.array(cov, dtype=float)
    if c.shape != (3, 3):
        raise InvalidArgumentError(f"covariance must be 3x3, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidArgumentError("covariance must be finite")
    scale = max(1.0, float(np.max(np.abs(c))))
    if np.max(np.abs(c - c.T)) > 1e-12 * scale:
        raise InvalidArgumentError("covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(c)) < -1e-10 * scale:
        raise InvalidArgumentError("covariance must be positive semidefinite")
    return c


@dataclass(frozen=True)
class GaussianPose:
    mean: Pose2
    cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        c = _check_cov(self.cov)
        c.setflags(write=False)
        object.__setattr__(self, "cov", c)


def symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Head-to-tail composition ``a (+) b``: ``b`` expressed in the frame of ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def inverse(t: Pose2) -> Pose2:
    c, s = math.cos(t.theta), math.sin(t.theta)
    return Pose2(-c * t.x - s * t.y, s * t.x - c * t.y, -t.theta)


def jac_compose(a: Pose2, b: Pose2) -> np.ndarray:
    """Jacobian of ``compose(a, b)`` with respect to ``(a, b)``, shape (3, 6)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx = c * b.x - s * b.y
    dy = s * b.x + c * b.y
    return np.array(
        [
            [1.0, 0.0, -dy, c, -s, 0.0],
            [0.0, 1.0, dx, s, c, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        ]
    )


def jac_inverse(t: Pose2) -> np.ndarray:
    """Jacobian of ``inverse(t)`` with respect to ``t``, shape (3, 3)."""
    c, s = math.cos(t.theta), math.sin(t.theta)
    xi = -c * t.x - s * t.y
    yi = s * t.x - c * t.y
    return np.array(
        [
            [-c, -s, yi],
            [s, -c, -xi],
            [0.0, 0.0, -1.0],
        ]
    )


def propagate_compound(a: GaussianPose, b: GaussianPose) -> GaussianPose:
    """Mean and linearised covariance of ``a (+) b`` for independent inputs."""
    J = jac_compose(a.mean, b.mean)
    joint = np.zeros((6, 6))
    joint[:3, :3] = a.cov
    joint[3:, 3:] = b.cov
    return GaussianPose(compose(a.mean, b.mean), symmetrize(J @ joint @ J.T))


def ddf_transform(rel: GaussianPose, ego: GaussianPose, target: GaussianPose) -> GaussianPose:
    """Re-express a target estimate held by robot i in robot j's frame.

    ``rel`` is the pose of j relative to i, ``ego`` the absolute pose of i and
    ``target`` the target pose in i's local frame. Returns
    ``inverse(rel) (+) (ego (+) target)`` with the covariance propagated through
    the two-stage Jacobian sandwich.
    """
    tilde = propagate_compound(ego, target)
    inv_mean = inverse(rel.mean)
    J_inv = jac_inverse(rel.mean)
    J_plus = jac_compose(inv_mean, tilde.mean)

    joint = np.zeros((6, 6))
    joint[:3, :3] = rel.cov
    joint[3:, 3:] = tilde.cov
    G = np.zeros((6, 6))
    G[:3, :3] = J_inv
    G[3:, 3:] = np.eye(3)
    M = J_plus @ G
    return GaussianPose(compose(inv_mean, tilde.mean), symmetrize(M @ joint @ M.T))


# -- array helpers used by the samplers and tests ---------------------------


def compose_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``compose`` on (..., 3) arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    out[..., 1] = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    out[..., 2] = wrap(a[..., 2] + b[..., 2])
    return out


def inverse_arrays(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t[..., 2]), np.sin(t[..., 2])
    out = np.empty_like(t)
    out[..., 0] = -c * t[..., 0] - s * t[..., 1]
    out[..., 1] = s * t[..., 0] - c * t[..., 1]
    out[..., 2] = wrap(-t[..., 2])
    return out
