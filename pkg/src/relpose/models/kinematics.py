"""Unicycle kinematics for the augmented ego + relative-pose state.

State layout (``n = 6`` for case M1, ``n = 8`` for case M2)::

    [x_i, y_i, th_i, r1, r2, th_ji (, v_j, w_j)]

where ``(r1, r2)`` is ``(x_ji, y_ji)`` in Cartesian coordinates or
``(rho_ji, beta_ji)`` in polar coordinates. The relative block is
control-linear in ``U = [v_i, w_i, v_j, w_j]``; the input matrices below are
the columns ``g_k`` of that representation.

The polar fields are the exact change of variables of the Cartesian ones::

    rho'  = v_j cos(psi) - v_i cos(beta)
    beta' = (v_j sin(psi) + v_i sin(beta)) / rho - w_i
    th'   = w_j - w_i,           psi = th_ji - beta
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, SingularityError
from ..se2 import Pose2, wrap

RHO_EPS = 1e-6

EGO = slice(0, 3)
REL = slice(3, 6)
VEL = slice(6, 8)


class Case(str, enum.Enum):
    M1 = "M1"  # neighbour odometry communicated, enters as input
    M2 = "M2"  # no communication, (v_j, w_j) appended to the state


class Coord(str, enum.Enum):
    CARTESIAN = "cartesian"
    POLAR = "polar"


class Integrator(str, enum.Enum):
    EULER = "euler"
    RK4 = "rk4"


def state_dim(case: Case) -> int:
    return 6 if Case(case) is Case.M1 else 8


def angle_indices(coord: Coord) -> tuple[int, ...]:
    """Indices of angular components in the augmented state."""
    return (2, 4, 5) if Coord(coord) is Coord.POLAR else (2, 5)


def _check_rho(rho):
    if np.any(np.asarray(rho) <= RHO_EPS):
        raise SingularityError(f"polar range must exceed {RHO_EPS} m")


@dataclass(frozen=True)
class OdometryInput:
    v: float
    w: float

    def __post_init__(self):
        if not (np.isfinite(self.v) and np.isfinite(self.w)):
            raise InvalidArgumentError("odometry must be finite")


@dataclass(frozen=True, eq=False)
class AugmentedState:
    """Immutable augmented state; ``vec`` holds the packed numeric layout."""

    case: Case
    coord: Coord
    vec: np.ndarray

    def __post_init__(self):
        case, coord = Case(self.case), Coord(self.coord)
        v = np.array(self.vec, dtype=float).reshape(-1)
        if v.size != state_dim(case):
            raise InvalidArgumentError(f"{case.value} state needs {state_dim(case)} entries, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("state must be finite")
        if coord is Coord.POLAR:
            _check_rho(v[3])
        idx = list(angle_indices(coord))
        v[idx] = wrap(v[idx])
        v.setflags(write=False)
        object.__setattr__(self, "case", case)
        object.__setattr__(self, "coord", coord)
        object.__setattr__(self, "vec", v)

    @classmethod
    def from_parts(cls, ego: Pose2, rel, coord=Coord.CARTESIAN, vel=None) -> AugmentedState:
        parts = [ego.as_array(), np.asarray(rel, dtype=float)]
        case = Case.M1
        if vel is not None:
            parts.append(np.asarray(vel, dtype=float))
            case = Case.M2
        return cls(case, coord, np.concatenate(parts))

    @property
    def ego(self) -> Pose2:
        return Pose2.from_array(self.vec[EGO])

    @property
    def rel(self) -> np.ndarray:
        return self.vec[REL].copy()

    @property
    def vel(self) -> np.ndarray | None:
        return self.vec[VEL].copy() if self.case is Case.M2 else None

    def with_vec(self, vec) -> AugmentedState:
        return AugmentedState(self.case, self.coord, vec)


# ---------------------------------------------------------------------------
# control-linear input matrices


def ego_input_matrix(ego: np.ndarray) -> np.ndarray:
    """(..., 3, 2) matrix mapping ``[v_i, w_i]`` to the ego pose rate."""
    ego = np.asarray(ego, dtype=float)
    G = np.zeros(ego.shape[:-1] + (3, 2))
    G[..., 0, 0] = np.cos(ego[..., 2])
    G[..., 1, 0] = np.sin(ego[..., 2])
    G[..., 2, 1] = 1.0
    return G


def rel_input_matrix(rel: np.ndarray, coord: Coord) -> np.ndarray:
    """(..., 3, 4) matrix ``[g1 g2 g3 g4]`` of the relative kinematics."""
    rel = np.asarray(rel, dtype=float)
    G = np.zeros(rel.shape[:-1] + (3, 4))
    r1, r2, th = rel[..., 0], rel[..., 1], rel[..., 2]
    if Coord(coord) is Coord.CARTESIAN:
        G[..., 0, 0] = -1.0
        G[..., 0, 1] = r2
        G[..., 1, 1] = -r1
        G[..., 2, 1] = -1.0
        G[..., 0, 2] = np.cos(th)
        G[..., 1, 2] = np.sin(th)
    else:
        _check_rho(r1)
        psi = th - r2
        G[..., 0, 0] = -np.cos(r2)
        G[..., 1, 0] = np.sin(r2) / r1
        G[..., 1, 1] = -1.0
        G[..., 2, 1] = -1.0
        G[..., 0, 2] = np.cos(psi)
        G[..., 1, 2] = np.sin(psi) / r1
    G[..., 2, 3] = 1.0
    return G


def rel_derivative(rel, U, coord: Coord) -> np.ndarray:
    """Relative-pose rate for inputs ``U = [v_i, w_i, v_j, w_j]``.

    Written out instead of ``G @ U``; this sits in the innermost integration loop.
    """
    rel = np.asarray(rel, dtype=float)
    U = np.asarray(U, dtype=float)
    r1, r2, th = rel[..., 0], rel[..., 1], rel[..., 2]
    vi, wi, vj, wj = U[..., 0], U[..., 1], U[..., 2], U[..., 3]
    if Coord(coord) is Coord.CARTESIAN:
        rates = (-vi + wi * r2 + vj * np.cos(th), -wi * r1 + vj * np.sin(th), wj - wi)
    else:
        _check_rho(r1)
        psi = th - r2
        rates = (-vi * np.cos(r2) + vj * np.cos(psi), (vi * np.sin(r2) + vj * np.sin(psi)) / r1 - wi, wj - wi)
    return np.stack(np.broadcast_arrays(*rates), axis=-1)


def rel_jacobian(rel, U, coord: Coord) -> np.ndarray:
    """(..., 3, 3) Jacobian of ``rel_derivative`` with respect to ``rel``."""
    rel = np.asarray(rel, dtype=float)
    U = np.asarray(U, dtype=float)
    vi, wi, vj = U[..., 0], U[..., 1], U[..., 2]
    shape = np.broadcast_shapes(rel.shape[:-1], U.shape[:-1])
    J = np.zeros(shape + (3, 3))
    r1, r2, th = rel[..., 0], rel[..., 1], rel[..., 2]
    if Coord(coord) is Coord.CARTESIAN:
        J[..., 0, 1] = wi
        J[..., 0, 2] = -vj * np.sin(th)
        J[..., 1, 0] = -wi
        J[..., 1, 2] = vj * np.cos(th)
    else:
        _check_rho(r1)
        psi = th - r2
        sp, cp = np.sin(psi), np.cos(psi)
        sb, cb = np.sin(r2), np.cos(r2)
        J[..., 0, 1] = vj * sp + vi * sb
        J[..., 0, 2] = -vj * sp
        J[..., 1, 0] = -(vj * sp + vi * sb) / r1**2
        J[..., 1, 1] = (-vj * cp + vi * cb) / r1
        J[..., 1, 2] = vj * cp / r1
    return J


# ---------------------------------------------------------------------------
# full augmented vector fields (array level)


def _full_inputs(X: np.ndarray, u: np.ndarray, case: Case) -> np.ndarray:
    """Return ``[v_i, w_i, v_j, w_j]`` for either case."""
    if Case(case) is Case.M1:
        if u.shape[-1] != 4:
            raise InvalidArgumentError("case M1 expects U = [v_i, w_i, v_j, w_j]")
        return u
    if u.shape[-1] != 2:
        raise InvalidArgumentError("case M2 expects u = [v_i, w_i]")
    return np.concatenate([np.broadcast_to(u, X.shape[:-1] + (2,)), X[..., VEL]], axis=-1)


def field(X, u, case: Case, coord: Coord) -> np.ndarray:
    """Augmented state derivative; velocity rows are zero for case M2."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    U = _full_inputs(X, u, case)
    out = np.zeros(np.broadcast_shapes(X.shape[:-1], U.shape[:-1]) + (X.shape[-1],))
    th_i = X[..., 2]
    out[..., 0] = U[..., 0] * np.cos(th_i)
    out[..., 1] = U[..., 0] * np.sin(th_i)
    out[..., 2] = U[..., 1]
    out[..., REL] = rel_derivative(X[..., REL], U, coord)
    return out


def field_jacobian(X, u, case: Case, coord: Coord) -> np.ndarray:
    """(..., n, n) Jacobian of ``field`` with respect to the state."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    U = _full_inputs(X, u, case)
    n = X.shape[-1]
    shape = np.broadcast_shapes(X.shape[:-1], U.shape[:-1])
    A = np.zeros(shape + (n, n))
    th_i = X[..., 2]
    A[..., 0, 2] = -U[..., 0] * np.sin(th_i)
    A[..., 1, 2] = U[..., 0] * np.cos(th_i)
    A[..., 3:6, 3:6] = rel_jacobian(X[..., REL], U, coord)
    if Case(case) is Case.M2:
        G = rel_input_matrix(X[..., REL], coord)
        A[..., 3:6, 6:8] = G[..., :, 2:4]
    return A


def _wrap_state(X: np.ndarray, coord: Coord) -> np.ndarray:
    X = np.array(X, dtype=float, copy=True)
    idx = list(angle_indices(coord))
    X[..., idx] = wrap(X[..., idx])
    return X


def euler_step(X, u, dt: float, case: Case, coord: Coord) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return _wrap_state(X + dt * field(X, u, case, coord), coord)


def rk4_step(X, u, dt: float, case: Case, coord: Coord) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    k1 = field(X, u, case, coord)
    k2 = field(X + 0.5 * dt * k1, u, case, coord)
    k3 = field(X + 0.5 * dt * k2, u, case, coord)
    k4 = field(X + dt * k3, u, case, coord)
    return _wrap_state(X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), coord)


def discrete_step(X, u, dt, case, coord, integrator=Integrator.EULER) -> np.ndarray:
    if Integrator(integrator) is Integrator.EULER:
        return euler_step(X, u, dt, case, coord)
    return rk4_step(X, u, dt, case, coord)


def step_jacobian(X, u, dt, case, coord, integrator=Integrator.EULER) -> np.ndarray:
    """Exact Jacobian of ``discrete_step`` with respect to the state."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1]
    I = np.eye(n)
    if Integrator(integrator) is Integrator.EULER:
        return I + dt * field_jacobian(X, u, case, coord)
    k1 = field(X, u, case, coord)
    k2 = field(X + 0.5 * dt * k1, u, case, coord)
    k3 = field(X + 0.5 * dt * k2, u, case, coord)
    A1 = field_jacobian(X, u, case, coord)
    A2 = field_jacobian(X + 0.5 * dt * k1, u, case, coord)
    A3 = field_jacobian(X + 0.5 * dt * k2, u, case, coord)
    A4 = field_jacobian(X + dt * k3, u, case, coord)
    D1 = A1
    D2 = A2 @ (I + 0.5 * dt * D1)
    D3 = A3 @ (I + 0.5 * dt * D2)
    D4 = A4 @ (I + dt * D3)
    return I + dt / 6.0 * (D1 + 2 * D2 + 2 * D3 + D4)


# ---------------------------------------------------------------------------
# AugmentedState-level API


def vector_field_m1(x: AugmentedState, U) -> np.ndarray:
    """State derivative for case M1 given ``U = [v_i, w_i, v_j, w_j]``."""
    if x.case is not Case.M1:
        raise InvalidArgumentError("vector_field_m1 needs a case M1 state")
    return field(x.vec, np.asarray(U, dtype=float), Case.M1, x.coord)


def vector_field_m2(x: AugmentedState, u) -> np.ndarray:
    """State derivative for case M2 given the ego odometry ``u = [v_i, w_i]``."""
    if x.case is not Case.M2:
        raise InvalidArgumentError("vector_field_m2 needs a case M2 state")
    return field(x.vec, np.asarray(u, dtype=float), Case.M2, x.coord)


def step(x: AugmentedState, u, dt: float, integrator=Integrator.EULER) -> AugmentedState:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    return x.with_vec(discrete_step(x.vec, np.asarray(u, dtype=float), dt, x.case, x.coord, integrator))


# ---------------------------------------------------------------------------
# coordinate changes


def cart_to_polar(rel) -> np.ndarray:
    rel = np.asarray(rel, dtype=float)
    rho = np.hypot(rel[..., 0], rel[..., 1])
    _check_rho(rho)
    out = np.empty_like(rel)
    out[..., 0] = rho
    out[..., 1] = np.arctan2(rel[..., 1], rel[..., 0])
    out[..., 2] = rel[..., 2]
    return out


def polar_to_cart(rel) -> np.ndarray:
    rel = np.asarray(rel, dtype=float)
    _check_rho(rel[..., 0])
    out = np.empty_like(rel)
    out[..., 0] = rel[..., 0] * np.cos(rel[..., 1])
    out[..., 1] = rel[..., 0] * np.sin(rel[..., 1])
    out[..., 2] = rel[..., 2]
    return out


def cart_to_polar_jacobian(rel) -> np.ndarray:
    """(..., 3, 3) Jacobian of ``cart_to_polar``."""
    rel = np.asarray(rel, dtype=float)
    x, y = rel[..., 0], rel[..., 1]
    r2 = x * x + y * y
    r = np.sqrt(r2)
    _check_rho(r)
    J = np.zeros(rel.shape[:-1] + (3, 3))
    J[..., 0, 0] = x / r
    J[..., 0, 1] = y / r
    J[..., 1, 0] = -y / r2
    J[..., 1, 1] = x / r2
    J[..., 2, 2] = 1.0
    return J


def convert_state(X, src: Coord, dst: Coord) -> np.ndarray:
    """Convert the relative block of packed states between coordinate systems."""
    X = np.array(X, dtype=float, copy=True)
    if Coord(src) is Coord(dst):
        return X
    if Coord(dst) is Coord.POLAR:
        X[..., REL] = cart_to_polar(X[..., REL])
    else:
        X[..., REL] = polar_to_cart(X[..., REL])
    return X
