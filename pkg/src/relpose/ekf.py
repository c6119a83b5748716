"""Decentralised EKF over the augmented ego + relative-pose state.

Cases 1-3 use the M1 state; the neighbour's communicated odometry is fed in
as part of the input ``U = [v_i, w_i, v_j, w_j]``. Case 4 has no
communication and carries ``(v_j, w_j)`` as random-walk states.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .models.kinematics import (
    REL,
    AugmentedState,
    Case,
    Coord,
    Integrator,
    angle_indices,
    discrete_step,
    state_dim,
    step_jacobian,
)
from .models.measurements import Channel, channel_residual, relative_model
from .models.noise import MeasurementKind, MeasurementStream
from .se2 import symmetrize, wrap

log = logging.getLogger(__name__)

CASE_CHANNELS = {
    1: (Channel.RANGE,),
    2: (Channel.BEARING,),
    3: (Channel.RANGE, Channel.BEARING),
    4: (Channel.RANGE, Channel.BEARING),
}

_KIND_CHANNEL = {
    MeasurementKind.RANGE.value: Channel.RANGE,
    MeasurementKind.BEARING.value: Channel.BEARING,
    MeasurementKind.ORIENTATION.value: Channel.ORIENTATION,
}


def case_model(case_id: int) -> Case:
    if case_id not in CASE_CHANNELS:
        raise InvalidArgumentError(f"case_id must be 1..4, got {case_id}")
    return Case.M2 if case_id == 4 else Case.M1


def uses_comm(case_id: int) -> bool:
    return case_model(case_id) is Case.M1


@dataclass(frozen=True, eq=False)
class EkfBelief:
    mean: AugmentedState
    cov: np.ndarray

    def __post_init__(self):
        P = np.array(self.cov, dtype=float)
        n = self.mean.vec.size
        if P.shape != (n, n):
            raise InvalidArgumentError(f"covariance must be {n}x{n}, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise NumericFailureError("covariance became non-finite")
        scale = max(1.0, float(np.max(np.abs(P))))
        if np.max(np.abs(P - P.T)) > 1e-10 * scale:
            raise InvalidArgumentError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(P)) < -1e-10 * scale:
            raise InvalidArgumentError("covariance must be positive semidefinite")
        P.setflags(write=False)
        object.__setattr__(self, "cov", P)


@dataclass
class EkfConfig:
    """Filter tuning.

    ``sigma_w`` holds per-step process variances (one per state entry) and
    ``sigma_v`` the measurement variance of each channel.
    """

    case_id: int = 3
    coord: Coord = Coord.CARTESIAN
    sigma_w: np.ndarray | None = None
    sigma_v: dict = field(default_factory=dict)
    init_mean: AugmentedState | None = None
    init_cov: np.ndarray | None = None
    dt: float = 0.05

    def __post_init__(self):
        self.coord = Coord(self.coord)
        case = case_model(self.case_id)
        n = state_dim(case)
        if self.sigma_w is None:
            self.sigma_w = default_process_var(self.case_id)
        self.sigma_w = np.asarray(self.sigma_w, dtype=float).reshape(-1)
        if self.sigma_w.size != n or np.any(self.sigma_w < 0):
            raise InvalidArgumentError(f"sigma_w must be {n} non-negative variances")
        defaults = {Channel.RANGE: 0.05**2, Channel.BEARING: 0.087**2, Channel.ORIENTATION: 0.087**2}
        sv = {Channel(k): float(v) for k, v in self.sigma_v.items()}
        self.sigma_v = {**defaults, **sv}
        if any(v <= 0 for v in self.sigma_v.values()):
            raise InvalidArgumentError("measurement variances must be positive")
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if self.init_mean is not None and (self.init_mean.case is not case or self.init_mean.coord is not self.coord):
            raise InvalidArgumentError("init_mean case/coord does not match the configuration")

    @property
    def case(self) -> Case:
        return case_model(self.case_id)

    @property
    def channels(self) -> tuple[Channel, ...]:
        return CASE_CHANNELS[self.case_id]

    def measurement_var(self, channels) -> np.ndarray:
        return np.array([self.sigma_v[Channel(c)] for c in channels])


def default_process_var(case_id: int) -> np.ndarray:
    """Per-step process variances absorbing Euler mismatch and odometry noise."""
    q = np.full(state_dim(case_model(case_id)), 1e-6)
    q[2] = q[5] = 1e-6
    if case_id == 4:
        q[6:8] = 1e-6
    return q


def measurement_model(X: np.ndarray, channels, coord: Coord):
    """Predicted channels and full-state Jacobian (m, n)."""
    X = np.asarray(X, dtype=float)
    h, H_rel = relative_model(X[REL], coord, channels)
    H = np.zeros((len(channels), X.size))
    H[:, REL] = H_rel
    return h, H


def predict(b: EkfBelief, u, dt: float, cfg: EkfConfig):
    """Euler prediction; returns the predicted belief and predicted measurement."""
    u = np.asarray(u, dtype=float).reshape(-1)
    expected = 4 if cfg.case is Case.M1 else 2
    if u.size != expected:
        raise InvalidArgumentError(f"case {cfg.case_id} expects a {expected}-vector input")
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    X = b.mean.vec
    F = step_jacobian(X, u, dt, cfg.case, cfg.coord, Integrator.EULER)
    Xn = discrete_step(X, u, dt, cfg.case, cfg.coord, Integrator.EULER)
    P = symmetrize(F @ b.cov @ F.T + np.diag(cfg.sigma_w))
    mean = b.mean.with_vec(Xn)
    h, _ = measurement_model(Xn, cfg.channels, cfg.coord)
    return EkfBelief(mean, P), h


def gain(P_pred, H, sigma_v) -> np.ndarray:
    """Kalman gain ``P H^T (H P H^T + R)^-1``; ``sigma_v`` is a variance vector or matrix."""
    P = np.asarray(P_pred, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.asarray(sigma_v, dtype=float)
    R = np.diag(R) if R.ndim == 1 else np.atleast_2d(R)
    S = H @ P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e14:
        raise NumericFailureError("innovation covariance is singular")
    return np.linalg.solve(S.T, H @ P.T).T


def correct(b: EkfBelief, y, cfg: EkfConfig, channels=None) -> EkfBelief:
    """Measurement update with wrapped angular innovations."""
    channels = cfg.channels if channels is None else tuple(Channel(c) for c in channels)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != len(channels):
        raise InvalidArgumentError(f"expected {len(channels)} measurements, got {y.size}")
    if not channels:
        return b
    X = b.mean.vec
    h, H = measurement_model(X, channels, cfg.coord)
    K = gain(b.cov, H, cfg.measurement_var(channels))
    nu = channel_residual(y, h, channels)
    Xn = X + K @ nu
    P = symmetrize((np.eye(X.size) - K @ H) @ b.cov)
    return EkfBelief(b.mean.with_vec(Xn), P)


# ---------------------------------------------------------------------------
# full runs


@dataclass
class FilterTrajectory:
    t: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    case_id: int
    coord: Coord

    def beliefs(self) -> list[EkfBelief]:
        case = case_model(self.case_id)
        return [EkfBelief(AugmentedState(case, self.coord, m), c) for m, c in zip(self.means, self.covs)]

    def to_csv(self, path) -> None:
        n = self.means.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"mean{k}" for k in range(n)] + [f"cov{k}{k}" for k in range(n)] + ["case_id"])
            for t, m, c in zip(self.t, self.means, self.covs):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in m] + [repr(float(v)) for v in np.diag(c)] + [self.case_id])

    @staticmethod
    def read_csv(path):
        """Return ``(t, means, cov_diag, case_id)`` from an exported trajectory."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = (len(header) - 2) // 2
        data = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), 1 + 2 * n)
        case_ids = {int(r[-1]) for r in body}
        return data[:, 0], data[:, 1 : 1 + n], data[:, 1 + n :], case_ids.pop() if case_ids else None


def tick_index(t, dt: float) -> np.ndarray:
    return np.rint(np.asarray(t, dtype=float) / dt).astype(int)


def assemble_inputs(ego_u: np.ndarray, stream: MeasurementStream | None, case_id: int, dt: float) -> np.ndarray:
    """Per-interval filter inputs; cases 1-3 append the communicated neighbour odometry.

    Communicated odometry sampled at tick ``k`` is held over ``[t_k, t_k+1]``;
    a missing tick keeps the last received value.
    """
    ego_u = np.asarray(ego_u, dtype=float)
    if not uses_comm(case_id):
        return ego_u
    K = ego_u.shape[0]
    comm = np.full((K, 2), np.nan)
    if stream is not None and len(stream):
        m = stream.mask(MeasurementKind.ODOM_COMM)
        idx = tick_index(stream.t[m], dt)
        ok = (idx >= 0) & (idx < K)
        comm[idx[ok], 0] = stream.value1[m][ok]
        comm[idx[ok], 1] = stream.value2[m][ok]
    last = np.zeros(2)
    for k in range(K):
        if np.isnan(comm[k, 0]):
            comm[k] = last
        last = comm[k]
    return np.hstack([ego_u, comm])


def group_measurements(stream: MeasurementStream, n_ticks: int, dt: float) -> list[dict]:
    """Sensor channels observed at each tick, keyed by ``Channel``."""
    out = [dict() for _ in range(n_ticks)]
    if stream is None:
        return out
    idx = tick_index(stream.t, dt)
    for i in range(len(stream)):
        ch = _KIND_CHANNEL.get(stream.kind[i])
        if ch is None or not 0 <= idx[i] < n_ticks:
            continue
        out[idx[i]][ch] = stream.value1[i]
    return out


def run_filter(stream: MeasurementStream | None, inputs: np.ndarray, cfg: EkfConfig) -> FilterTrajectory:
    """One prediction per tick followed by a correction with the channels present.

    ``inputs`` has one row per interval (``K`` rows for ``K + 1`` ticks), already
    assembled for the case (see ``assemble_inputs``).
    """
    if cfg.init_mean is None or cfg.init_cov is None:
        raise InvalidArgumentError("run_filter needs init_mean and init_cov")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    K = inputs.shape[0]
    meas = group_measurements(stream, K + 1, cfg.dt)
    n = cfg.init_mean.vec.size
    means = np.empty((K + 1, n))
    covs = np.empty((K + 1, n, n))

    def update(b, obs):
        chans = [c for c in cfg.channels if c in obs]
        if not chans:
            return b
        return correct(b, [obs[c] for c in chans], cfg, chans)

    b = update(EkfBelief(cfg.init_mean, symmetrize(np.asarray(cfg.init_cov, dtype=float))), meas[0])
    means[0], covs[0] = b.mean.vec, b.cov
    for k in range(K):
        b, _ = predict(b, inputs[k], cfg.dt, cfg)
        b = update(b, meas[k + 1])
        means[k + 1], covs[k + 1] = b.mean.vec, b.cov
    return FilterTrajectory(np.arange(K + 1) * cfg.dt, means, covs, cfg.case_id, cfg.coord)


# ---------------------------------------------------------------------------
# two-robot consensus


@dataclass(frozen=True)
class ConsensusConfig:
    gain_scale: float = 0.5
    iterations: int = 1

    def __post_init__(self):
        if not 0 < self.gain_scale <= 1:
            raise InvalidArgumentError("gain_scale must lie in (0, 1]")
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class RelativeBelief:
    """Polar relative pose ``(rho, beta, theta)`` with 3x3 covariance, as shared by a neighbour."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    belief: EkfBelief
    spectral_radius: float
    residual: np.ndarray


# Jacobian of the reciprocal map (rho, beta, theta) -> (rho, pi - theta + beta, -theta)
_RECIPROCAL_JAC = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.0, 0.0, -1.0]])


def reciprocal(z: np.ndarray) -> np.ndarray:
    rho, beta, theta = z
    return np.array([rho, wrap(math.pi - (theta - beta)), wrap(-theta)])


def consensus_residual(z_i: np.ndarray, z_j: np.ndarray) -> np.ndarray:
    r = reciprocal(z_i) - np.asarray(z_j, dtype=float)
    r[1:] = wrap(r[1:])
    return r


def consensus_update(b_i: EkfBelief, b_j_shared: RelativeBelief, cfg: ConsensusConfig,
                     phase: str = "predicted") -> ConsensusResult:
    """Pull i's relative estimate towards reciprocity with j's shared estimate.

    The gain is the covariance-weighted ``K = P C^T (C P C^T + P_j)^-1`` over the
    full state, scaled by ``gain_scale``. The corrected phase repeats the mean
    update ``iterations`` times with a fixed gain; the reported spectral radius
    is that of the residual iteration map ``I - s C K``.
    """
    if b_i.mean.coord is not Coord.POLAR:
        raise InvalidArgumentError("consensus needs a polar relative block")
    phase = phase.lower()
    if phase not in ("predicted", "corrected"):
        raise InvalidArgumentError("phase must be 'predicted' or 'corrected'")
    X = b_i.mean.vec.copy()
    P = np.asarray(b_i.cov)
    n = X.size
    C = np.zeros((3, n))
    C[:, REL] = _RECIPROCAL_JAC
    Pj = np.asarray(b_j_shared.cov, dtype=float)
    S = C @ P @ C.T + Pj
    try:
        K = np.linalg.solve(S.T, C @ P.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError("consensus innovation covariance is singular") from exc
    s = cfg.gain_scale
    M = np.eye(3) - s * C @ K
    radius = float(np.max(np.abs(np.linalg.eigvals(M))))
    if radius >= 1.0:
        log.warning("consensus iteration map is not contractive (spectral radius %.4f)", radius)

    steps = cfg.iterations if phase == "corrected" else 1
    zj = np.asarray(b_j_shared.mean, dtype=float)
    for _ in range(steps):
        r = consensus_residual(X[REL], zj)
        X = X - s * K @ r
        X[list(angle_indices(Coord.POLAR))] = wrap(X[list(angle_indices(Coord.POLAR))])
    A = np.eye(n) - s * K @ C
    Pn = symmetrize(A @ P @ A.T + s * s * K @ Pj @ K.T)
    return ConsensusResult(EkfBelief(b_i.mean.with_vec(X), Pn), radius, consensus_residual(X[REL], zj))
