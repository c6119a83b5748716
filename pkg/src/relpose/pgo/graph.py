"""Factor graphs over augmented states, stored as vectorised factor blocks.

A block holds ``m`` factors of one kind that share a residual dimension.
Residuals are whitened by the factor's square-root information, so a
factor's cost is ``0.5 * w * |L r|^2`` with ``w`` its current IRLS weight.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..models.kinematics import (
    REL,
    Case,
    Coord,
    Integrator,
    angle_indices,
    discrete_step,
    state_dim,
    step_jacobian,
)
from ..models.measurements import ANGULAR_CHANNELS, Channel, landmark_model, relative_model
from ..se2 import wrap


class FactorKind(str, enum.Enum):
    PRIOR = "prior"
    MOTION = "motion"
    LANDMARK = "landmark"
    ROBOT_TO_ROBOT = "robot_to_robot"


def sqrt_information(info) -> np.ndarray:
    """Upper factor ``L`` with ``L^T L = info`` for (d, d) or (m, d, d) input."""
    info = np.asarray(info, dtype=float)
    if np.any(np.abs(info - np.swapaxes(info, -1, -2)) > 1e-9 * max(1.0, float(np.max(np.abs(info))))):
        raise InvalidArgumentError("information matrix must be symmetric")
    if np.any(np.linalg.eigvalsh(info) < -1e-12):
        raise InvalidArgumentError("information matrix must be positive semidefinite")
    try:
        return np.swapaxes(np.linalg.cholesky(info), -1, -2)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(info)
        return np.swapaxes(V * np.sqrt(np.clip(w, 0, None))[..., None, :], -1, -2)


@dataclass(frozen=True, eq=False)
class Factor:
    """Read-only view of one factor of a block."""

    kind: FactorKind
    nodes: tuple[int, ...]
    observed: np.ndarray
    information: np.ndarray
    robust: bool


class FactorBlock:
    kind: FactorKind
    robust: bool = False

    def __init__(self, nodes, sqrt_info, robust: bool = False):
        self.nodes = np.atleast_2d(np.asarray(nodes, dtype=int))
        m = self.nodes.shape[0]
        L = np.asarray(sqrt_info, dtype=float)
        if L.ndim == 2:
            L = np.broadcast_to(L, (m,) + L.shape)
        self.sqrt_info = L
        self.robust = robust

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[-1]

    def observed(self) -> np.ndarray:
        raise NotImplementedError

    def residual(self, X: np.ndarray) -> np.ndarray:
        """Raw residuals (m, d) given the full node array ``X`` (N, n)."""
        raise NotImplementedError

    def jacobians(self, X: np.ndarray) -> np.ndarray:
        """Residual Jacobians (m, a, d, n), one per connected node."""
        raise NotImplementedError

    def whitened(self, X: np.ndarray) -> np.ndarray:
        return (self.sqrt_info @ self.residual(X)[..., None])[..., 0]

    def error_norm(self, X: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.whitened(X), axis=1)

    def select(self, keep: np.ndarray) -> FactorBlock:
        raise NotImplementedError

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "nodes": self.nodes.tolist(), "robust": self.robust}


def _wrap_cols(r: np.ndarray, idx) -> np.ndarray:
    idx = list(idx)
    if idx:
        r[:, idx] = wrap(r[:, idx])
    return r


class PriorBlock(FactorBlock):
    kind = FactorKind.PRIOR

    def __init__(self, nodes, mean, sqrt_info, coord: Coord, robust=False):
        super().__init__(np.reshape(nodes, (-1, 1)), sqrt_info, robust)
        self.mean = np.atleast_2d(np.asarray(mean, dtype=float))
        self.coord = Coord(coord)

    def observed(self):
        return self.mean

    def residual(self, X):
        r = X[self.nodes[:, 0]] - self.mean
        return _wrap_cols(r, angle_indices(self.coord))

    def jacobians(self, X):
        n = X.shape[1]
        return np.broadcast_to(np.eye(n), (len(self), 1, n, n)).copy()

    def select(self, keep):
        return PriorBlock(self.nodes[keep, 0], self.mean[keep], self.sqrt_info[keep], self.coord, self.robust)


class MotionBlock(FactorBlock):
    """``X[k+1] - f(X[k], u_k)`` with the configured one-step integrator."""

    kind = FactorKind.MOTION

    def __init__(self, nodes, inputs, dt, case: Case, coord: Coord, sqrt_info,
                 integrator=Integrator.RK4, robust=False):
        super().__init__(nodes, sqrt_info, robust)
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.dt = float(dt)
        self.case, self.coord = Case(case), Coord(coord)
        self.integrator = Integrator(integrator)

    def observed(self):
        return self.inputs

    def residual(self, X):
        a, b = self.nodes[:, 0], self.nodes[:, 1]
        pred = discrete_step(X[a], self.inputs, self.dt, self.case, self.coord, self.integrator)
        return _wrap_cols(X[b] - pred, angle_indices(self.coord))

    def jacobians(self, X):
        a = self.nodes[:, 0]
        F = step_jacobian(X[a], self.inputs, self.dt, self.case, self.coord, self.integrator)
        n = X.shape[1]
        J = np.empty((len(self), 2, n, n))
        J[:, 0] = -F
        J[:, 1] = np.eye(n)
        return J

    def select(self, keep):
        return MotionBlock(self.nodes[keep], self.inputs[keep], self.dt, self.case, self.coord,
                           self.sqrt_info[keep], self.integrator, self.robust)


class MeasurementBlock(FactorBlock):
    """Inter-robot range / bearing / orientation channels observed at one node."""

    kind = FactorKind.ROBOT_TO_ROBOT

    def __init__(self, nodes, channels, y, coord: Coord, sqrt_info, robust=True):
        super().__init__(np.reshape(nodes, (-1, 1)), sqrt_info, robust)
        self.channels = tuple(Channel(c) for c in channels)
        self.y = np.asarray(y, dtype=float).reshape(len(self), len(self.channels))
        self.coord = Coord(coord)

    def observed(self):
        return self.y

    def residual(self, X):
        h, _ = relative_model(X[self.nodes[:, 0]][:, REL], self.coord, self.channels)
        r = self.y - h
        return _wrap_cols(r, [i for i, c in enumerate(self.channels) if c in ANGULAR_CHANNELS])

    def jacobians(self, X):
        _, H = relative_model(X[self.nodes[:, 0]][:, REL], self.coord, self.channels)
        J = np.zeros((len(self), 1, len(self.channels), X.shape[1]))
        J[:, 0, :, REL] = -H
        return J

    def select(self, keep):
        return MeasurementBlock(self.nodes[keep, 0], self.channels, self.y[keep], self.coord,
                                self.sqrt_info[keep], self.robust)

    def to_json(self):
        return {**super().to_json(), "channels": [c.value for c in self.channels]}


class LandmarkBlock(FactorBlock):
    """Range and bearing of known landmarks from the ego pose."""

    kind = FactorKind.LANDMARK

    def __init__(self, nodes, landmarks, y, sqrt_info, offset: float = 0.0, robust=True):
        super().__init__(np.reshape(nodes, (-1, 1)), sqrt_info, robust)
        self.landmarks = np.atleast_2d(np.asarray(landmarks, dtype=float))
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        self.offset = float(offset)

    def observed(self):
        return self.y

    def residual(self, X):
        h, _ = landmark_model(X[self.nodes[:, 0], :3], self.landmarks, self.offset)
        return _wrap_cols(self.y - h, [1])

    def jacobians(self, X):
        _, H = landmark_model(X[self.nodes[:, 0], :3], self.landmarks, self.offset)
        J = np.zeros((len(self), 1, 2, X.shape[1]))
        J[:, 0, :, :3] = -H
        return J

    def select(self, keep):
        return LandmarkBlock(self.nodes[keep, 0], self.landmarks[keep], self.y[keep],
                             self.sqrt_info[keep], self.offset, self.robust)


@dataclass
class Graph:
    num_nodes: int
    case: Case
    coord: Coord
    blocks: list[FactorBlock] = field(default_factory=list)
    fixed: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.case, self.coord = Case(self.case), Coord(self.coord)
        if self.num_nodes < 1:
            raise InvalidArgumentError("graph needs at least one node")

    @property
    def node_dim(self) -> int:
        return state_dim(self.case)

    def add(self, block: FactorBlock) -> None:
        if len(block) == 0:
            return
        if block.nodes.min() < 0 or block.nodes.max() >= self.num_nodes:
            raise InvalidArgumentError("factor references a node outside the graph")
        self.blocks.append(block)

    def validate(self) -> None:
        has_prior = any(b.kind is FactorKind.PRIOR for b in self.blocks)
        if not has_prior and not self.fixed:
            raise InvalidArgumentError("graph has no prior factor or fixed node (gauge is free)")

    @property
    def factors(self) -> list[Factor]:
        out = []
        for b in self.blocks:
            obs = b.observed()
            info = np.einsum("mji,mjk->mik", b.sqrt_info, b.sqrt_info)
            for i in range(len(b)):
                out.append(Factor(b.kind, tuple(int(v) for v in b.nodes[i]), obs[i], info[i], b.robust))
        return out

    def count(self, kind: FactorKind) -> int:
        return sum(len(b) for b in self.blocks if b.kind is FactorKind(kind))

    def without(self, kind: FactorKind) -> Graph:
        return Graph(self.num_nodes, self.case, self.coord,
                     [b for b in self.blocks if b.kind is not FactorKind(kind)], set(self.fixed))

    def cost(self, X, weights=None) -> float:
        """Weighted quadratic cost ``0.5 * sum w |L r|^2``."""
        X = np.asarray(X, dtype=float)
        total = 0.0
        for i, b in enumerate(self.blocks):
            e2 = np.sum(b.whitened(X) ** 2, axis=1)
            w = 1.0 if weights is None else weights[i]
            total += 0.5 * float(np.sum(w * e2))
        return total

    def to_json(self, X=None, history=None) -> str:
        doc = {
            "num_nodes": self.num_nodes,
            "case": self.case.value,
            "coord": self.coord.value,
            "fixed": sorted(self.fixed),
            "factors": [b.to_json() for b in self.blocks],
        }
        if X is not None:
            X = np.asarray(X, dtype=float)
            doc["nodes"] = X.tolist()
            doc["residuals"] = [b.residual(X).tolist() for b in self.blocks]
        if history is not None:
            doc["iterations"] = history
        return json.dumps(doc)


def _channel_sets(obs: list[dict]) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = {}
    for k, o in enumerate(obs):
        if o:
            key = tuple(c for c in (Channel.RANGE, Channel.BEARING, Channel.ORIENTATION) if c in o)
            groups.setdefault(key, []).append(k)
    return groups


def build_graph(obs: list[dict], inputs: np.ndarray, case: Case, coord: Coord, dt: float,
                prior_mean, prior_cov, process_var, meas_sigma: dict,
                start: int = 0, stop: int | None = None,
                integrator=Integrator.RK4, robust_motion: bool = False) -> Graph:
    """Graph over ticks ``[start, stop)``.

    ``obs[k]`` maps channels to values observed at tick ``k``; ``inputs[k]``
    drives the interval ``[k, k+1]``. One quadratic prior is placed on the
    first node of the window.
    """
    stop = len(obs) if stop is None else stop
    if not 0 <= start < stop <= len(obs):
        raise InvalidArgumentError(f"empty or invalid window [{start}, {stop})")
    T = stop - start
    case, coord = Case(case), Coord(coord)
    n = state_dim(case)
    g = Graph(T, case, coord)

    prior_mean = np.asarray(prior_mean, dtype=float).reshape(n)
    g.add(PriorBlock([0], prior_mean[None], sqrt_information(np.linalg.inv(prior_cov)), coord))

    if T > 1:
        Lq = np.diag(1.0 / np.sqrt(np.asarray(process_var, dtype=float)))
        nodes = np.column_stack([np.arange(T - 1), np.arange(1, T)])
        g.add(MotionBlock(nodes, inputs[start:stop - 1], dt, case, coord, Lq, integrator, robust_motion))

    for chans, ks in _channel_sets(obs[start:stop]).items():
        y = np.array([[obs[start + k][c] for c in chans] for k in ks])
        L = np.diag([1.0 / meas_sigma[c] for c in chans])
        g.add(MeasurementBlock(ks, chans, y, coord, L))
    g.validate()
    return g
