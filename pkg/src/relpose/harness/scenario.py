"""Declarative two-robot scenarios, named presets and ground-truth generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidArgumentError
from ..models.kinematics import Case, Coord, cart_to_polar, convert_state, ego_input_matrix
from ..models.measurements import relative_pose_arrays
from ..models.noise import SIGMA_FLOOR, MeasurementKind, MeasurementStream, NoiseConfig
from ..se2 import Pose2, wrap


@dataclass(frozen=True)
class InputProfile:
    """Odometry schedule ``(v(t), w(t))`` of one robot.

    ``v(t) = v + v_amp sin(freq t + phase)``. If ``radius`` is set the turn
    rate follows the speed so the path keeps that curvature radius, otherwise
    ``w(t) = w + w_amp sin(freq t + phase)``. A ``schedule`` of
    ``(t_start, v, w)`` rows overrides both with a piecewise-constant profile.
    """

    v: float = 0.0
    w: float = 0.0
    v_amp: float = 0.0
    w_amp: float = 0.0
    freq: float = 0.0
    phase: float = 0.0
    radius: float | None = None
    schedule: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        vals = [self.v, self.w, self.v_amp, self.w_amp, self.freq, self.phase]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgumentError("input profile parameters must be finite")
        if self.radius is not None and not self.radius > 0:
            raise InvalidArgumentError("profile radius must be positive")
        if self.schedule is not None:
            sched = tuple(tuple(float(c) for c in row) for row in self.schedule)
            if not sched or any(len(r) != 3 for r in sched):
                raise InvalidArgumentError("schedule rows must be (t_start, v, w)")
            if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
                raise InvalidArgumentError("schedule start times must increase")
            object.__setattr__(self, "schedule", sched)

    @classmethod
    def constant(cls, v: float, w: float) -> InputProfile:
        return cls(v=v, w=w)

    def evaluate(self, t) -> np.ndarray:
        """(len(t), 2) array of ``[v, w]``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.schedule is not None:
            starts = np.array([r[0] for r in self.schedule])
            idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(starts) - 1)
            table = np.array([r[1:] for r in self.schedule])
            return table[idx]
        s = np.sin(self.freq * t + self.phase)
        v = self.v + self.v_amp * s
        w = v / self.radius if self.radius is not None else self.w + self.w_amp * s
        return np.column_stack([v, w])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("v", "w", "v_amp", "w_amp", "freq", "phase")}
        d = {k: v for k, v in d.items() if v != 0.0}
        if self.radius is not None:
            d["radius"] = self.radius
        if self.schedule is not None:
            d["schedule"] = [list(r) for r in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> InputProfile:
        d = dict(d)
        if "schedule" in d and d["schedule"] is not None:
            d["schedule"] = tuple(tuple(r) for r in d["schedule"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown input profile keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str = "ekf"  # "ekf" or "pgo"
    strategy: str = "FB"
    window: int = 10
    kernel: str = "l2"
    kernel_t: float | None = None

    def __post_init__(self):
        if self.kind not in ("ekf", "pgo"):
            raise InvalidArgumentError(f"estimator must be 'ekf' or 'pgo', got {self.kind!r}")
        if self.strategy.upper() not in ("SF", "SB", "FB"):
            raise InvalidArgumentError(f"unknown window strategy {self.strategy!r}")
        object.__setattr__(self, "strategy", self.strategy.upper())
        if self.window < 2:
            raise InvalidArgumentError("SF window must be >= 2")

    @property
    def label(self) -> str:
        if self.kind == "ekf":
            return "ekf"
        return f"pgo-{self.strategy.lower()}"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "sim-circles"
    duration: float = 60.0
    dt: float = 0.05
    ego_profile: InputProfile = field(default_factory=lambda: InputProfile.constant(0.2, 0.1))
    other_profile: InputProfile = field(default_factory=lambda: InputProfile.constant(0.4, 0.09))
    ego_init: Pose2 = field(default_factory=lambda: Pose2(0.0, -2.0, 0.0))
    other_init: Pose2 = field(default_factory=lambda: Pose2(0.0, -0.4 / 0.09, 0.0))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    outlier_ratio: float = 0.0
    case_id: int = 3
    coord: Coord = Coord.CARTESIAN
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    seed: int = 0
    init_sigma: tuple[float, float, float] = (0.3, 0.3, 0.1)
    substeps: int = 1

    def __post_init__(self):
        if not (self.duration > 0 and self.dt > 0):
            raise InvalidArgumentError("duration and dt must be positive")
        if self.case_id not in (1, 2, 3, 4):
            raise InvalidArgumentError(f"case_id must be 1..4, got {self.case_id}")
        if not 0 <= self.outlier_ratio <= 0.5:
            raise InvalidArgumentError("outlier_ratio must lie in [0, 0.5]")
        if self.substeps < 1:
            raise InvalidArgumentError("substeps must be >= 1")
        object.__setattr__(self, "coord", Coord(self.coord))

    @property
    def n_ticks(self) -> int:
        """Number of integration intervals ``K``; the run has ``K + 1`` ticks."""
        return int(round(self.duration / self.dt))

    @property
    def case(self) -> Case:
        return Case.M2 if self.case_id == 4 else Case.M1

    def with_(self, **kw) -> ScenarioConfig:
        return replace(self, **kw)


def _preset_table() -> dict[str, ScenarioConfig]:
    base = ScenarioConfig()
    return {
        # concentric circles of radius 2 m and 0.4 / 0.09 m about the origin
        "sim-circles": base,
        "hw-1": base.with_(
            name="hw-1",
            ego_profile=InputProfile.constant(0.15, 0.1),
            other_profile=InputProfile.constant(0.2, 0.1),
            ego_init=Pose2(0.0, -1.5, 0.0),
            other_init=Pose2(0.0, -2.0, 0.0),
        ),
        # time-varying speed at fixed curvature; not a published schedule
        "hw-2": base.with_(
            name="hw-2",
            ego_profile=InputProfile(v=0.2, v_amp=0.1, freq=0.2, radius=1.5),
            other_profile=InputProfile(v=0.2, v_amp=0.1, freq=0.2, phase=1.0, radius=2.0),
            ego_init=Pose2(0.0, -1.5, 0.0),
            other_init=Pose2(0.0, -2.0, 0.0),
        ),
        "hw-3": base.with_(
            name="hw-3",
            ego_profile=InputProfile.constant(0.0, 0.0),
            other_profile=InputProfile.constant(0.16, 0.2),
            ego_init=Pose2(0.0, 0.0, 0.0),
            other_init=Pose2(0.0, -0.8, 0.0),
        ),
        "hw-4": base.with_(
            name="hw-4",
            ego_profile=InputProfile(v_amp=0.1, freq=0.3),
            other_profile=InputProfile.constant(0.16, 0.2),
            ego_init=Pose2(-0.3, 0.0, 0.0),
            other_init=Pose2(0.0, -0.8, 0.0),
        ),
    }


PRESETS = _preset_table()


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].with_(**overrides)


@dataclass
class Scenario:
    """Ground truth, clean measurements and clean inputs of one scenario."""

    cfg: ScenarioConfig
    t: np.ndarray  # (K + 1,)
    ego: np.ndarray  # (K + 1, 3) absolute pose of robot i
    other: np.ndarray  # (K + 1, 3) absolute pose of robot j
    ego_u: np.ndarray  # (K, 2) held over each interval
    other_u: np.ndarray  # (K, 2)
    measurements: MeasurementStream

    @property
    def rel_cartesian(self) -> np.ndarray:
        return relative_pose_arrays(self.ego, self.other)

    def truth_states(self, coord: Coord | None = None) -> np.ndarray:
        """Augmented truth states (K + 1, n) in ``coord`` (defaults to the scenario's)."""
        coord = self.cfg.coord if coord is None else Coord(coord)
        X = np.hstack([self.ego, self.rel_cartesian])
        if self.cfg.case is Case.M2:
            vel = np.vstack([self.other_u, self.other_u[-1:]])
            X = np.hstack([X, vel])
        return convert_state(X, Coord.CARTESIAN, coord)


def _unicycle(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    return ego_input_matrix(p) @ u


def _integrate(init: Pose2, u: np.ndarray, dt: float, substeps: int) -> np.ndarray:
    """RK4 integration of a single unicycle under zero-order-held inputs."""
    K = u.shape[0]
    out = np.empty((K + 1, 3))
    out[0] = init.as_array()
    h = dt / substeps
    p = out[0].copy()
    for k in range(K):
        uk = u[k]
        for _ in range(substeps):
            k1 = _unicycle(p, uk)
            k2 = _unicycle(p + 0.5 * h * k1, uk)
            k3 = _unicycle(p + 0.5 * h * k2, uk)
            k4 = _unicycle(p + h * k3, uk)
            p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        p[2] = wrap(p[2])
        out[k + 1] = p
    return out


def channel_kinds(case_id: int) -> list[MeasurementKind]:
    kinds = {
        1: [MeasurementKind.RANGE],
        2: [MeasurementKind.BEARING],
        3: [MeasurementKind.RANGE, MeasurementKind.BEARING],
        4: [MeasurementKind.RANGE, MeasurementKind.BEARING],
    }[case_id]
    if case_id != 4:
        kinds = kinds + [MeasurementKind.ODOM_COMM]
    return kinds


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """RK4 ground truth plus clean measurement and input streams."""
    K = cfg.n_ticks
    t = np.arange(K + 1) * cfg.dt
    ego_u = cfg.ego_profile.evaluate(t[:-1])
    other_u = cfg.other_profile.evaluate(t[:-1])
    if not (np.all(np.isfinite(ego_u)) and np.all(np.isfinite(other_u))):
        raise InvalidArgumentError("input profile produced non-finite values")
    ego = _integrate(cfg.ego_init, ego_u, cfg.dt, cfg.substeps)
    other = _integrate(cfg.other_init, other_u, cfg.dt, cfg.substeps)
    polar = cart_to_polar(relative_pose_arrays(ego, other))

    cols = {k: [] for k in ("t", "kind", "value1", "value2", "sigma")}

    def add(times, kind, v1, v2=None):
        n = len(times)
        sigma = max(cfg.noise.sigma_for(kind), SIGMA_FLOOR)
        cols["t"].append(times)
        cols["kind"].append(np.full(n, kind.value, dtype=object))
        cols["value1"].append(v1)
        cols["value2"].append(np.full(n, np.nan) if v2 is None else v2)
        cols["sigma"].append(np.full(n, sigma))

    for kind in channel_kinds(cfg.case_id):
        if kind is MeasurementKind.RANGE:
            add(t, kind, polar[:, 0])
        elif kind is MeasurementKind.BEARING:
            add(t, kind, polar[:, 1])
        elif kind is MeasurementKind.ORIENTATION:
            add(t, kind, wrap(polar[:, 2]))
        else:
            add(t[:-1], kind, other_u[:, 0], other_u[:, 1])
    cat = {k: np.concatenate(v) for k, v in cols.items()}
    stream = MeasurementStream(cat["t"], cat["kind"], cat["value1"], cat["value2"], cat["sigma"]).sorted()
    return Scenario(cfg, t, ego, other, ego_u, other_u, stream)
