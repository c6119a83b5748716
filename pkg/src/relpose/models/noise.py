"""Measurement streams, Gaussian noise injection and IQR outlier injection."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import InvalidArgumentError
from ..se2 import wrap

SIGMA_FLOOR = 1e-6


class MeasurementKind(str, enum.Enum):
    RANGE = "range"
    BEARING = "bearing"
    ORIENTATION = "orientation"
    ODOM_COMM = "odom_comm"


ANGULAR_KINDS = (MeasurementKind.BEARING, MeasurementKind.ORIENTATION)
SENSOR_KINDS = (MeasurementKind.RANGE, MeasurementKind.BEARING, MeasurementKind.ORIENTATION)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise standard deviations; defaults follow the UWB sensor datasheet (5 cm, 5 deg)."""

    sigma_range: float = 0.05
    sigma_bearing: float = 0.087
    sigma_orientation: float = 0.087
    sigma_v: float = 0.01
    sigma_w: float = 0.01
    sigma_process: tuple[float, ...] = (1e-3,) * 8
    seed: int = 0

    def __post_init__(self):
        sig = [self.sigma_range, self.sigma_bearing, self.sigma_orientation, self.sigma_v, self.sigma_w]
        sig += list(self.sigma_process)
        if any(not (s >= 0 and math.isfinite(s)) for s in sig):
            raise InvalidArgumentError("noise sigmas must be finite and non-negative")
        object.__setattr__(self, "sigma_process", tuple(float(s) for s in self.sigma_process))

    def sigma_for(self, kind: MeasurementKind) -> float:
        return {
            MeasurementKind.RANGE: self.sigma_range,
            MeasurementKind.BEARING: self.sigma_bearing,
            MeasurementKind.ORIENTATION: self.sigma_orientation,
            MeasurementKind.ODOM_COMM: self.sigma_v,
        }[MeasurementKind(kind)]

    @classmethod
    def zero(cls, seed: int = 0) -> NoiseConfig:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, (0.0,) * 8, seed)


@dataclass(frozen=True)
class MeasurementSample:
    t: float
    kind: MeasurementKind
    value: float | tuple[float, float]
    sigma: float
    is_outlier: bool = False

    def __post_init__(self):
        kind = MeasurementKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not self.sigma > 0:
            raise InvalidArgumentError("sample sigma must be positive")
        pair = isinstance(self.value, (tuple, list, np.ndarray))
        if pair != (kind is MeasurementKind.ODOM_COMM):
            raise InvalidArgumentError(f"value arity does not match kind {kind.value}")
        if pair:
            object.__setattr__(self, "value", (float(self.value[0]), float(self.value[1])))


@dataclass
class MeasurementStream:
    """Columnar measurement stream; ``value2`` is NaN for scalar kinds."""

    t: np.ndarray
    kind: np.ndarray
    value1: np.ndarray
    value2: np.ndarray
    sigma: np.ndarray
    is_outlier: np.ndarray = field(default=None)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = self.t.size
        self.kind = np.asarray([MeasurementKind(k).value for k in self.kind], dtype=object).reshape(n)
        self.value1 = np.asarray(self.value1, dtype=float).reshape(n)
        self.value2 = np.asarray(self.value2, dtype=float).reshape(n)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(n)
        if self.is_outlier is None:
            self.is_outlier = np.zeros(n, dtype=bool)
        self.is_outlier = np.asarray(self.is_outlier, dtype=bool).reshape(n)
        if np.any(self.sigma <= 0):
            raise InvalidArgumentError("sample sigma must be positive")

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[MeasurementSample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> MeasurementSample:
        kind = MeasurementKind(self.kind[i])
        value = (self.value1[i], self.value2[i]) if kind is MeasurementKind.ODOM_COMM else self.value1[i]
        return MeasurementSample(self.t[i], kind, value, self.sigma[i], bool(self.is_outlier[i]))

    @classmethod
    def from_samples(cls, samples: Iterable[MeasurementSample]) -> MeasurementStream:
        samples = list(samples)
        v1, v2 = [], []
        for s in samples:
            if s.kind is MeasurementKind.ODOM_COMM:
                v1.append(s.value[0])
                v2.append(s.value[1])
            else:
                v1.append(s.value)
                v2.append(np.nan)
        return cls(
            [s.t for s in samples],
            [s.kind for s in samples],
            v1,
            v2,
            [s.sigma for s in samples],
            [s.is_outlier for s in samples],
        )

    @classmethod
    def empty(cls) -> MeasurementStream:
        return cls([], [], [], [], [], [])

    def copy(self) -> MeasurementStream:
        return MeasurementStream(
            self.t.copy(), self.kind.copy(), self.value1.copy(), self.value2.copy(),
            self.sigma.copy(), self.is_outlier.copy(),
        )

    def mask(self, kind: MeasurementKind) -> np.ndarray:
        return self.kind == MeasurementKind(kind).value

    def select(self, keep: np.ndarray) -> MeasurementStream:
        return MeasurementStream(
            self.t[keep], self.kind[keep], self.value1[keep], self.value2[keep],
            self.sigma[keep], self.is_outlier[keep],
        )

    @staticmethod
    def concat(streams: Iterable[MeasurementStream]) -> MeasurementStream:
        streams = list(streams)
        if not streams:
            return MeasurementStream.empty()
        cat = lambda name: np.concatenate([getattr(s, name) for s in streams])
        return MeasurementStream(
            cat("t"), cat("kind"), cat("value1"), cat("value2"), cat("sigma"), cat("is_outlier")
        )

    def sorted(self) -> MeasurementStream:
        order = np.argsort(self.t, kind="stable")
        return self.select(order)

    # -- CSV ---------------------------------------------------------------

    COLUMNS = ("t", "kind", "value1", "value2", "sigma", "is_outlier")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for i in range(len(self)):
                v2 = "" if np.isnan(self.value2[i]) else repr(float(self.value2[i]))
                w.writerow([
                    repr(float(self.t[i])), self.kind[i], repr(float(self.value1[i])), v2,
                    repr(float(self.sigma[i])), int(self.is_outlier[i]),
                ])

    @classmethod
    def from_csv(cls, path) -> MeasurementStream:
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [float(r["t"]) for r in rows],
            [r["kind"] for r in rows],
            [float(r["value1"]) for r in rows],
            [float(r["value2"]) if r["value2"] else np.nan for r in rows],
            [float(r["sigma"]) for r in rows],
            [bool(int(r["is_outlier"])) for r in rows],
        )


def _as_stream(stream) -> MeasurementStream:
    if isinstance(stream, MeasurementStream):
        return stream.copy()
    return MeasurementStream.from_samples(stream)


def inject_noise(stream, cfg: NoiseConfig, rng: np.random.Generator | None = None) -> MeasurementStream:
    """Add i.i.d. zero-mean Gaussian noise with the per-kind sigma of ``cfg``.

    Angular kinds are re-wrapped. A generator may be passed to share one
    random stream across several calls; otherwise ``cfg.seed`` is used.
    """
    out = _as_stream(stream)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = len(out)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    for kind in MeasurementKind:
        m = out.mask(kind)
        if not m.any():
            continue
        s = cfg.sigma_for(kind)
        if s > 0:
            out.value1[m] += s * z1[m]
            if kind in ANGULAR_KINDS:
                out.value1[m] = wrap(out.value1[m])
        if kind is MeasurementKind.ODOM_COMM and cfg.sigma_w > 0:
            out.value2[m] += cfg.sigma_w * z2[m]
    return out


def iqr_bands(values: np.ndarray, inner: float = 1.5, outer: float = 3.0):
    """Lower and upper Tukey-fence outlier bands of an empirical distribution."""
    q1, q3 = np.percentile(values, [25, 75])
    iqr = q3 - q1
    return (q1 - outer * iqr, q1 - inner * iqr), (q3 + inner * iqr, q3 + outer * iqr)


def inject_outliers(stream, ratio: float, seed: int = 0, kinds=SENSOR_KINDS,
                    rng: np.random.Generator | None = None) -> MeasurementStream:
    """Replace ``round(ratio * N)`` eligible samples by IQR-band outliers.

    ``N`` counts the samples whose kind is in ``kinds``; the selection is
    uniform without replacement. Each replacement value is drawn uniformly
    from ``[Q1 - 3 IQR, Q1 - 1.5 IQR] U [Q3 + 1.5 IQR, Q3 + 3 IQR]`` of the
    clean values of its own kind, and is deliberately left unwrapped.
    """
    if not (0.0 <= ratio <= 0.5) or not math.isfinite(ratio):
        raise InvalidArgumentError(f"outlier ratio must lie in [0, 0.5], got {ratio}")
    out = _as_stream(stream)
    kinds = {MeasurementKind(k).value for k in kinds}
    eligible = np.flatnonzero([k in kinds for k in out.kind])
    count = int(round(ratio * eligible.size))
    if count == 0:
        return out
    rng = np.random.default_rng(seed) if rng is None else rng
    chosen = rng.choice(eligible, size=count, replace=False)
    u = 1.0 - rng.random(count)  # (0, 1]: strictly beyond the inner fence
    upper = rng.random(count) < 0.5
    clean = out.value1.copy()
    for kind in kinds:
        kmask = out.kind[chosen] == kind
        if not kmask.any():
            continue
        (lo_a, lo_b), (hi_a, hi_b) = iqr_bands(clean[out.kind == kind])
        idx = chosen[kmask]
        uk = u[kmask]
        vals = np.where(upper[kmask], hi_a + uk * (hi_b - hi_a), lo_b - uk * (lo_b - lo_a))
        out.value1[idx] = vals
    out.is_outlier[chosen] = True
    return out
