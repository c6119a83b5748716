"""Lie-derivative observability codistributions for the relative-pose system.

Two independent constructions are provided: hand-derived closed forms of the
spanning covectors (``codistribution_closed_form``) and a generic engine that
builds the same covectors by nested finite differences of arbitrary fields
and measurement maps (``codistribution_numeric``). Row labels are shared so
the two can be compared entry by entry.

With communicated odometry the analysis state is the relative block
``x = (x1, x2, x3)``; without communication it is
``x = (rho, beta, theta, v_j, w_j)`` with drift field ``g0``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .models.kinematics import RHO_EPS, Coord, _check_rho, rel_input_matrix

RANK_TOL = 1e-8
LOCUS_TOL = 1e-9


class InfoStructure(str, enum.Enum):
    RANGE_ONLY_POLAR = "range-only-polar"
    RANGE_ONLY_CARTESIAN = "range-only-cartesian"
    BEARING_ONLY_POLAR = "bearing-only-polar"
    BEARING_ONLY_CARTESIAN = "bearing-only-cartesian"
    ORIENTATION_ONLY = "orientation-only"
    RANGE_BEARING_NOCOMM = "range-bearing-nocomm"

    @property
    def dim(self) -> int:
        return 5 if self is InfoStructure.RANGE_BEARING_NOCOMM else 3

    @property
    def coord(self) -> Coord:
        return Coord.CARTESIAN if self.value.endswith("cartesian") or self is InfoStructure.ORIENTATION_ONLY else Coord.POLAR


# Generic rank of the full codistribution for each structure.
EXPECTED_RANK = {
    InfoStructure.RANGE_ONLY_POLAR: 3,
    InfoStructure.RANGE_ONLY_CARTESIAN: 3,
    InfoStructure.BEARING_ONLY_POLAR: 3,
    InfoStructure.BEARING_ONLY_CARTESIAN: 3,
    InfoStructure.ORIENTATION_ONLY: 1,
    InfoStructure.RANGE_BEARING_NOCOMM: 5,
}


@dataclass
class Codistribution:
    rows: np.ndarray
    labels: list[str]
    state: np.ndarray

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if len(self.labels) != len(set(self.labels)):
            raise InvalidArgumentError("codistribution labels must be unique")
        if self.rows.shape[0] != len(self.labels):
            raise InvalidArgumentError("one label per row required")

    def row(self, label: str) -> np.ndarray:
        return self.rows[self.labels.index(label)]

    def subset(self, labels: Sequence[str]) -> Codistribution:
        return Codistribution(np.array([self.row(l) for l in labels]), list(labels), self.state)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.labels, self.rows))


@dataclass
class RankReport:
    rank: int
    singular_values: np.ndarray
    tol: float
    degenerate: bool
    locus_description: str = ""
    dim: int = 3

    @property
    def min_singular_value(self) -> float:
        sv = np.zeros(self.dim)
        sv[: min(self.dim, self.singular_values.size)] = self.singular_values[: self.dim]
        return float(sv.min())


def lie_label(measurement: int, fields: Sequence[int] = ()) -> str:
    """Row label ``∇L<order>_g<k...> h<m>``; ``fields`` lists fields innermost first."""
    if not fields:
        return f"∇L0 h{measurement}"
    return f"∇L{len(fields)}_" + "".join(f"g{k}" for k in fields) + f" h{measurement}"


# ---------------------------------------------------------------------------
# structure models (fields and measurement maps, batched over leading axis)


@dataclass
class StructureModel:
    fields: dict[int, Callable[[np.ndarray], np.ndarray]]
    measurements: dict[int, Callable[[np.ndarray], np.ndarray]]
    dim: int


def _odometry_fields(coord: Coord) -> dict[int, Callable]:
    def make(k):
        return lambda X: rel_input_matrix(X, coord)[..., :, k - 1]

    return {k: make(k) for k in (1, 2, 3, 4)}


def _nocomm_fields() -> dict[int, Callable]:
    def g0(X):
        G = rel_input_matrix(X[..., :3], Coord.POLAR)
        out = np.zeros(X.shape)
        out[..., :3] = G[..., :, 2] * X[..., 3:4] + G[..., :, 3] * X[..., 4:5]
        return out

    def gk(k):
        def g(X):
            out = np.zeros(X.shape)
            out[..., :3] = rel_input_matrix(X[..., :3], Coord.POLAR)[..., :, k - 1]
            return out

        return g

    return {0: g0, 1: gk(1), 2: gk(2)}


def _local_bearing(x0: np.ndarray | None) -> Callable:
    """``atan2(x2, x1)`` on the branch continuous around ``x0`` (no jump inside a stencil)."""
    ref = 0.0 if x0 is None else math.atan2(x0[1], x0[0])
    c, s = math.cos(ref), math.sin(ref)
    return lambda X: ref + np.arctan2(c * X[..., 1] - s * X[..., 0], c * X[..., 0] + s * X[..., 1])


def structure_model(s: InfoStructure, at=None) -> StructureModel:
    """Fields and measurement maps; ``at`` picks the branch of angular maps around a state."""
    s = InfoStructure(s)
    if s is InfoStructure.RANGE_BEARING_NOCOMM:
        meas = {1: lambda X: X[..., 0], 2: lambda X: X[..., 1]}
        return StructureModel(_nocomm_fields(), meas, 5)
    fields = _odometry_fields(s.coord)
    h = {
        InfoStructure.RANGE_ONLY_POLAR: lambda X: X[..., 0],
        InfoStructure.RANGE_ONLY_CARTESIAN: lambda X: 0.5 * (X[..., 0] ** 2 + X[..., 1] ** 2),
        InfoStructure.BEARING_ONLY_POLAR: lambda X: X[..., 1],
        InfoStructure.BEARING_ONLY_CARTESIAN: _local_bearing(None if at is None else np.asarray(at, dtype=float)),
        InfoStructure.ORIENTATION_ONLY: lambda X: X[..., 2],
    }[s]
    return StructureModel(fields, {1: h}, 3)


# ---------------------------------------------------------------------------
# closed forms


def _check_state(s: InfoStructure, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != s.dim:
        raise InvalidArgumentError(f"{s.value} needs a {s.dim}-dim state, got {x.size}")
    if s.coord is Coord.POLAR:
        _check_rho(x[0])
    elif s is not InfoStructure.ORIENTATION_ONLY and math.hypot(x[0], x[1]) <= RHO_EPS:
        _check_rho(0.0)
    return x


def codistribution_closed_form(s: InfoStructure, x) -> Codistribution:
    """Spanning covectors of the observability codistribution at ``x``."""
    s = InfoStructure(s)
    x = _check_state(s, x)
    L = lie_label
    if s is InfoStructure.RANGE_ONLY_POLAR:
        s2, s32 = math.sin(x[1]), math.sin(x[2] - x[1])
        rows = {L(1): [1, 0, 0], L(1, [1]): [0, s2, 0], L(1, [3]): [0, s32, -s32]}
    elif s is InfoStructure.RANGE_ONLY_CARTESIAN:
        c3, s3 = math.cos(x[2]), math.sin(x[2])
        rows = {
            L(1): [x[0], x[1], 0],
            L(1, [1]): [-1, 0, 0],
            L(1, [3]): [c3, s3, x[1] * c3 - x[0] * s3],
        }
    elif s is InfoStructure.BEARING_ONLY_POLAR:
        r = x[0]
        s2, c2 = math.sin(x[1]), math.cos(x[1])
        s32, c32 = math.sin(x[2] - x[1]), math.cos(x[2] - x[1])
        rows = {
            L(1): [0, 1, 0],
            L(1, [1]): [-s2 / r**2, c2 / r, 0],
            L(1, [3]): [-s32 / r**2, -c32 / r, c32 / r],
        }
    elif s is InfoStructure.BEARING_ONLY_CARTESIAN:
        x1, x2 = x[0], x[1]
        c3, s3 = math.cos(x[2]), math.sin(x[2])
        d2 = x1 * x1 + x2 * x2
        d4 = d2 * d2
        n = x1 * s3 - x2 * c3
        rows = {
            L(1): [-x2 / d2, x1 / d2, 0],
            L(1, [1]): [-2 * x1 * x2 / d4, (x1 * x1 - x2 * x2) / d4, 0],
            L(1, [3]): [s3 / d2 - 2 * x1 * n / d4, -c3 / d2 - 2 * x2 * n / d4, (x1 * c3 + x2 * s3) / d2],
        }
    elif s is InfoStructure.ORIENTATION_ONLY:
        rows = {L(1): [0, 0, 1]}
    else:
        r, b, v, w = x[0], x[1], x[3], x[4]
        sp, cp = math.sin(x[2] - b), math.cos(x[2] - b)
        sb, cb = math.sin(b), math.cos(b)
        rows = {
            L(1): [1, 0, 0, 0, 0],
            L(2): [0, 1, 0, 0, 0],
            L(1, [0]): [0, v * sp, -v * sp, cp, 0],
            L(2, [0]): [-v * sp / r**2, -v * cp / r, v * cp / r, sp / r, 0],
            L(1, [1]): [0, sb, 0, 0, 0],
            L(2, [1]): [-sb / r**2, cb / r, 0, 0, 0],
            L(1, [0, 0]): [
                -(v * sp) ** 2 / r**2,
                -2 * v * v * sp * cp / r + v * w * cp,
                2 * v * v * sp * cp / r - v * w * cp,
                2 * v * sp * sp / r - w * sp,
                -v * sp,
            ],
        }
    return Codistribution(np.array(list(rows.values()), dtype=float), list(rows), x)


# ---------------------------------------------------------------------------
# numeric engine

_STENCILS = {
    3: (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    5: (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0),
}


def _directional(phi, g, eps, stencil):
    offsets, weights = _STENCILS[stencil]

    def L(X):
        G = g(X)
        pts = X[None] + offsets[:, None, None] * eps * G[None]
        vals = phi(pts.reshape(-1, X.shape[-1])).reshape(offsets.size, X.shape[0])
        return weights @ vals / eps

    return L


def _gradient(phi, x, eps, stencil):
    offsets, weights = _STENCILS[stencil]
    n = x.size
    pts = x[None, None, :] + offsets[:, None, None] * eps * np.eye(n)[None]
    vals = phi(pts.reshape(-1, n)).reshape(offsets.size, n)
    return weights @ vals / eps


def codistribution_numeric(
    fields,
    h_list,
    x,
    max_order: int = 1,
    outer_step: float = 1e-3,
    inner_step: float = 1e-3,
    stencil: int = 5,
) -> Codistribution:
    """Finite-difference codistribution for arbitrary fields and measurements.

    ``fields`` and ``h_list`` are dicts (or sequences, indexed from 1) of
    callables acting on (B, n) arrays. Rows are produced for every ordered
    field sequence of length <= ``max_order`` and every measurement.
    """
    if not 0 <= max_order <= 2:
        raise InvalidArgumentError("max_order must be 0, 1 or 2")
    if stencil not in _STENCILS:
        raise InvalidArgumentError("stencil must be 3 or 5 points")
    fields = fields if isinstance(fields, dict) else dict(enumerate(fields, start=1))
    h_list = h_list if isinstance(h_list, dict) else dict(enumerate(h_list, start=1))
    x = np.asarray(x, dtype=float).reshape(-1)

    rows, labels = [], []
    for order in range(max_order + 1):
        for seq in itertools.product(sorted(fields), repeat=order):
            for m in sorted(h_list):
                phi = h_list[m]
                for k in seq:
                    phi = _directional(phi, fields[k], inner_step, stencil)
                with np.errstate(all="raise"):
                    try:
                        row = _gradient(phi, x, outer_step, stencil)
                    except FloatingPointError as exc:
                        raise NumericFailureError(f"non-finite Lie derivative at {x}") from exc
                if not np.all(np.isfinite(row)):
                    raise NumericFailureError(f"non-finite Lie derivative at {x}")
                rows.append(row)
                labels.append(lie_label(m, seq))
    return Codistribution(np.array(rows), labels, x)


def codistribution_for(s: InfoStructure, x, max_order: int = 2, **kw) -> Codistribution:
    """Numeric codistribution of one of the predefined information structures."""
    s = InfoStructure(s)
    x = _check_state(s, x)
    m = structure_model(s, at=x)
    return codistribution_numeric(m.fields, m.measurements, x, max_order=max_order, **kw)


# ---------------------------------------------------------------------------
# rank and degeneracy


def rank_of(c: Codistribution, tol: float = RANK_TOL) -> RankReport:
    if c.rows.size == 0:
        raise InvalidArgumentError("codistribution has no rows")
    sv = np.linalg.svd(c.rows, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > tol * smax)) if smax > 0 else 0
    dim = c.rows.shape[1]
    return RankReport(rank, sv, tol, rank < dim, dim=dim)


@dataclass(frozen=True)
class Locus:
    description: str
    test: Callable[[np.ndarray], bool]
    stated: bool = True  # False for loci found only by re-derivation


def _near_npi(a: float) -> bool:
    return abs(math.sin(a)) < LOCUS_TOL


DEGENERATE_LOCI: dict[InfoStructure, list[Locus]] = {
    InfoStructure.RANGE_ONLY_POLAR: [
        Locus("x2 = n*pi", lambda x: _near_npi(x[1])),
        Locus("x2 - x3 = n*pi", lambda x: _near_npi(x[1] - x[2])),
    ],
    InfoStructure.RANGE_ONLY_CARTESIAN: [
        Locus("x2 = 0", lambda x: abs(x[1]) < LOCUS_TOL),
        Locus("atan(x2/x1) - x3 = n*pi", lambda x: _near_npi(math.atan2(x[1], x[0]) - x[2])),
    ],
    InfoStructure.BEARING_ONLY_POLAR: [
        Locus("x2 = n*pi", lambda x: _near_npi(x[1])),
        Locus(
            "c(x2) = c(x23) = 0",
            lambda x: abs(math.cos(x[1])) < LOCUS_TOL and abs(math.cos(x[1] - x[2])) < LOCUS_TOL,
        ),
        Locus("c(x3 - x2) = 0", lambda x: abs(math.cos(x[2] - x[1])) < LOCUS_TOL, stated=False),
    ],
    InfoStructure.BEARING_ONLY_CARTESIAN: [
        Locus("x2 = 0", lambda x: abs(x[1]) < LOCUS_TOL),
        Locus("x3 = n*pi", lambda x: _near_npi(x[2])),
        Locus(
            "c(x3 - atan2(x2, x1)) = 0",
            lambda x: abs(math.cos(x[2] - math.atan2(x[1], x[0]))) < LOCUS_TOL,
            stated=False,
        ),
    ],
    InfoStructure.ORIENTATION_ONLY: [],
    InfoStructure.RANGE_BEARING_NOCOMM: [
        Locus("x4 = 0 (v_j = 0)", lambda x: abs(x[3]) < LOCUS_TOL),
        Locus("x3 - x2 = n*pi", lambda x: _near_npi(x[2] - x[1]), stated=False),
    ],
}


def loci_containing(s: InfoStructure, x) -> list[Locus]:
    x = np.asarray(x, dtype=float).reshape(-1)
    return [l for l in DEGENERATE_LOCI[InfoStructure(s)] if l.test(x)]


def degeneracy_probe(s: InfoStructure, x, tol: float = RANK_TOL) -> RankReport:
    """Rank at ``x`` together with the degenerate loci that ``x`` lies on."""
    s = InfoStructure(s)
    report = rank_of(codistribution_closed_form(s, x), tol)
    hits = loci_containing(s, x)
    if hits:
        report.locus_description = "on locus: " + "; ".join(
            l.description + ("" if l.stated else " (derived)") for l in hits
        )
    else:
        report.locus_description = "off all listed loci"
    return report


def random_state(s: InfoStructure, rng: np.random.Generator, margin: float = 0.05) -> np.ndarray:
    """Draw a state at least ``margin`` (in sine of the relevant angles) away from every locus."""
    s = InfoStructure(s)
    while True:
        rho = rng.uniform(0.5, 6.0)
        beta = rng.uniform(-math.pi, math.pi)
        theta = rng.uniform(-math.pi, math.pi)
        if s.coord is Coord.POLAR or s is InfoStructure.RANGE_BEARING_NOCOMM:
            x = [rho, beta, theta]
        else:
            x = [rho * math.cos(beta), rho * math.sin(beta), theta]
        if s is InfoStructure.RANGE_BEARING_NOCOMM:
            x += [rng.choice([-1, 1]) * rng.uniform(0.05, 1.0), rng.uniform(-0.5, 0.5)]
        angles = [beta, theta - beta, theta]
        if min(abs(math.sin(a)) for a in angles) > margin and min(abs(math.cos(a)) for a in angles) > margin:
            return np.array(x)


def sample_on_locus(s: InfoStructure, locus: Locus, rng: np.random.Generator) -> np.ndarray:
    """Draw a state that lies exactly on one of the listed loci."""
    s = InfoStructure(s)
    desc = locus.description
    for _ in range(1000):
        x = random_state(s, rng)
        n = int(rng.integers(-1, 2))
        if s.coord is Coord.POLAR or s is InfoStructure.RANGE_BEARING_NOCOMM:
            if desc == "x2 = n*pi":
                x[1] = n * math.pi
            elif desc == "x2 - x3 = n*pi":
                x[2] = x[1] - n * math.pi
            elif desc == "x3 - x2 = n*pi":
                x[2] = x[1] + n * math.pi
            elif desc == "c(x2) = c(x23) = 0":
                x[1] = rng.choice([-1, 1]) * math.pi / 2
                x[2] = x[1] + rng.choice([-1, 1]) * math.pi / 2
            elif desc == "c(x3 - x2) = 0":
                x[2] = x[1] + rng.choice([-1, 1]) * math.pi / 2
            elif desc.startswith("x4 = 0"):
                x[3] = 0.0
        else:
            rho = math.hypot(x[0], x[1])
            if desc == "x2 = 0":
                x[0], x[1] = rng.choice([-1, 1]) * rho, 0.0
            elif desc == "atan(x2/x1) - x3 = n*pi":
                x[2] = math.atan2(x[1], x[0]) - n * math.pi
            elif desc == "x3 = n*pi":
                x[2] = n * math.pi
            elif desc.startswith("c(x3 - atan2"):
                x[2] = math.atan2(x[1], x[0]) + rng.choice([-1, 1]) * math.pi / 2
        if locus.test(x):
            return x
    raise RuntimeError(f"could not sample locus {desc!r}")
