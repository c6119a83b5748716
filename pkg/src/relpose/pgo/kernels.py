"""Robust M-estimation kernels: loss ``l(e)`` and IRLS weight ``g(e) = l'(e) / e``."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError

WEIGHT_EPS = 1e-9  # |e| floor for weights that are singular at zero


class KernelKind(str, enum.Enum):
    L2 = "l2"
    LAPLACE = "laplace"
    HUBER = "huber"
    CAUCHY = "cauchy"
    FAIR = "fair"
    GEMAN_MCCLURE = "geman-mcclure"
    WELSCH = "welsch"
    SWITCHABLE = "switchable-constraint"
    TUKEY = "tukey"
    MAX_DIST = "max-dist"
    ARCTAN = "arctan"


DEFAULT_T = {
    KernelKind.HUBER: 0.5,
    KernelKind.CAUCHY: 0.5,
    KernelKind.TUKEY: 3.0,
    KernelKind.ARCTAN: 3.0,
}

# convex losses are solved directly; the others are annealed from a wide scale
CONVEX = frozenset({KernelKind.L2, KernelKind.LAPLACE, KernelKind.HUBER, KernelKind.FAIR})

_ALIASES = {"gm": KernelKind.GEMAN_MCCLURE, "sc": KernelKind.SWITCHABLE, "maxdist": KernelKind.MAX_DIST,
            "l1": KernelKind.LAPLACE, "dcs": KernelKind.SWITCHABLE}


def parse_kind(name) -> KernelKind:
    if isinstance(name, KernelKind):
        return name
    key = str(name).strip().lower().replace("_", "-")
    if key in _ALIASES:
        return _ALIASES[key]
    try:
        return KernelKind(key)
    except ValueError:
        raise InvalidArgumentError(f"unknown kernel {name!r}") from None


@dataclass(frozen=True)
class RobustKernel:
    kind: KernelKind = KernelKind.L2
    t: float | None = None

    def __post_init__(self):
        kind = parse_kind(self.kind)
        t = DEFAULT_T.get(kind, 1.0) if self.t is None else float(self.t)
        if not (t > 0 and math.isfinite(t)):
            raise InvalidArgumentError(f"kernel parameter t must be positive, got {self.t}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "t", t)

    @property
    def convex(self) -> bool:
        return self.kind in CONVEX

    def scaled(self, s: float) -> RobustKernel:
        return RobustKernel(self.kind, self.t * s)

    def loss(self, e):
        return loss(self, e)

    def weight(self, e):
        return weight(self, e)


def loss(k: RobustKernel, e):
    """Kernel loss of a residual magnitude (scalar or array)."""
    e = np.abs(np.asarray(e, dtype=float))
    if not np.all(np.isfinite(e)):
        raise InvalidArgumentError("residual must be finite")
    t, e2 = k.t, e * e
    kind = k.kind
    if kind is KernelKind.L2:
        out = 0.5 * e2
    elif kind is KernelKind.LAPLACE:
        out = t * e
    elif kind is KernelKind.HUBER:
        out = np.where(e <= t, 0.5 * e2, t * (e - 0.5 * t))
    elif kind is KernelKind.CAUCHY:
        out = 0.5 * t * t * np.log1p(e2 / (t * t))
    elif kind is KernelKind.FAIR:
        out = t * t * (e / t - np.log1p(e / t))
    elif kind is KernelKind.GEMAN_MCCLURE:
        out = t * e2 / (2.0 * (t + e2))
    elif kind is KernelKind.WELSCH:
        out = 0.5 * t * t * (1.0 - np.exp(-e2 / (t * t)))
    elif kind is KernelKind.SWITCHABLE:
        out = np.where(e2 <= t, 0.5 * e2, 2.0 * t * e2 / (t + e2) - 0.5 * t)
    elif kind is KernelKind.TUKEY:
        inner = 1.0 - np.minimum(e2 / (t * t), 1.0)
        out = t * t / 6.0 * (1.0 - inner**3)
    elif kind is KernelKind.MAX_DIST:
        out = 0.5 * np.minimum(e2, t * t)
    else:  # arctan
        out = 0.5 * t * np.arctan(e2 / t)
    return out if out.ndim else float(out)


def weight(k: RobustKernel, e):
    """IRLS weight ``l'(e) / e``; singular kernels are evaluated at ``max(|e|, 1e-9)``."""
    e = np.abs(np.asarray(e, dtype=float))
    if not np.all(np.isfinite(e)):
        raise InvalidArgumentError("residual must be finite")
    t, e2 = k.t, e * e
    kind = k.kind
    if kind is KernelKind.L2:
        out = np.ones_like(e)
    elif kind is KernelKind.LAPLACE:
        out = t / np.maximum(e, WEIGHT_EPS)
    elif kind is KernelKind.HUBER:
        out = np.where(e <= t, 1.0, t / np.maximum(e, WEIGHT_EPS))
    elif kind is KernelKind.CAUCHY:
        out = t * t / (t * t + e2)
    elif kind is KernelKind.FAIR:
        out = t / (t + e)
    elif kind is KernelKind.GEMAN_MCCLURE:
        out = t * t / (t + e2) ** 2
    elif kind is KernelKind.WELSCH:
        out = np.exp(-e2 / (t * t))
    elif kind is KernelKind.SWITCHABLE:
        out = np.where(e2 <= t, 1.0, 4.0 * t * t / (t + e2) ** 2)
    elif kind is KernelKind.TUKEY:
        out = np.where(e <= t, (1.0 - e2 / (t * t)) ** 2, 0.0)
    elif kind is KernelKind.MAX_DIST:
        out = np.where(e <= t, 1.0, 0.0)
    else:  # arctan
        out = 1.0 / (1.0 + (e2 / t) ** 2)
    return out if out.ndim else float(out)
