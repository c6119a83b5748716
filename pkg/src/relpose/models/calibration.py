"""Linear range/bearing calibration of UWB-style measurements.

The calibrated reading is ``raw + chi(X, Y)`` with ``chi = c0 + c1 X + c2 Y``
fitted by ordinary least squares against reference (motion-capture) values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateFitError, InvalidArgumentError
from ..se2 import wrap


@dataclass(frozen=True)
class CalibrationModel:
    a0: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    b0: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    # OLS standard errors (a0, a1, a2, b0, b1, b2); None for hand-built models
    stderr: tuple[float, ...] | None = None

    def __post_init__(self):
        if not np.all(np.isfinite([self.a0, self.a1, self.a2, self.b0, self.b1, self.b2])):
            raise InvalidArgumentError("calibration coefficients must be finite")

    @property
    def range_coeffs(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.a2])

    @property
    def bearing_coeffs(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("a0", "a1", "a2", "b0", "b1", "b2")}
        if self.stderr is not None:
            d["stderr"] = list(self.stderr)
        return d


def _regressor(positions) -> np.ndarray:
    P = np.asarray(positions, dtype=float).reshape(-1, 2)
    return np.column_stack([np.ones(len(P)), P[:, 0], P[:, 1]])


def _ols(A: np.ndarray, z: np.ndarray):
    coef, _, _, _ = np.linalg.lstsq(A, z, rcond=None)
    dof = len(z) - A.shape[1]
    resid = z - A @ coef
    if dof > 0:
        s2 = float(resid @ resid) / dof
        se = np.sqrt(np.maximum(s2 * np.diag(np.linalg.inv(A.T @ A)), 0.0))
    else:
        se = np.full(A.shape[1], np.nan)
    return coef, se


def fit_calibration(uwb, truth, positions) -> CalibrationModel:
    """Fit range and bearing offset planes from paired (rho, beta) samples.

    ``uwb`` and ``truth`` are (N, 2) arrays of (range, bearing); ``positions``
    holds the (X, Y) regressors. Bearing offsets are wrapped before fitting.
    """
    uwb = np.asarray(uwb, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    A = _regressor(positions)
    if not (len(uwb) == len(truth) == len(A)):
        raise InvalidArgumentError("uwb, truth and positions must have equal length")
    if len(A) < 3 or np.linalg.matrix_rank(A) < 3:
        raise DegenerateFitError("calibration needs at least 3 non-collinear positions")
    a, sa = _ols(A, truth[:, 0] - uwb[:, 0])
    b, sb = _ols(A, wrap(truth[:, 1] - uwb[:, 1]))
    return CalibrationModel(*a, *b, stderr=tuple(np.concatenate([sa, sb])))


def apply_calibration(model: CalibrationModel, raw, position):
    """Return calibrated ``(rho, beta)``; accepts single samples or (N, 2) arrays."""
    raw = np.asarray(raw, dtype=float)
    A = _regressor(position)
    rho = raw[..., 0] + (A @ model.range_coeffs).reshape(raw[..., 0].shape)
    beta = wrap(raw[..., 1] + (A @ model.bearing_coeffs).reshape(raw[..., 1].shape))
    if raw.ndim == 1:
        return float(rho), float(beta)
    return np.column_stack([rho, beta])
