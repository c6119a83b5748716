"""Trajectory error metrics."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from ..se2 import wrap

COMPONENTS = ("x", "y", "theta")


def rmse(est, truth, angular=(2,), names=None) -> dict[str, float]:
    """Per-component and total RMSE of two aligned (T, m) trajectories.

    Components listed in ``angular`` are compared after wrapping. The total
    is the root of the time-mean of the summed squared errors over the first
    three components (the relative pose); extra columns (for example the
    neighbour velocities) are reported separately.
    """
    est = np.atleast_2d(np.asarray(est, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if est.shape != truth.shape:
        raise InvalidArgumentError(f"trajectory shapes differ: {est.shape} vs {truth.shape}")
    if est.shape[0] == 0:
        raise InvalidArgumentError("empty trajectories")
    err = est - truth
    for k in angular:
        err[:, k] = wrap(err[:, k])
    names = list(names) if names is not None else list(COMPONENTS) + [f"c{k}" for k in range(3, est.shape[1])]
    sq = err**2
    out = {name: float(np.sqrt(np.mean(sq[:, k]))) for k, name in enumerate(names)}
    out["total"] = float(np.sqrt(np.mean(np.sum(sq[:, :3], axis=1))))
    return out
