"""Grids of independent runs: outlier ratio x kernel x seed."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..pgo.kernels import RobustKernel
from .experiment import RunResult, run_experiment
from .scenario import EstimatorSpec, ScenarioConfig

SWEEP_KERNELS = ("l2", "huber", "cauchy", "tukey", "arctan")


@dataclass
class SweepTable:
    ratios: list[float]
    kernels: list[str]
    seeds: list[int]
    runs: dict[tuple[float, str, int], RunResult] = field(default_factory=dict)

    def values(self, ratio: float, kernel: str, metric: str = "total") -> np.ndarray:
        return np.array([self.runs[(ratio, kernel, s)].rmse[metric] for s in self.seeds])

    def median(self, ratio: float, kernel: str, metric: str = "total") -> float:
        return float(np.median(self.values(ratio, kernel, metric)))

    def rows(self) -> list[dict]:
        """One row per (ratio, kernel) cell with median RMSE over seeds."""
        out = []
        for r in self.ratios:
            for k in self.kernels:
                names = self.runs[(r, k, self.seeds[0])].rmse.keys()
                out.append({
                    "ratio": r,
                    "kernel": k,
                    "seeds": list(self.seeds),
                    "rmse": {n: self.median(r, k, n) for n in names},
                    "wall_time_s": float(sum(self.runs[(r, k, s)].wall_time for s in self.seeds)),
                })
        return out


def parse_ratios(text: str) -> list[float]:
    """``"0.1,0.3"`` or an inclusive range ``"start:stop:step"``."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise InvalidArgumentError(f"ratio range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(max(n, 0))]
    return [float(p) for p in text.split(",") if p.strip()]


def _run(cfg: ScenarioConfig) -> RunResult:
    return run_experiment(cfg)


def sweep_outliers(cfg: ScenarioConfig, ratios, kernels=SWEEP_KERNELS, seeds=range(20),
                   workers: int | None = 1) -> SweepTable:
    """Run ``cfg`` over the ratio x kernel x seed grid with a robust PGO estimator.

    The window strategy and SF window size are taken from ``cfg.estimator``;
    kernels use their default thresholds. ``workers > 1`` fans the runs out
    over processes; results are keyed by cell so arrival order is irrelevant.
    """
    ratios = [float(r) for r in ratios]
    if any(not 0.0 <= r <= 0.5 for r in ratios):
        raise InvalidArgumentError("outlier ratios must lie in [0, 0.5]")
    kernels = [RobustKernel(k).kind.value for k in kernels]
    seeds = [int(s) for s in seeds]
    if not ratios or not kernels or not seeds:
        raise InvalidArgumentError("sweep needs at least one ratio, kernel and seed")
    base = cfg.estimator
    jobs = {}
    for r in ratios:
        for k in kernels:
            est = EstimatorSpec("pgo", base.strategy if base.kind == "pgo" else "FB", base.window, k)
            for s in seeds:
                jobs[(r, k, s)] = cfg.with_(outlier_ratio=r, estimator=est, seed=s)
    keys = list(jobs)
    workers = workers or os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run, [jobs[k] for k in keys]))
    else:
        results = [_run(jobs[k]) for k in keys]
    return SweepTable(ratios, kernels, seeds, dict(zip(keys, results)))
