"""Sliding-filter, sliding-batch and full-batch estimation over a stream."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidArgumentError
from ..models.kinematics import Case, Coord, Integrator, discrete_step
from .graph import Graph, build_graph
from .kernels import RobustKernel
from .solver import IrlsResult, SolverConfig, irls_solve, marginal_covariance


class Strategy(str, enum.Enum):
    SF = "SF"
    SB = "SB"
    FB = "FB"


@dataclass(frozen=True)
class WindowStrategy:
    kind: Strategy = Strategy.FB
    window_size: int = 10
    warmup_ticks: int = 40  # FB: first prefix of the continuation initialisation (0 = dead reckoning)

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(str(self.kind).upper().split(".")[-1]))
        if self.kind is Strategy.SF and self.window_size < 2:
            raise InvalidArgumentError("SF window_size must be >= 2")
        if self.warmup_ticks < 0:
            raise InvalidArgumentError("warmup_ticks must be >= 0")

    @classmethod
    def sf(cls, window_size: int = 10) -> WindowStrategy:
        return cls(Strategy.SF, window_size)

    @classmethod
    def sb(cls) -> WindowStrategy:
        return cls(Strategy.SB)

    @classmethod
    def fb(cls) -> WindowStrategy:
        return cls(Strategy.FB)


@dataclass
class PgoProblem:
    """Everything needed to build graphs over any window of a recorded run."""

    obs: list[dict]  # per tick: Channel -> value
    inputs: np.ndarray  # (K, p) per interval
    case: Case
    coord: Coord
    dt: float
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    process_var: np.ndarray
    meas_sigma: dict
    integrator: Integrator = Integrator.RK4

    def __post_init__(self):
        self.case, self.coord = Case(self.case), Coord(self.coord)
        if len(self.obs) != self.inputs.shape[0] + 1:
            raise InvalidArgumentError("need one input row per interval between ticks")

    @property
    def num_ticks(self) -> int:
        return len(self.obs)

    def graph(self, start: int = 0, stop: int | None = None, prior_mean=None, prior_cov=None) -> Graph:
        mean = self.prior_mean if prior_mean is None else prior_mean
        cov = self.prior_cov if prior_cov is None else prior_cov
        return build_graph(self.obs, self.inputs, self.case, self.coord, self.dt, mean, cov,
                           self.process_var, self.meas_sigma, start, stop, self.integrator)

    def dead_reckon(self, x0, start: int, stop: int) -> np.ndarray:
        """Propagate ``x0`` (the state at tick ``start``) through ticks ``[start, stop)``."""
        X = np.empty((stop - start, np.size(x0)))
        X[0] = x0
        for k in range(1, stop - start):
            X[k] = discrete_step(X[k - 1], self.inputs[start + k - 1], self.dt, self.case, self.coord,
                                 self.integrator)
        return X


@dataclass
class StreamEstimate:
    states: np.ndarray  # (T, n) emitted trajectory
    solves: int
    final: IrlsResult | None = None  # last solve (SB: the full-horizon smoother)
    info: dict = field(default_factory=dict)


PREFIX_COST_TOL = 1e-6


def _extend(problem: PgoProblem, X_prev: np.ndarray, start: int, stop: int, offset: int) -> np.ndarray:
    """Warm start for ``[start, stop)`` from a solution whose first tick was ``offset``."""
    keep = X_prev[start - offset:]
    if keep.shape[0] >= stop - start:
        return keep[: stop - start].copy()
    tail = problem.dead_reckon(keep[-1], start + keep.shape[0] - 1, stop)
    return np.vstack([keep, tail[1:]])


def _continuation_init(problem: PgoProblem, kernel: RobustKernel, solver: SolverConfig,
                       first: int) -> tuple[np.ndarray, int]:
    """Initial guess for a full-horizon solve built by solving doubling prefixes.

    Dead reckoning alone drifts without bound when the neighbour's velocities
    start unknown; each prefix solution is extended with its own estimates.
    Prefixes only seed the final solve, so they stop at a looser cost tolerance.
    """
    T = problem.num_ticks
    X = problem.prior_mean[None].copy()
    n, solves = first, 0
    loose = replace(solver, cost_tol=max(solver.cost_tol, PREFIX_COST_TOL))
    while first > 0 and n < T:
        X = irls_solve(problem.graph(0, n), kernel, loose, _extend(problem, X, 0, n, 0)).X
        solves += 1
        n *= 2
    return _extend(problem, X, 0, T, 0), solves


def estimate_stream(problem: PgoProblem, strategy: WindowStrategy, kernel: RobustKernel,
                    solver: SolverConfig) -> StreamEstimate:
    T = problem.num_ticks
    if strategy.kind is Strategy.FB:
        init, solves = _continuation_init(problem, kernel, solver, strategy.warmup_ticks)
        res = irls_solve(problem.graph(), kernel, solver, init)
        return StreamEstimate(res.X, solves + 1, res)

    out = np.empty((T, problem.prior_mean.size))
    if strategy.kind is Strategy.SB:
        X = problem.prior_mean[None].copy()
        res = None
        for k in range(T):
            init = _extend(problem, X, 0, k + 1, 0)
            res = irls_solve(problem.graph(0, k + 1), kernel, solver, init)
            X = res.X
            out[k] = X[-1]
        return StreamEstimate(out, T, res)

    W = strategy.window_size
    X, offset = problem.prior_mean[None].copy(), 0
    anchor_cov = problem.prior_cov
    res = None
    for k in range(T):
        start = max(0, k - W + 1)
        init = _extend(problem, X, start, k + 1, offset)
        # the window's first node is anchored to its latest estimate and marginal covariance
        prior = problem.prior_mean if start == 0 else init[0]
        g = problem.graph(start, k + 1, prior_mean=prior, prior_cov=anchor_cov)
        res = irls_solve(g, kernel, solver, init)
        X, offset = res.X, start
        out[k] = X[-1]
        if k + 1 >= W and k + 1 < T:
            # the next window starts one tick later
            anchor_cov = marginal_covariance(g, X, 1, res.weights)
    return StreamEstimate(out, T, res)
