"""Levenberg-Marquardt and IRLS over factor graphs.

Normal equations are assembled from the whitened block Jacobians. Chain
graphs (every factor within a small node distance) are solved with a banded
Cholesky factorisation, anything else with a sparse LU.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ..errors import InvalidArgumentError, NumericFailureError, SingularityError
from ..models.kinematics import angle_indices
from ..se2 import wrap
from .graph import Graph
from .kernels import KernelKind, RobustKernel

log = logging.getLogger(__name__)

LAMBDA_MAX = 1e12
LAMBDA_MIN = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    max_outer_irls: int = 30
    max_inner_lm: int = 50
    lambda_init: float = 1e-4  # damping applied after the first rejected Gauss-Newton step
    grad_tol: float = 1e-12
    step_tol: float = 1e-10
    cost_tol: float = 1e-9  # relative
    anneal: bool = True

    def __post_init__(self):
        if self.max_outer_irls < 1 or self.max_inner_lm < 1:
            raise InvalidArgumentError("iteration limits must be >= 1")
        if min(self.grad_tol, self.step_tol, self.cost_tol) <= 0 or self.lambda_init < 0:
            raise InvalidArgumentError("tolerances must be positive")


@dataclass
class NormalEquations:
    """Normal equations over the flattened state (fixed nodes pinned to zero).

    Chain graphs keep the block-tridiagonal parts ``diag`` (N, n, n) and
    ``upper`` (N - 1, n, n); other graphs keep a sparse matrix ``H``.
    """

    g: np.ndarray  # J^T W r, flattened
    diag: np.ndarray | None = None
    upper: np.ndarray | None = None
    H: scipy.sparse.csr_matrix | None = None
    fixed_vars: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        """Dense normal matrix (for tests and small graphs)."""
        if self.H is not None:
            return self.H.toarray()
        N, n, _ = self.diag.shape
        A = np.zeros((N * n, N * n))
        for k in range(N):
            A[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.diag[k]
        for k in range(N - 1):
            A[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = self.upper[k]
            A[(k + 1) * n:(k + 2) * n, k * n:(k + 1) * n] = self.upper[k].T
        return A


def unit_weights(graph: Graph) -> list[np.ndarray]:
    return [np.ones(len(b)) for b in graph.blocks]


def _is_chain(graph: Graph) -> bool:
    for b in graph.blocks:
        if b.nodes.shape[1] > 1 and np.any(np.abs(np.diff(b.nodes, axis=1)) > 1):
            return False
    return True


def _unique_columns(b) -> list[bool]:
    """Whether each node column of a block references every node at most once (cached)."""
    cached = getattr(b, "_unique_cols", None)
    if cached is None:
        m = len(b)
        cached = [np.unique(b.nodes[:, a]).size == m for a in range(b.nodes.shape[1])]
        b._unique_cols = cached
    return cached


def _accumulate(out: np.ndarray, idx: np.ndarray, vals: np.ndarray, unique: bool) -> None:
    if unique:
        out[idx] += vals
    else:
        np.add.at(out, idx, vals)


def assemble(graph: Graph, X: np.ndarray, weights=None) -> NormalEquations:
    """``J^T W J`` and ``J^T W r`` at ``X`` for the given per-factor weights."""
    X = np.asarray(X, dtype=float)
    N, n = X.shape
    weights = unit_weights(graph) if weights is None else weights
    chain = _is_chain(graph)
    g = np.zeros((N, n))
    diag = np.zeros((N, n, n))
    upper = np.zeros((max(N - 1, 0), n, n))
    rows, cols, vals = [], [], []
    ar = np.arange(n)
    for b, w in zip(graph.blocks, weights):
        L = b.sqrt_info
        rw = (L @ b.residual(X)[..., None])[..., 0]
        Jw = L[:, None] @ b.jacobians(X)  # (m, a, d, n)
        JwT = np.swapaxes(Jw, -1, -2) * np.asarray(w, dtype=float)[:, None, None, None]
        unique = _unique_columns(b)
        a_count = b.nodes.shape[1]
        for a in range(a_count):
            ia = b.nodes[:, a]
            _accumulate(g, ia, (JwT[:, a] @ rw[..., None])[..., 0], unique[a])
            for c in range(a_count):
                ic = b.nodes[:, c]
                if chain:
                    if a == c:
                        _accumulate(diag, ia, JwT[:, a] @ Jw[:, c], unique[a])
                    else:
                        # pairs with ic = ia + 1 land in the upper band; the mirrored pair is implied
                        sel = ic == ia + 1
                        if sel.all():
                            _accumulate(upper, ia, JwT[:, a] @ Jw[:, c], unique[a])
                        elif sel.any():
                            np.add.at(upper, ia[sel], JwT[sel, a] @ Jw[sel, c])
                    continue
                blk = JwT[:, a] @ Jw[:, c]
                r_idx = ia[:, None, None] * n + ar[None, :, None]
                c_idx = ic[:, None, None] * n + ar[None, None, :]
                rows.append(np.broadcast_to(r_idx, blk.shape).ravel())
                cols.append(np.broadcast_to(c_idx, blk.shape).ravel())
                vals.append(blk.ravel())
    fixed = np.array(sorted(graph.fixed), dtype=int)
    fixed_vars = (fixed[:, None] * n + ar[None, :]).ravel()
    g = g.ravel()
    g[fixed_vars] = 0.0
    if chain:
        for k in fixed:
            diag[k] = np.eye(n)
            if k > 0:
                upper[k - 1] = 0.0
            if k < N - 1:
                upper[k] = 0.0
        return NormalEquations(g, diag=diag, upper=upper, fixed_vars=fixed_vars)
    size = N * n
    H = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tolil()
    for v in fixed_vars:
        H[v, :] = 0.0
        H[:, v] = 0.0
        H[v, v] = 1.0
    return NormalEquations(g, H=H.tocsr(), fixed_vars=fixed_vars)


_BAND_INDEX: dict[tuple[int, int], tuple] = {}


def _band_index(N: int, n: int):
    key = (N, n)
    if key not in _BAND_INDEX:
        u = 2 * n - 1
        p, q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        tri = q >= p
        k = np.arange(N)[:, None]
        d_rows = np.broadcast_to(u + p[tri] - q[tri], (N, tri.sum()))
        d_cols = k * n + q[tri][None, :]
        ko = np.arange(max(N - 1, 0))[:, None]
        o_rows = np.broadcast_to((u + p - q - n).ravel(), (max(N - 1, 0), n * n))
        o_cols = (ko + 1) * n + q.ravel()[None, :]
        _BAND_INDEX[key] = (u, tri, d_rows, d_cols, o_rows, o_cols)
        if len(_BAND_INDEX) > 4096:
            _BAND_INDEX.clear()
    return _BAND_INDEX[key]


def _damping(d: np.ndarray, lam: float) -> np.ndarray:
    floor = 1e-9 * max(float(d.max()), 1e-300)
    return lam * np.maximum(d, floor)


def _solve_damped(ne: NormalEquations, rhs: np.ndarray, lam: float) -> np.ndarray:
    if ne.H is not None:
        A = ne.H
        if lam > 0:
            A = A + scipy.sparse.diags(_damping(A.diagonal(), lam))
        with np.errstate(all="ignore"):
            x = scipy.sparse.linalg.spsolve(A.tocsc(), rhs)
        if not np.all(np.isfinite(x)):
            raise NumericFailureError("normal matrix is singular")
        return x
    N, n, _ = ne.diag.shape
    diag = ne.diag
    if lam > 0:
        diag = diag.copy()
        dd = np.einsum("kii->ki", diag)
        dd += _damping(dd.ravel(), lam).reshape(N, n)
    u, tri, d_rows, d_cols, o_rows, o_cols = _band_index(N, n)
    ab = np.zeros((u + 1, N * n))
    ab[d_rows, d_cols] = diag[:, tri]
    if N > 1:
        ab[o_rows, o_cols] = ne.upper.reshape(N - 1, n * n)
    try:
        return scipy.linalg.solveh_banded(ab, rhs, lower=False, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericFailureError("normal matrix is not positive definite") from exc


def marginal_covariance(graph: Graph, X, node: int, weights=None) -> np.ndarray:
    """Covariance block of one node under the Laplace approximation at ``X``."""
    ne = assemble(graph, X, weights)
    n = np.shape(X)[1]
    E = np.zeros((ne.g.size, n))
    E[node * n:(node + 1) * n] = np.eye(n)
    S = np.reshape(_solve_damped(ne, E, 0.0), (-1, n))[node * n:(node + 1) * n]
    return 0.5 * (S + S.T)


def retract(graph: Graph, X: np.ndarray, delta: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Xn = X + np.reshape(delta, np.shape(X))
    idx = list(angle_indices(graph.coord))
    Xn[:, idx] = wrap(Xn[:, idx])
    if graph.fixed:
        fixed = sorted(graph.fixed)
        Xn[fixed] = X[fixed]  # wrapping is not bit-exact; pinned nodes must not move at all
    return Xn


def _safe_cost(graph: Graph, X: np.ndarray, weights) -> float:
    try:
        c = graph.cost(X, weights)
    except SingularityError:
        return math.inf
    return c if math.isfinite(c) else math.inf


def lm_step(graph: Graph, X, lam: float, weights=None):
    """One damped Gauss-Newton step ``(H + lam diag H) d = -g``.

    Returns ``(delta, new_cost)`` with ``delta`` shaped like ``X`` (zero on
    fixed nodes) and the weighted cost after applying it.
    """
    X = np.asarray(X, dtype=float)
    ne = assemble(graph, X, weights)
    d = _solve_damped(ne, -ne.g, lam)
    return d.reshape(X.shape), _safe_cost(graph, retract(graph, X, d), weights)


@dataclass
class LmResult:
    X: np.ndarray
    cost: float
    iterations: int
    converged: bool


def lm_solve(graph: Graph, X0, cfg: SolverConfig, weights=None) -> LmResult:
    """Minimise the weighted quadratic cost with Levenberg-Marquardt.

    Steps start undamped (Gauss-Newton); damping is switched on only when a
    step fails to decrease the cost and relaxed back towards zero afterwards.
    """
    X = np.array(X0, dtype=float, copy=True)
    cost = _safe_cost(graph, X, weights)
    if not math.isfinite(cost):
        raise NumericFailureError("initial estimate has non-finite cost")
    lam = 0.0
    converged = False
    it = 0
    for it in range(1, cfg.max_inner_lm + 1):
        ne = assemble(graph, X, weights)
        if np.max(np.abs(ne.g)) < cfg.grad_tol:
            converged = True
            break
        while True:
            d = _solve_damped(ne, -ne.g, lam)
            Xn = retract(graph, X, d)
            new = _safe_cost(graph, Xn, weights)
            if new <= cost:
                break
            lam = max(cfg.lambda_init, LAMBDA_MIN) if lam == 0.0 else lam * 10.0
            if lam > LAMBDA_MAX:
                return LmResult(X, cost, it, True)
        small_step = np.linalg.norm(d) <= cfg.step_tol * (np.linalg.norm(X) + cfg.step_tol)
        small_drop = cost - new <= cfg.cost_tol * cost
        X, cost = Xn, new
        lam = lam / 10.0 if lam / 10.0 >= LAMBDA_MIN else 0.0
        if small_step or small_drop or cost == 0.0:
            converged = True
            break
    return LmResult(X, cost, it, converged)


# ---------------------------------------------------------------------------
# IRLS


def error_norms(graph: Graph, X) -> list[np.ndarray]:
    return [b.error_norm(X) for b in graph.blocks]


def robust_cost(graph: Graph, X, kernel: RobustKernel) -> float:
    """Sum of kernel losses on robust factors plus ``e^2 / 2`` on the rest."""
    total = 0.0
    for b, e in zip(graph.blocks, error_norms(graph, X)):
        total += float(np.sum(kernel.loss(e) if b.robust else 0.5 * e * e))
    return total


def irls_weights(graph: Graph, X, kernel: RobustKernel) -> list[np.ndarray]:
    return [kernel.weight(e) if b.robust else np.ones_like(e) for b, e in zip(graph.blocks, error_norms(graph, X))]


@dataclass
class IrlsResult:
    X: np.ndarray
    cost: float  # robust cost under the requested kernel
    weights: list[np.ndarray]
    history: list[dict] = field(default_factory=list)
    converged: bool = True
    diverged: bool = False


def _initial_scale(graph: Graph, X, kernel: RobustKernel) -> float:
    e = np.concatenate([b.error_norm(X) for b in graph.blocks if b.robust] or [np.zeros(1)])
    return max(1.0, float(np.quantile(e, 0.9)) / kernel.t)


def irls_solve(graph: Graph, kernel: RobustKernel, cfg: SolverConfig, init) -> IrlsResult:
    """Iteratively reweighted least squares with an inner LM solve.

    Non-convex kernels start from a kernel scale wide enough to cover 90 % of
    the initial residuals and halve it every outer iteration (graduated
    non-convexity). Once at the nominal scale an outer iteration is only
    accepted if the robust cost does not increase.
    """
    X = np.array(init, dtype=float, copy=True)
    if kernel.kind is KernelKind.L2:
        res = lm_solve(graph, X, cfg)
        w = unit_weights(graph)
        hist = [{"outer": 0, "scale": 1.0, "robust_cost": res.cost, "lm_iterations": res.iterations}]
        return IrlsResult(res.X, res.cost, w, hist, res.converged)

    scale = _initial_scale(graph, X, kernel) if (cfg.anneal and not kernel.convex) else 1.0
    history = []
    prev = robust_cost(graph, X, kernel) if scale == 1.0 else math.inf
    converged, diverged = False, False
    for outer in range(cfg.max_outer_irls):
        k_s = kernel.scaled(scale)
        w = irls_weights(graph, X, k_s)
        res = lm_solve(graph, X, cfg, w)
        cost = robust_cost(graph, res.X, kernel)
        history.append({"outer": outer, "scale": scale, "robust_cost": cost, "lm_iterations": res.iterations})
        if scale == 1.0 and cost > prev * (1.0 + 1e-12):
            history[-1]["rejected"] = True
            diverged = outer > 0 and cost > prev * (1.0 + cfg.cost_tol)
            converged = not diverged
            break
        drop = prev - cost
        X = res.X
        at_nominal = scale == 1.0
        prev = cost
        if at_nominal and drop <= cfg.cost_tol * max(cost, 1e-300):
            converged = True
            break
        scale = max(1.0, scale / 2.0)
    if diverged:
        log.warning("IRLS robust cost increased; returning the best iterate")
    return IrlsResult(X, prev, irls_weights(graph, X, kernel), history, converged, diverged)
