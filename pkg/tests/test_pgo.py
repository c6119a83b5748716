import math

import numpy as np
import pytest

from relpose.errors import InvalidArgumentError
from relpose.harness.experiment import corrupt, pgo_problem
from relpose.harness.scenario import EstimatorSpec, generate_scenario, preset
from relpose.models.kinematics import Case, Coord, Integrator, angle_indices, convert_state, state_dim
from relpose.models.measurements import Channel
from relpose.models.noise import NoiseConfig
from relpose.pgo.graph import (
    FactorKind,
    Graph,
    LandmarkBlock,
    MeasurementBlock,
    MotionBlock,
    PriorBlock,
    build_graph,
    sqrt_information,
)
from relpose.pgo.kernels import RobustKernel
from relpose.pgo.solver import (
    SolverConfig,
    _solve_damped,
    assemble,
    irls_solve,
    lm_solve,
    lm_step,
    marginal_covariance,
    robust_cost,
)
from relpose.pgo.windows import WindowStrategy, estimate_stream
from conftest import num_jacobian, rel_err

COORDS = [Coord.CARTESIAN, Coord.POLAR]


def _nodes(rng, N, case, coord):
    X = np.empty((N, state_dim(case)))
    for k in range(N):
        b = rng.uniform(-3, 3)
        r = rng.uniform(0.5, 4)
        rel = [r, b, rng.uniform(-3, 3)] if coord is Coord.POLAR else [r * math.cos(b), r * math.sin(b), rng.uniform(-3, 3)]
        row = [*rng.uniform(-2, 2, 2), rng.uniform(-3, 3), *rel]
        if case is Case.M2:
            row += list(rng.uniform(-0.5, 0.5, 2))
        X[k] = row
    return X


def _block_fd_check(block, X, angular):
    J = block.jacobians(X)
    for a in range(block.nodes.shape[1]):
        for i in range(len(block)):
            node = block.nodes[i, a]

            def f(z, i=i, node=node):
                Xp = X.copy()
                Xp[node] = z
                return block.residual(Xp)[i]

            Jn = num_jacobian(f, X[node], angular_out=angular)
            assert rel_err(J[i, a], Jn) < 1e-5


@pytest.mark.parametrize("coord", COORDS, ids=lambda c: c.value)
@pytest.mark.parametrize("case", list(Case), ids=lambda c: c.value)
def test_factor_jacobians(case, coord, rng):
    n = state_dim(case)
    N = 20
    X = _nodes(rng, N, case, coord)
    ang = angle_indices(coord)
    prior = PriorBlock(np.arange(N), _nodes(rng, N, case, coord), np.eye(n), coord)
    _block_fd_check(prior, X, ang)
    p = 4 if case is Case.M1 else 2
    for integ in Integrator:
        nodes = np.column_stack([np.arange(N - 1), np.arange(1, N)])
        motion = MotionBlock(nodes, rng.uniform(-0.5, 0.5, (N - 1, p)), 0.05, case, coord, np.eye(n), integ)
        _block_fd_check(motion, X, ang)
    chans = (Channel.RANGE, Channel.BEARING, Channel.ORIENTATION)
    meas = MeasurementBlock(np.arange(N), chans, rng.uniform(-1, 1, (N, 3)), coord, np.eye(3))
    _block_fd_check(meas, X, (1, 2))
    lm = LandmarkBlock(np.arange(N), rng.uniform(4, 6, (N, 2)), rng.uniform(-1, 1, (N, 2)), np.eye(2), 0.1)
    _block_fd_check(lm, X, (1,))


def test_sqrt_information():
    info = np.array([[4.0, 1.0], [1.0, 3.0]])
    L = sqrt_information(info)
    np.testing.assert_allclose(L.T @ L, info)
    Ls = sqrt_information(np.diag([1.0, 0.0]))  # semidefinite falls back to eigh
    np.testing.assert_allclose(Ls.T @ Ls, np.diag([1.0, 0.0]), atol=1e-15)
    with pytest.raises(InvalidArgumentError):
        sqrt_information(np.array([[1.0, 2.0], [0.0, 1.0]]))


def _problem(case_id=3, duration=5.0, seed=0, **kw):
    cfg = preset("sim-circles", case_id=case_id, duration=duration, seed=seed, **kw)
    sc = generate_scenario(cfg)
    return cfg, sc, pgo_problem(cfg, corrupt(sc))


def test_build_graph_factor_counts():
    cfg, sc, prob = _problem(3)
    T = prob.num_ticks
    g = prob.graph()
    assert g.num_nodes == T
    assert g.count(FactorKind.PRIOR) == 1
    assert g.count(FactorKind.MOTION) == T - 1
    n_meas = sum(1 for o in prob.obs if o)
    assert g.count(FactorKind.ROBOT_TO_ROBOT) == n_meas
    w = prob.graph(10, 30)
    assert w.num_nodes == 20 and w.count(FactorKind.MOTION) == 19
    assert len(g.factors) == sum(len(b) for b in g.blocks)
    assert g.without(FactorKind.ROBOT_TO_ROBOT).count(FactorKind.ROBOT_TO_ROBOT) == 0
    with pytest.raises(InvalidArgumentError):
        prob.graph(5, 5)


def test_graph_needs_gauge():
    g = Graph(3, Case.M1, Coord.CARTESIAN)
    with pytest.raises(InvalidArgumentError):
        g.validate()
    g.fixed.add(0)
    g.validate()
    with pytest.raises(InvalidArgumentError):
        g.add(PriorBlock([5], np.zeros((1, 6)), np.eye(6), Coord.CARTESIAN))


def _dense_reference(graph, X, weights=None):
    N, n = X.shape
    H = np.zeros((N * n, N * n))
    gv = np.zeros(N * n)
    for bi, b in enumerate(graph.blocks):
        r = b.whitened(X)
        J = b.sqrt_info[:, None] @ b.jacobians(X)
        w = np.ones(len(b)) if weights is None else weights[bi]
        for i in range(len(b)):
            for a, ia in enumerate(b.nodes[i]):
                gv[ia * n:(ia + 1) * n] += w[i] * J[i, a].T @ r[i]
                for c, ic in enumerate(b.nodes[i]):
                    H[ia * n:(ia + 1) * n, ic * n:(ic + 1) * n] += w[i] * J[i, a].T @ J[i, c]
    return H, gv


def test_assembly_matches_dense_reference(rng):
    _, sc, prob = _problem(3, 2.0)
    g = prob.graph()
    X = sc.truth_states(Coord.CARTESIAN) + 0.01 * rng.standard_normal((g.num_nodes, 6))
    w = [rng.uniform(0.1, 1.0, len(b)) for b in g.blocks]
    ne = assemble(g, X, w)
    H, gv = _dense_reference(g, X, w)
    np.testing.assert_allclose(ne.matrix(), H, rtol=1e-10, atol=1e-8 * np.abs(H).max())
    np.testing.assert_allclose(ne.g, gv, rtol=1e-10, atol=1e-10 * np.abs(gv).max())


def test_banded_and_sparse_paths_agree(rng):
    _, sc, prob = _problem(4, 2.0)
    g = prob.graph()
    X = sc.truth_states(Coord.CARTESIAN) + 0.01 * rng.standard_normal((g.num_nodes, 8))
    chain = assemble(g, X)
    # a loop-closure style prior on a pair of distant nodes forces the sparse path
    g2 = Graph(g.num_nodes, g.case, g.coord, list(g.blocks))
    n = 8
    tiny = MotionBlock([[0, 5]], np.zeros((1, 2)), 0.0, g.case, g.coord, 1e-9 * np.eye(n))
    g2.add(tiny)
    sparse = assemble(g2, X)
    assert chain.H is None and sparse.H is not None
    rhs = rng.standard_normal(chain.g.size)
    for lam in (0.0, 1e-3):
        d_chain = _solve_damped(chain, rhs, lam)
        d_sparse = _solve_damped(sparse, rhs, lam)
        A = chain.matrix()
        if lam:
            A = A + lam * np.diag(np.diag(A))
        np.testing.assert_allclose(d_chain, np.linalg.solve(A, rhs), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(d_sparse, d_chain, rtol=1e-5, atol=1e-7)


def test_fixed_nodes_do_not_move(rng):
    _, sc, prob = _problem(3, 1.0)
    g = prob.graph()
    g.fixed.update({0, 3})
    X = sc.truth_states(Coord.CARTESIAN) + 0.05 * rng.standard_normal((g.num_nodes, 6))
    d, _ = lm_step(g, X, 0.0)
    assert np.all(d[[0, 3]] == 0)
    res = lm_solve(g, X, SolverConfig())
    np.testing.assert_array_equal(res.X[[0, 3]], X[[0, 3]])


def test_marginal_covariance_matches_dense_inverse(rng):
    _, sc, prob = _problem(3, 1.0)
    g = prob.graph()
    X = sc.truth_states(Coord.CARTESIAN)
    H, _ = _dense_reference(g, X)
    Sigma = np.linalg.inv(H)
    for node in (0, 1, g.num_nodes - 1):
        S = marginal_covariance(g, X, node)
        np.testing.assert_allclose(S, Sigma[node * 6:(node + 1) * 6, node * 6:(node + 1) * 6], rtol=1e-6,
                                   atol=1e-12)


def test_lm_step_decreases_cost(rng):
    _, sc, prob = _problem(3, 2.0)
    g = prob.graph()
    X = sc.truth_states(Coord.CARTESIAN) + 0.02 * rng.standard_normal((g.num_nodes, 6))
    d, new = lm_step(g, X, 1e-3)
    assert d.shape == X.shape
    assert new < g.cost(X)


def test_noiseless_lm_recovers_truth(rng):
    for case_id in (3, 4):
        cfg, sc, prob = _problem(case_id, 3.0, noise=NoiseConfig.zero(), init_sigma=(0.0, 0.0, 0.0))
        g = prob.graph()
        truth = sc.truth_states(Coord.CARTESIAN)
        X0 = truth + 0.01 * rng.standard_normal(truth.shape)
        res = lm_solve(g, X0, SolverConfig())
        assert res.converged
        assert np.max(np.abs(res.X[:, 3:6] - truth[:, 3:6])) < 1e-6


def test_polar_graph_noiseless(rng):
    cfg, sc, prob = _problem(3, 3.0, coord=Coord.POLAR, noise=NoiseConfig.zero(), init_sigma=(0.0, 0.0, 0.0))
    g = prob.graph()
    truth = sc.truth_states(Coord.POLAR)
    res = lm_solve(g, truth + 0.005 * rng.standard_normal(truth.shape), SolverConfig())
    err = res.X - truth
    err[:, list(angle_indices(Coord.POLAR))] = np.angle(np.exp(1j * err[:, list(angle_indices(Coord.POLAR))]))
    assert np.max(np.abs(err[:, 3:])) < 1e-6


def test_irls_l2_equals_lm(rng):
    _, sc, prob = _problem(3, 2.0)
    g = prob.graph()
    X0 = prob.dead_reckon(prob.prior_mean, 0, prob.num_ticks)
    a = irls_solve(g, RobustKernel("l2"), SolverConfig(), X0)
    b = lm_solve(g, X0, SolverConfig())
    np.testing.assert_array_equal(a.X, b.X)
    assert a.cost == b.cost


@pytest.mark.parametrize("kernel", ["huber", "cauchy", "tukey", "arctan"])
def test_irls_downweights_outliers(kernel):
    cfg, sc, prob = _problem(4, 10.0, outlier_ratio=0.3, seed=3)
    g = prob.graph()
    X0 = prob.dead_reckon(prob.prior_mean, 0, prob.num_ticks)
    truth = sc.truth_states(Coord.CARTESIAN)
    err = lambda X: np.sqrt(np.mean(np.sum((X[:, 3:5] - truth[:, 3:5]) ** 2, axis=1)))
    l2 = irls_solve(g, RobustKernel("l2"), SolverConfig(), X0)
    rob = irls_solve(g, RobustKernel(kernel), SolverConfig(), X0)
    assert err(rob.X) < err(l2.X)
    assert not rob.diverged
    assert rob.cost == pytest.approx(robust_cost(g, rob.X, RobustKernel(kernel)))
    nominal = [h["robust_cost"] for h in rob.history if h["scale"] == 1.0 and not h.get("rejected")]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(nominal, nominal[1:]))


# ---------------------------------------------------------------------------
# window strategies


def test_window_strategy_parsing():
    assert WindowStrategy("sf", 5).kind.value == "SF"
    with pytest.raises(InvalidArgumentError):
        WindowStrategy.sf(1)
    with pytest.raises(InvalidArgumentError):
        WindowStrategy("FB", warmup_ticks=-1)


def test_sb_final_solve_matches_fb():
    _, sc, prob = _problem(3, 3.0)
    k, cfg = RobustKernel("l2"), SolverConfig()
    fb = estimate_stream(prob, WindowStrategy.fb(), k, cfg)
    sb = estimate_stream(prob, WindowStrategy.sb(), k, cfg)
    assert sb.solves == prob.num_ticks
    assert abs(sb.final.cost - fb.final.cost) <= cfg.cost_tol * fb.final.cost * 10
    np.testing.assert_allclose(sb.final.X, fb.final.X, atol=1e-4)
    np.testing.assert_allclose(sb.states[-1], fb.states[-1], atol=1e-4)


def test_sf_window_and_emission():
    _, sc, prob = _problem(3, 2.0)
    est = estimate_stream(prob, WindowStrategy.sf(5), RobustKernel("l2"), SolverConfig())
    assert est.states.shape == (prob.num_ticks, 6) and est.solves == prob.num_ticks
    assert est.final.X.shape == (5, 6)
    np.testing.assert_array_equal(est.states[-1], est.final.X[-1])


def test_fb_continuation_matches_single_solve_on_easy_problem():
    _, sc, prob = _problem(3, 5.0)
    k, cfg = RobustKernel("l2"), SolverConfig()
    cont = estimate_stream(prob, WindowStrategy(kind="FB"), k, cfg)
    plain = estimate_stream(prob, WindowStrategy(kind="FB", warmup_ticks=0), k, cfg)
    assert plain.solves == 1 and cont.solves > 1
    np.testing.assert_allclose(cont.states, plain.states, atol=1e-5)


def test_graph_json_export():
    import json
    _, sc, prob = _problem(3, 0.5)
    g = prob.graph()
    doc = json.loads(g.to_json(sc.truth_states(Coord.CARTESIAN), history=[{"outer": 0}]))
    assert doc["num_nodes"] == g.num_nodes and len(doc["factors"]) == len(g.blocks)
    assert doc["iterations"] == [{"outer": 0}]


# ---------------------------------------------------------------------------
# worked solver examples


def test_cost_vanishes_at_noiseless_truth():
    _, sc, prob = _problem(3, 3.0, noise=NoiseConfig.zero(), init_sigma=(0.0, 0.0, 0.0))
    assert prob.graph().cost(sc.truth_states(Coord.CARTESIAN)) < 1e-12
    # Case 4 starts from an unknown (zero) target velocity, so only its prior term is nonzero
    _, sc, prob = _problem(4, 3.0, noise=NoiseConfig.zero(), init_sigma=(0.0, 0.0, 0.0))
    truth = sc.truth_states(Coord.CARTESIAN)
    assert prob.graph().without(FactorKind.PRIOR).cost(truth) < 1e-12
    assert prob.prior_mean[6:].tolist() == [0.0, 0.0]


def _linear_chain(rng, N=6):
    # zero inputs make the motion model the identity, so every residual is linear
    g = Graph(N, Case.M1, Coord.CARTESIAN)
    nodes = np.column_stack([np.arange(N - 1), np.arange(1, N)])
    g.add(MotionBlock(nodes, np.zeros((N - 1, 4)), 0.05, Case.M1, Coord.CARTESIAN, 3.0 * np.eye(6)))
    g.add(PriorBlock([0, N - 1], rng.uniform(-0.5, 0.5, (2, 6)), np.eye(6), Coord.CARTESIAN))
    return g


def test_one_gauss_newton_step_solves_linear_chain(rng):
    g = _linear_chain(rng)
    X0 = rng.uniform(-0.5, 0.5, (g.num_nodes, 6))
    d, _ = lm_step(g, X0, 0.0)
    X1 = X0 + d
    # linear least squares oracle on the stacked whitened system
    A = np.zeros((0, X0.size))
    b = np.zeros(0)
    for blk in g.blocks:
        J = blk.sqrt_info[:, None] @ blk.jacobians(X0)
        r0 = blk.whitened(np.zeros_like(X0))
        for i in range(len(blk)):
            row = np.zeros((6, X0.size))
            for a, node in enumerate(blk.nodes[i]):
                row[:, node * 6:(node + 1) * 6] = J[i, a]
            A, b = np.vstack([A, row]), np.r_[b, -r0[i]]
    X_ls = np.linalg.lstsq(A, b, rcond=None)[0].reshape(X0.shape)
    np.testing.assert_allclose(X1, X_ls, atol=1e-12)
    d2, _ = lm_step(g, X1, 0.0)
    assert np.linalg.norm(d2) < SolverConfig().step_tol


def test_damping_shrinks_step(rng):
    _, sc, prob = _problem(4, 2.0)
    g = prob.graph()
    X = sc.truth_states(Coord.CARTESIAN) + 0.05 * rng.standard_normal((g.num_nodes, 8))
    norms = [np.linalg.norm(lm_step(g, X, lam)[0]) for lam in (0.0, 1e-3, 1e-1, 1.0, 10.0)]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_step_vanishes_at_minimum():
    _, sc, prob = _problem(3, 2.0)
    g = prob.graph()
    res = lm_solve(g, prob.dead_reckon(prob.prior_mean, 0, prob.num_ticks), SolverConfig())
    d, _ = lm_step(g, res.X, 0.0)
    assert np.linalg.norm(d) < 1e-6


def test_huber_location_estimate():
    data = [0.0, 0.0, 0.0, 100.0]
    means = np.zeros((4, 6))
    means[:, 0] = data
    g = Graph(1, Case.M1, Coord.CARTESIAN)
    g.add(PriorBlock([0, 0, 0, 0], means, np.eye(6), Coord.CARTESIAN, robust=True))
    X0 = np.zeros((1, 6))
    X0[0, 0] = np.mean(data)
    k = RobustKernel("huber", 1.0)
    res = irls_solve(g, k, SolverConfig(), X0)
    grid = np.linspace(-2, 30, 320001)
    brute = grid[np.argmin(np.sum(k.loss(np.abs(grid[:, None] - np.array(data))), axis=1))]
    assert res.X[0, 0] == pytest.approx(brute, abs=1e-3)
    assert brute == pytest.approx(1 / 3, abs=1e-3)  # three inliers against one unit-slope pull
    assert abs(res.X[0, 0]) < abs(np.mean(data)) / 50


def test_gauge_fixed_node_matches_prior():
    _, sc, prob = _problem(3, 3.0)
    cfg = SolverConfig(cost_tol=1e-15, step_tol=1e-14, grad_tol=1e-13)
    g = prob.graph()
    ref = lm_solve(g, prob.dead_reckon(prob.prior_mean, 0, prob.num_ticks), cfg).X
    anchored = g.without(FactorKind.PRIOR)
    anchored.fixed.add(0)
    anchored.validate()
    X0 = prob.dead_reckon(ref[0], 0, prob.num_ticks)
    got = lm_solve(anchored, X0, cfg).X
    np.testing.assert_array_equal(got[0], ref[0])
    np.testing.assert_allclose(got[:, 3:], ref[:, 3:], atol=1e-8)
