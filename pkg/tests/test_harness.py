import json
import math

import numpy as np
import pytest
import yaml

from relpose.errors import InvalidArgumentError
from relpose.harness import io
from relpose.harness.cli import main
from relpose.harness.experiment import corrupt, run_experiment
from relpose.harness.metrics import rmse
from relpose.harness.scenario import PRESETS, EstimatorSpec, InputProfile, generate_scenario, preset
from relpose.harness.sweep import parse_ratios, sweep_outliers
from relpose.models.kinematics import Coord
from relpose.models.measurements import measure_relative
from relpose.models.noise import MeasurementKind, NoiseConfig
from relpose.se2 import Pose2


# -- scenarios -----------------------------------------------------------------


def _radius(path):
    # both preset circles are centred on the origin
    return np.hypot(path[:, 0], path[:, 1])


def test_sim_circles_radii():
    cfg = preset("sim-circles", duration=2 * math.pi / 0.09, dt=0.01)
    sc = generate_scenario(cfg)
    ego_r = _radius(sc.ego)
    assert np.all(np.abs(ego_r - 2.0) < 1e-6)
    v, w = cfg.other_profile.v, cfg.other_profile.w
    assert v / w == 0.4 / 0.09
    assert np.all(np.abs(_radius(sc.other) - 0.4 / 0.09) < 1e-6)


@pytest.mark.parametrize("which,period", [("ego", 2 * math.pi / 0.1), ("other", 2 * math.pi / 0.09)])
def test_sim_circles_periodic(which, period):
    dt = 0.01
    n = period / dt
    cfg = preset("sim-circles", duration=math.floor(n) * dt, dt=dt)
    sc = generate_scenario(cfg)
    path = getattr(sc, which)
    # the period is not a multiple of dt: close the loop with one exact fractional RK4 step
    from relpose.harness.scenario import _integrate
    u = (cfg.ego_profile if which == "ego" else cfg.other_profile).evaluate([0.0])
    frac = _integrate(Pose2(*path[-1]), u, (n - math.floor(n)) * dt, 1)[-1]
    assert np.hypot(*(frac[:2] - path[0, :2])) < 1e-5


def test_zero_noise_stream_matches_truth():
    cfg = preset("sim-circles", duration=5.0, case_id=3, noise=NoiseConfig.zero())
    sc = generate_scenario(cfg)
    data = corrupt(sc)
    m = data.measurements
    for k in (0, 17, 100):
        z = measure_relative(Pose2(*sc.ego[k]), Pose2(*sc.other[k]))
        sel = np.isclose(m.t, sc.t[k])
        r = m.value1[sel & m.mask(MeasurementKind.RANGE)]
        b = m.value1[sel & m.mask(MeasurementKind.BEARING)]
        assert r[0] == pytest.approx(z[0], abs=1e-12) and b[0] == pytest.approx(z[1], abs=1e-12)


def test_case_channels():
    kinds = lambda c: set(generate_scenario(preset("sim-circles", duration=1.0, case_id=c)).measurements.kind)
    assert kinds(1) == {"range", "odom_comm"}
    assert kinds(2) == {"bearing", "odom_comm"}
    assert kinds(4) == {"range", "bearing"}


def test_all_presets_generate():
    for name in PRESETS:
        sc = generate_scenario(preset(name, duration=2.0))
        assert sc.ego.shape == (41, 3) and np.all(np.isfinite(sc.rel_cartesian))


def test_profile_variants():
    p = InputProfile(v=0.2, v_amp=0.1, freq=0.2, radius=2.0)
    vw = p.evaluate([0.0, 1.0])
    np.testing.assert_allclose(vw[:, 1], vw[:, 0] / 2.0)
    s = InputProfile(schedule=((0.0, 0.1, 0.0), (1.0, 0.2, 0.3)))
    np.testing.assert_allclose(s.evaluate([0.5, 1.0, 5.0]), [[0.1, 0.0], [0.2, 0.3], [0.2, 0.3]])
    assert InputProfile.from_dict(s.to_dict()) == s
    with pytest.raises(InvalidArgumentError):
        InputProfile(radius=0.0)
    with pytest.raises(InvalidArgumentError):
        InputProfile(schedule=((1.0, 0, 0), (0.5, 0, 0)))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        preset("sim-circles", duration=0.0)
    with pytest.raises(InvalidArgumentError):
        preset("sim-circles", outlier_ratio=0.7)
    with pytest.raises(InvalidArgumentError):
        preset("nope")
    with pytest.raises(InvalidArgumentError):
        EstimatorSpec("ukf")


# -- metrics -------------------------------------------------------------------


def test_rmse_examples():
    truth = np.random.default_rng(0).normal(size=(50, 3))
    assert rmse(truth, truth) == {"x": 0.0, "y": 0.0, "theta": 0.0, "total": 0.0}
    off = truth.copy()
    off[:, 0] += 0.1
    r = rmse(off, truth)
    assert r["x"] == pytest.approx(0.1) and r["total"] == pytest.approx(0.1)
    th = truth.copy()
    th[:, 2] += 2 * math.pi - 0.01
    assert rmse(th, truth)["theta"] == pytest.approx(0.01)
    with pytest.raises(InvalidArgumentError):
        rmse(truth[:-1], truth)


def test_run_experiment_deterministic():
    cfg = preset("sim-circles", duration=5.0, case_id=1, seed=4)
    a, b = run_experiment(cfg), run_experiment(cfg)
    np.testing.assert_array_equal(a.estimate, b.estimate)
    assert a.rmse == b.rmse
    c = run_experiment(cfg.with_(seed=5))
    assert c.rmse != a.rmse
    rep = a.report()
    assert set(rep) == {"scenario", "case", "estimator", "kernel", "seeds", "rmse", "wall_time_s"}
    assert set(a.rmse) == {"x", "y", "theta", "total"}
    assert set(run_experiment(cfg.with_(case_id=4)).rmse) == {"x", "y", "theta", "v", "w", "total"}


def test_polar_estimators_run():
    for est in (EstimatorSpec("ekf"), EstimatorSpec("pgo", "FB")):
        r = run_experiment(preset("sim-circles", duration=10.0, coord=Coord.POLAR, estimator=est))
        assert r.rmse["total"] < 0.2


# -- sweeps --------------------------------------------------------------------


def test_parse_ratios():
    assert parse_ratios("0.1:0.5:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert parse_ratios("0,0.25") == [0.0, 0.25]
    with pytest.raises(InvalidArgumentError):
        parse_ratios("0.1:0.5")


def test_sweep_ratio_zero_wide_kernels_equal_l2():
    cfg = preset("sim-circles", duration=5.0, case_id=4, estimator=EstimatorSpec("pgo", "FB"))
    base = sweep_outliers(cfg, [0.0], ["l2"], seeds=[0, 1])
    for k in ("huber", "cauchy", "tukey", "arctan"):
        wide = cfg.with_(estimator=EstimatorSpec("pgo", "FB", kernel=k, kernel_t=1e4))
        for s in (0, 1):
            r = run_experiment(wide.with_(seed=s))
            np.testing.assert_allclose(r.estimate, base.runs[(0.0, "l2", s)].estimate, atol=1e-6)


def test_sweep_ratio_zero_default_kernels_close_to_l2():
    cfg = preset("sim-circles", duration=10.0, case_id=4, estimator=EstimatorSpec("pgo", "FB"))
    t = sweep_outliers(cfg, [0.0], seeds=range(3))
    l2 = t.median(0.0, "l2")
    for k in t.kernels:
        assert t.median(0.0, k) < 2.0 * l2


def test_sweep_order_independent_and_parallel():
    cfg = preset("sim-circles", duration=3.0, case_id=4, estimator=EstimatorSpec("pgo", "FB"))
    a = sweep_outliers(cfg, [0.2], ["l2", "cauchy"], seeds=[0, 1], workers=1)
    b = sweep_outliers(cfg, [0.2], ["cauchy", "l2"], seeds=[1, 0], workers=2)
    for key, r in a.runs.items():
        np.testing.assert_array_equal(r.estimate, b.runs[key].estimate)
    rows = a.rows()
    assert len(rows) == 2 and rows[0]["rmse"]["total"] == a.median(0.2, "l2")
    with pytest.raises(InvalidArgumentError):
        sweep_outliers(cfg, [0.6], ["l2"], seeds=[0])


# -- io ------------------------------------------------------------------------


def test_trajectory_csv_round_trip(tmp_path, rng):
    for n in (6, 8):
        t = np.arange(20) * 0.05
        X = rng.standard_normal((20, n)) * 10 ** rng.uniform(-8, 3, (20, n))
        io.write_trajectory(tmp_path / "t.csv", t, X)
        t2, X2 = io.read_trajectory(tmp_path / "t.csv")
        assert np.array_equal(t, t2) and np.array_equal(X, X2)
    with pytest.raises(InvalidArgumentError):
        io.write_trajectory(tmp_path / "t.csv", t, X[:, :5])


def test_config_yaml_round_trip(tmp_path):
    for name in PRESETS:
        cfg = preset(name, case_id=4, seed=3, estimator=EstimatorSpec("pgo", "SF", 7, "cauchy"))
        io.save_config(tmp_path / "c.yaml", cfg)
        assert io.load_config(tmp_path / "c.yaml") == cfg


def test_config_partial_and_invalid(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"preset": "hw-3", "duration": 12.0, "noise": {"sigma_range": 0.1}}))
    cfg = io.load_config(tmp_path / "c.yaml")
    assert cfg.name == "hw-3" and cfg.duration == 12.0 and cfg.noise.sigma_range == 0.1
    (tmp_path / "bad.yaml").write_text("durration: 3\n")
    with pytest.raises(InvalidArgumentError):
        io.load_config(tmp_path / "bad.yaml")


def test_report_aggregation(tmp_path):
    reps = [{"scenario": "s", "case": 3, "estimator": "ekf", "kernel": None, "seeds": [s],
             "rmse": {"total": v}, "wall_time_s": 1.0} for s, v in enumerate([0.3, 0.1, 0.2])]
    rows = io.aggregate_reports(reps[::-1])
    assert rows == io.aggregate_reports(reps)
    assert rows[0]["rmse"]["total"] == 0.2 and rows[0]["seeds"] == [0, 1, 2]
    io.write_table_csv(tmp_path / "r.csv", rows)
    assert "rmse_total" in (tmp_path / "r.csv").read_text().splitlines()[0]


def test_quaternion_yaw():
    for yaw in np.linspace(-3.0, 3.0, 13):
        q = (0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2))
        assert io.yaw_from_quaternion(*q) == pytest.approx(yaw)
    # a pure roll leaves the heading at zero
    assert io.yaw_from_quaternion(math.sin(0.2), 0.0, 0.0, math.cos(0.2)) == pytest.approx(0.0)


def test_import_pose_csv(tmp_path):
    p = tmp_path / "poses.csv"
    p.write_text("t,x,y,qx,qy,qz,qw\n0.0,1.0,2.0,0,0,0.7071067811865476,0.7071067811865476\n")
    t, poses = io.import_pose_csv(p)
    np.testing.assert_allclose(poses, [[1.0, 2.0, math.pi / 2]])
    p.write_text("t,x,y\n0,1,2\n")
    with pytest.raises(InvalidArgumentError):
        io.import_pose_csv(p)


# -- cli -----------------------------------------------------------------------


def test_cli_simulate_estimate_round_trip(tmp_path, capsys):
    d = tmp_path / "run"
    assert main(["simulate", "--case", "3", "--duration", "5", "--seed", "7", "--out", str(d)]) == 0
    t, truth = io.read_trajectory(d / "truth.csv")
    assert truth.shape == (101, 6)
    assert main(["estimate", "--data", str(d), "--estimator", "ekf", "--out", str(tmp_path / "a")]) == 0
    assert main(["estimate", "--case", "3", "--duration", "5", "--seed", "7", "--estimator", "ekf",
                 "--out", str(tmp_path / "b")]) == 0
    ra = json.loads((tmp_path / "a" / "rmse.json").read_text())
    rb = json.loads((tmp_path / "b" / "rmse.json").read_text())
    assert ra["rmse"] == rb["rmse"]  # recorded data reproduces the fresh run exactly
    _, est = io.read_trajectory(tmp_path / "a" / "trajectory.csv")
    assert est.shape == truth.shape
    assert main(["report", str(tmp_path / "a" / "rmse.json"), str(tmp_path / "b" / "rmse.json"),
                 "--out", str(tmp_path / "agg.csv")]) == 0


def test_cli_observability(capsys):
    assert main(["observability", "--structure", "range-bearing-nocomm", "--random-states", "20"]) == 0
    out = capsys.readouterr().out
    assert "range-bearing-nocomm" in out and " 5 " in out
    assert main(["observability", "--structure", "range-only-polar", "--probe", "2,0,1"]) == 0
    assert "on locus: x2 = n*pi" in capsys.readouterr().out


def test_cli_sweep(tmp_path, capsys):
    assert main(["sweep-outliers", "--case", "4", "--duration", "2", "--kernels", "l2,cauchy",
                 "--ratios", "0.2", "--seeds", "2", "--out", str(tmp_path / "g.csv")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "ratio,l2,cauchy"
    assert (tmp_path / "g.csv").exists()


def test_cli_calibrate(tmp_path, capsys, rng):
    n = 30
    pos = rng.uniform(-2, 2, (n, 2))
    truth = np.column_stack([rng.uniform(1, 3, n), rng.uniform(-1, 1, n)])
    uwb = truth - np.column_stack([0.1 + 0.02 * pos[:, 0], -0.05 + 0.01 * pos[:, 1]])
    rows = ["uwb_range,uwb_bearing,true_range,true_bearing,x,y"]
    rows += [",".join(repr(float(v)) for v in (*uwb[i], *truth[i], *pos[i])) for i in range(n)]
    (tmp_path / "cal.csv").write_text("\n".join(rows) + "\n")
    assert main(["calibrate", str(tmp_path / "cal.csv")]) == 0
    json.loads(capsys.readouterr().out)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["estimate", "--duration", "-1", "--out", str(tmp_path)]) == 1
    assert main(["observability", "--structure", "nope"]) == 1
    assert main(["report", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--case", "9"])
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "error" in err
