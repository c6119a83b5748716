"""Command-line entry point: ``relpose <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError, RelPoseError
from ..models.calibration import fit_calibration
from ..models.noise import MeasurementStream, NoiseConfig
from ..observability import (
    DEGENERATE_LOCI,
    EXPECTED_RANK,
    InfoStructure,
    codistribution_for,
    degeneracy_probe,
    random_state,
    rank_of,
)
from . import io
from .experiment import NoisyData, corrupt, estimate, relative_rmse
from .scenario import PRESETS, EstimatorSpec, ScenarioConfig, generate_scenario, preset
from .sweep import SWEEP_KERNELS, parse_ratios, sweep_outliers

log = logging.getLogger("relpose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- scenario options shared by simulate / estimate / sweep-outliers ----------


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), help="named scenario (default sim-circles)")
    p.add_argument("--config", type=Path, help="YAML scenario file (replaces --preset); flags override it")
    p.add_argument("--case", type=int, choices=(1, 2, 3, 4), dest="case_id")
    p.add_argument("--coord", choices=("cartesian", "polar"))
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--outlier-ratio", type=float)
    p.add_argument("--noise-free", action="store_true", help="zero every noise source")


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=("ekf", "pgo"))
    p.add_argument("--strategy", choices=("SF", "SB", "FB", "sf", "sb", "fb"))
    p.add_argument("--window", type=int)
    p.add_argument("--kernel")
    p.add_argument("--kernel-t", type=float)


def _scenario(args) -> ScenarioConfig:
    cfg = io.load_config(args.config) if args.config else preset(args.preset or "sim-circles")
    kw = {k: getattr(args, k) for k in ("case_id", "coord", "seed", "duration", "dt", "outlier_ratio")
          if getattr(args, k, None) is not None}
    if getattr(args, "noise_free", False):
        kw["noise"] = NoiseConfig.zero()
        kw["init_sigma"] = (0.0, 0.0, 0.0)
    est = cfg.estimator
    over = {k: getattr(args, a) for k, a in (("kind", "estimator"), ("strategy", "strategy"), ("window", "window"),
                                            ("kernel", "kernel"), ("kernel_t", "kernel_t"))
            if getattr(args, a, None) is not None}
    if over:
        kw["estimator"] = EstimatorSpec(**{**est.__dict__, **over})
    return cfg.with_(**kw)


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    sc = generate_scenario(cfg)
    data = corrupt(sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_config(out / "config.yaml", cfg)
    io.write_trajectory(out / "truth.csv", sc.t, sc.truth_states())
    data.measurements.to_csv(out / "measurements.csv")
    _write_odometry(out / "odometry.csv", sc.t[:-1], data.ego_u)
    (out / "init.json").write_text(json.dumps({"mean": data.init_mean.tolist(), "cov": data.init_cov.tolist()}))
    print(f"wrote {len(sc.t)} ticks and {len(data.measurements)} measurements to {out}")
    return 0


def _write_odometry(path, t, u) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "v_i", "w_i"))
        for ti, (v, om) in zip(t, u):
            w.writerow([repr(float(ti)), repr(float(v)), repr(float(om))])


def _read_odometry(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["v_i"]), float(r["w_i"])] for r in rows]).reshape(-1, 2)


def _load_recorded(args) -> tuple[ScenarioConfig, NoisyData, np.ndarray | None]:
    d = Path(args.data)
    args.config = args.config or d / "config.yaml"
    cfg = _scenario(args)
    init = json.loads((d / "init.json").read_text())
    data = NoisyData(MeasurementStream.from_csv(d / "measurements.csv"), _read_odometry(d / "odometry.csv"),
                     np.array(init["mean"], dtype=float), np.array(init["cov"], dtype=float))
    truth = io.read_trajectory(d / "truth.csv")[1] if (d / "truth.csv").exists() else None
    return cfg, data, truth


def cmd_estimate(args) -> int:
    if args.data:
        cfg, data, truth = _load_recorded(args)
        t = np.arange(cfg.n_ticks + 1) * cfg.dt
    else:
        cfg = _scenario(args)
        sc = generate_scenario(cfg)
        data, truth, t = corrupt(sc), sc.truth_states(), sc.t
    start = time.perf_counter()
    est, _ = estimate(cfg, data)
    wall = time.perf_counter() - start
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_trajectory(out / "trajectory.csv", t, est)
    if truth is not None:
        report = {
            "scenario": cfg.name, "case": cfg.case_id, "estimator": cfg.estimator.label,
            "kernel": cfg.estimator.kernel if cfg.estimator.kind == "pgo" else None,
            "seeds": [cfg.seed], "rmse": relative_rmse(cfg, est, truth), "wall_time_s": wall,
        }
        io.write_report(out / "rmse.json", report)
        print(json.dumps(report["rmse"]))
    return 0


def _structures(name: str | None) -> list[InfoStructure]:
    if name in (None, "all"):
        return list(InfoStructure)
    try:
        return [InfoStructure(name)]
    except ValueError:
        raise UsageError(f"unknown structure {name!r}; choose from {[s.value for s in InfoStructure]}") from None


def cmd_observability(args) -> int:
    rng = np.random.default_rng(args.seed)
    ok = True
    if args.probe:
        if args.structure in (None, "all"):
            raise UsageError("--probe needs a single --structure")
        s = InfoStructure(args.structure)
        x = np.array([float(v) for v in args.probe.split(",")])
        rep = degeneracy_probe(s, x)
        print(f"{s.value}: rank {rep.rank} of {rep.dim} (min singular value {rep.min_singular_value:.3e}); "
              f"{rep.locus_description}")
        return 0
    print(f"{'structure':<24} {'states':>6} {'ranks':>10} {'expected':>8} {'min sv':>10}")
    for s in _structures(args.structure):
        ranks, min_sv = [], np.inf
        for _ in range(args.random_states):
            rep = rank_of(codistribution_for(s, random_state(s, rng), max_order=args.order))
            ranks.append(rep.rank)
            min_sv = min(min_sv, rep.min_singular_value)
        uniq = sorted(set(ranks))
        ok &= uniq == [EXPECTED_RANK[s]]
        print(f"{s.value:<24} {len(ranks):>6} {','.join(map(str, uniq)):>10} {EXPECTED_RANK[s]:>8} {min_sv:>10.3e}")
        if args.loci:
            for locus in DEGENERATE_LOCI.get(s, []):
                print(f"    locus {locus.description}")
    return 0 if ok else 2


def cmd_sweep(args) -> int:
    cfg = _scenario(args)
    if cfg.estimator.kind != "pgo":
        cfg = cfg.with_(estimator=EstimatorSpec("pgo", args.strategy or "FB", args.window or 10))
    kernels = [k.strip() for k in args.kernels.split(",") if k.strip()]
    table = sweep_outliers(cfg, parse_ratios(args.ratios), kernels, range(args.seed or 0, (args.seed or 0) + args.seeds),
                           workers=args.workers)
    rows = table.rows()
    if args.out:
        io.write_table_csv(args.out, rows)
    w = csv.writer(sys.stdout)
    w.writerow(["ratio"] + table.kernels)
    for r in table.ratios:
        w.writerow([r] + [f"{table.median(r, k):.6f}" for k in table.kernels])
    return 0


CALIBRATION_COLUMNS = ("uwb_range", "uwb_bearing", "true_range", "true_bearing", "x", "y")


def cmd_calibrate(args) -> int:
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or any(c not in rows[0] for c in CALIBRATION_COLUMNS):
        raise UsageError(f"calibration CSV needs columns {CALIBRATION_COLUMNS}")
    a = {c: np.array([float(r[c]) for r in rows]) for c in CALIBRATION_COLUMNS}
    model = fit_calibration(np.column_stack([a["uwb_range"], a["uwb_bearing"]]),
                            np.column_stack([a["true_range"], a["true_bearing"]]),
                            np.column_stack([a["x"], a["y"]]))
    text = json.dumps(model.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    reports = []
    for p in args.inputs:
        doc = io.read_report(p)
        reports.extend(doc if isinstance(doc, list) else [doc])
    rows = io.aggregate_reports(reports)
    if args.out and str(args.out).endswith(".csv"):
        io.write_table_csv(args.out, rows)
    elif args.out:
        io.write_report(args.out, rows)
    else:
        print(json.dumps(rows, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relpose", description="Two-robot relative pose estimation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write truth, noisy measurements and odometry for a scenario")
    _add_scenario_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run an estimator on fresh or recorded data")
    _add_scenario_args(p)
    _add_estimator_args(p)
    p.add_argument("--data", help="directory written by 'simulate'")
    p.add_argument("--out", default=".", help="output directory (trajectory.csv, rmse.json)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("observability", help="rank table or degeneracy probe")
    p.add_argument("--structure", default="all")
    p.add_argument("--random-states", type=int, default=100)
    p.add_argument("--order", type=int, default=2, help="highest Lie derivative order")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe", help="comma-separated state to probe")
    p.add_argument("--loci", action="store_true", help="list known degenerate loci")
    p.set_defaults(func=cmd_observability)

    p = sub.add_parser("sweep-outliers", help="median RMSE over an outlier ratio x kernel grid")
    _add_scenario_args(p)
    _add_estimator_args(p)
    p.add_argument("--kernels", default=",".join(SWEEP_KERNELS))
    p.add_argument("--ratios", default="0.1:0.5:0.1")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds starting at --seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="grid CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="fit range/bearing offset planes from a CSV")
    p.add_argument("input", type=Path)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="aggregate RMSE JSON reports (median over seeds)")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--out", help=".csv or .json output; stdout when omitted")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"relpose {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (RelPoseError, OSError, ValueError, KeyError) as exc:
        print(f"relpose {args.command}: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
