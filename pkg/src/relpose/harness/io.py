"""File formats: trajectory CSV, RMSE report JSON, YAML scenario configs, pose imports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from ..errors import InvalidArgumentError
from ..models.noise import NoiseConfig
from ..se2 import Pose2
from .scenario import PRESETS, EstimatorSpec, InputProfile, ScenarioConfig, preset

TRAJECTORY_COLUMNS = ("t", "x_i", "y_i", "th_i", "x_ji", "y_ji", "th_ji")
VELOCITY_COLUMNS = ("v_j", "w_j")


# -- trajectories ----------------------------------------------------------


def write_trajectory(path, t, states) -> None:
    """Write ``(T, 6)`` or ``(T, 8)`` augmented states (Cartesian relative block)."""
    t = np.asarray(t, dtype=float)
    X = np.asarray(states, dtype=float)
    if X.ndim != 2 or X.shape[1] not in (6, 8) or len(t) != len(X):
        raise InvalidArgumentError("trajectory must be (T, 6) or (T, 8) aligned with t")
    cols = TRAJECTORY_COLUMNS + (VELOCITY_COLUMNS if X.shape[1] == 8 else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for ti, row in zip(t, X):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])


def read_trajectory(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = [[float(v) for v in r] for r in reader]
    if header not in (TRAJECTORY_COLUMNS, TRAJECTORY_COLUMNS + VELOCITY_COLUMNS):
        raise InvalidArgumentError(f"unexpected trajectory header {header}")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return data[:, 0], data[:, 1:]


# -- reports ---------------------------------------------------------------


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def aggregate_reports(reports: list[dict]) -> list[dict]:
    """Median RMSE per (scenario, case, estimator, kernel) over all seeds."""
    cells: dict[tuple, list[dict]] = {}
    for r in reports:
        key = (r["scenario"], r["case"], r["estimator"], r.get("kernel"))
        cells.setdefault(key, []).append(r)
    out = []
    for key in sorted(cells, key=lambda k: tuple(str(v) for v in k)):
        group = cells[key]
        names = sorted(set().union(*(g["rmse"] for g in group)))
        out.append({
            "scenario": key[0], "case": key[1], "estimator": key[2], "kernel": key[3],
            "seeds": sorted(s for g in group for s in g.get("seeds", [])),
            "rmse": {n: float(np.median([g["rmse"][n] for g in group if n in g["rmse"]])) for n in names},
            "wall_time_s": float(sum(g.get("wall_time_s") or 0.0 for g in group)),
        })
    return out


def write_table_csv(path, rows: list[dict]) -> None:
    """Flatten report-like rows (nested ``rmse`` dicts become ``rmse_<name>`` columns)."""
    flat = []
    for r in rows:
        d = {k: v for k, v in r.items() if k not in ("rmse", "seeds")}
        if "seeds" in r:
            d["seeds"] = " ".join(str(s) for s in r["seeds"])
        d.update({f"rmse_{k}": v for k, v in r.get("rmse", {}).items()})
        flat.append(d)
    cols = list(dict.fromkeys(k for d in flat for k in d))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for d in flat:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in d.items()})


# -- scenario configs --------------------------------------------------------


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "duration": cfg.duration,
        "dt": cfg.dt,
        "ego_profile": cfg.ego_profile.to_dict(),
        "other_profile": cfg.other_profile.to_dict(),
        "ego_init": [cfg.ego_init.x, cfg.ego_init.y, cfg.ego_init.theta],
        "other_init": [cfg.other_init.x, cfg.other_init.y, cfg.other_init.theta],
        "noise": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg.noise).items()},
        "outlier_ratio": cfg.outlier_ratio,
        "case_id": cfg.case_id,
        "coord": cfg.coord.value,
        "estimator": asdict(cfg.estimator),
        "seed": cfg.seed,
        "init_sigma": list(cfg.init_sigma),
        "substeps": cfg.substeps,
    }


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build a config; a ``preset`` key selects the base, other keys override it."""
    d = dict(d or {})
    base_name = d.pop("preset", None) or (d.get("name") if d.get("name") in PRESETS else "sim-circles")
    base = preset(base_name)
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for key, val in d.items():
        if key in ("ego_profile", "other_profile"):
            kw[key] = InputProfile.from_dict(val)
        elif key in ("ego_init", "other_init"):
            kw[key] = Pose2(*map(float, val))
        elif key == "noise":
            noise = {**asdict(base.noise), **val}
            if "sigma_process" in noise:
                noise["sigma_process"] = tuple(noise["sigma_process"])
            kw[key] = NoiseConfig(**noise)
        elif key == "estimator":
            kw[key] = EstimatorSpec(**{**asdict(base.estimator), **val})
        elif key == "init_sigma":
            kw[key] = tuple(float(v) for v in val)
        else:
            kw[key] = val
    try:
        return base.with_(**kw)
    except TypeError as exc:
        raise InvalidArgumentError(f"invalid config: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    with open(Path(path)) as fh:
        doc = yaml.safe_load(fh)
    if doc is not None and not isinstance(doc, dict):
        raise InvalidArgumentError("config file must hold a mapping")
    return config_from_dict(doc or {})


def save_config(path, cfg: ScenarioConfig) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


# -- external pose data ------------------------------------------------------


def yaw_from_quaternion(qx, qy, qz, qw):
    """Heading about +z of a unit quaternion (Z-Y-X convention)."""
    qx, qy, qz, qw = (np.asarray(v, dtype=float) for v in (qx, qy, qz, qw))
    out = np.arctan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))
    return float(out) if out.ndim == 0 else out


def import_pose_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``t, x, y, qx, qy, qz, qw`` rows into times and planar poses ``(x, y, yaw)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    need = ("t", "x", "y", "qx", "qy", "qz", "qw")
    if not rows or any(k not in rows[0] for k in need):
        raise InvalidArgumentError(f"pose CSV needs columns {need}")
    a = {k: np.array([float(r[k]) for r in rows]) for k in need}
    norm = np.sqrt(a["qx"] ** 2 + a["qy"] ** 2 + a["qz"] ** 2 + a["qw"] ** 2)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise InvalidArgumentError("quaternions must be finite and non-zero")
    yaw = yaw_from_quaternion(a["qx"] / norm, a["qy"] / norm, a["qz"] / norm, a["qw"] / norm)
    return a["t"], np.column_stack([a["x"], a["y"], np.atleast_1d(yaw)])
