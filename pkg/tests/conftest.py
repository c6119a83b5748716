import math

import numpy as np
import pytest


def num_jacobian(f, x, eps=1e-6, angular_out=()):
    """Central-difference Jacobian of ``f`` at ``x``; angular outputs are wrapped."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros(f0.shape + x.shape)
    for i in range(x.size):
        d = np.zeros_like(x)
        d.flat[i] = eps
        diff = np.asarray(f(x + d), dtype=float) - np.asarray(f(x - d), dtype=float)
        for k in angular_out:
            diff[..., k] = np.arctan2(np.sin(diff[..., k]), np.cos(diff[..., k]))
        J[..., i] = diff / (2 * eps)
    return J


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_gaussian_pose(rng, sigma, spread=3.0):
    """Random mean and a random covariance with per-axis std ~ sigma (correlated)."""
    from relpose.se2 import GaussianPose, Pose2

    A = rng.standard_normal((3, 3))
    C = A @ A.T
    d = np.sqrt(np.diag(C))
    C = C / np.outer(d, d) * sigma**2
    mean = Pose2(*rng.uniform(-spread, spread, 2), rng.uniform(-math.pi, math.pi))
    return GaussianPose(mean, 0.5 * (C + C.T))


def sample_poses(rng, gp, n):
    return rng.multivariate_normal(gp.mean.as_array(), gp.cov, size=n)


def mc_covariance(samples, mean):
    """Sample covariance about ``mean`` with the heading error wrapped."""
    err = samples - mean.as_array()
    err[:, 2] = np.arctan2(np.sin(err[:, 2]), np.cos(err[:, 2]))
    err -= err.mean(axis=0)
    return err.T @ err / (len(err) - 1)


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[tuple[str, str, bool, str]] = []


@pytest.fixture
def record():
    def _record(key: str, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((key, title, bool(passed), detail))
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: (int(r[0].rstrip("abc")), r[0])):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key:>3}. {title}" + (f": {detail}" if detail else ""))
