from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from cilqg import _backend, solve

compiled = pytest.mark.skipif(_backend.compiled_kernels is None, reason="compiled kernels not built")
ALL = ("two_static_obstacles", "one_static_obstacle_curved", "dynamic_overtake")


def kernels():
    return _backend.get("compiled"), _backend.get("python")


def random_nominal(rng, N=20):
    U = np.column_stack([rng.uniform(-2, 1, N), rng.uniform(-0.3, 0.3, N)])
    x0 = np.array([rng.normal(), rng.normal(), rng.uniform(1, 8), rng.uniform(-1, 1)])
    return x0, U


@compiled
def test_rollout_agrees():
    c, p = kernels()
    rng = np.random.default_rng(0)
    for _ in range(25):
        x0, U = random_nominal(rng)
        np.testing.assert_allclose(c.bicycle_rollout(x0, U, 2.9, 0.2), p.bicycle_rollout(x0, U, 2.9, 0.2),
                                   rtol=1e-13, atol=1e-12)


@compiled
@pytest.mark.parametrize("measurement", [0, 1])
def test_covariances_agree(measurement):
    c, p = kernels()
    rng = np.random.default_rng(1)
    S0 = np.diag([0.01, 0.01, 0.01, 1e-4])
    Sw = np.diag([0.09, 9e-6])
    Sv = np.diag([0.04, 0.04, 0.0025, 1e-4])
    for _ in range(10):
        x0, U = random_nominal(rng)
        X = p.bicycle_rollout(x0, U, 2.9, 0.2)
        for a, b in zip(c.bicycle_covariances(X, U, S0, Sw, Sv, 2.9, 0.2, measurement),
                        p.bicycle_covariances(X, U, S0, Sw, Sv, 2.9, 0.2, measurement)):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


@compiled
@pytest.mark.parametrize("name", ALL)
@pytest.mark.parametrize("mode", ["cilqg", "cilqr", "gbsp", "open"])
def test_full_solve_agrees(scenarios, name, mode):
    sc = scenarios[name].with_settings(mode=mode)
    a = solve(sc, backend="compiled", raise_on_stall=False)
    b = solve(sc, backend="python", raise_on_stall=False)
    assert a.diagnostics["backend"] == "compiled" and b.diagnostics["backend"] == "python"
    assert a.status == b.status
    # Kernels agree to rounding, but an inner solve may stop one iteration earlier on
    # either side, so plans agree only to within the inner stopping tolerance.
    np.testing.assert_allclose(a.controls, b.controls, atol=1e-5)
    np.testing.assert_allclose(a.states, b.states, atol=1e-4)
    assert a.cost == pytest.approx(b.cost, rel=sc.settings.inner_tol)


def test_unknown_backend_rejected(scenarios):
    with pytest.raises(ValueError):
        solve(scenarios["two_static_obstacles"], backend="fortran")


def test_environment_forces_python_fallback():
    env = dict(os.environ, CILQG_BACKEND="python")
    code = "import cilqg; print(cilqg.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env.pop("CILQG_BACKEND")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    expected = "compiled" if _backend.compiled_kernels is not None else "python"
    assert out.stdout.strip() == expected
