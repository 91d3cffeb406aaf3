from __future__ import annotations

import math

import numpy as np
import pytest

from cilqg import Belief, LinearModel, NominalTrajectory, compute_gamma, propagate_variance, solve
from cilqg.errors import BadParams
from cilqg.montecarlo import monte_carlo_validate, simulate_rollout


def test_reproducible_for_a_seed(scenarios, plan_for):
    sc, plan = scenarios["two_static_obstacles"], plan_for("two_static_obstacles")
    a = monte_carlo_validate(sc, plan, trials=1500, seed=7)
    b = monte_carlo_validate(sc, plan, trials=1500, seed=7)
    c = monte_carlo_validate(sc, plan, trials=1500, seed=8)
    np.testing.assert_array_equal(a.state_violation_rate, b.state_violation_rate)
    np.testing.assert_array_equal(a.control_violation_rate, b.control_violation_rate)
    assert a.mean_cost == b.mean_cost and a.collision_rate == b.collision_rate
    assert a.mean_cost != c.mean_cost


def test_thread_count_does_not_change_statistics(scenarios, plan_for):
    sc, plan = scenarios["dynamic_overtake"], plan_for("dynamic_overtake")
    a = monte_carlo_validate(sc, plan, trials=3500, seed=3, threads=1)
    b = monte_carlo_validate(sc, plan, trials=3500, seed=3, threads=4)
    np.testing.assert_array_equal(a.state_violation_rate, b.state_violation_rate)
    np.testing.assert_array_equal(a.control_violation_rate, b.control_violation_rate)
    assert a.mean_cost == b.mean_cost


@pytest.mark.parametrize("name", ["two_static_obstacles", "one_static_obstacle_curved", "dynamic_overtake"])
def test_zero_noise_never_violates(scenarios, name):
    sc = scenarios[name].without_noise()
    plan = solve(sc)
    stats = monte_carlo_validate(sc, plan, trials=200, seed=1)
    assert stats.max_violation_rate == 0.0
    assert stats.collision_rate == 0.0
    rec = simulate_rollout(sc, plan, seed=4)
    np.testing.assert_allclose(rec.true_states, plan.states, atol=1e-9)
    np.testing.assert_allclose(rec.controls, plan.controls, atol=1e-9)


def test_cilqr_violates_more_at_active_steps(scenarios, plan_for):
    sc = scenarios["two_static_obstacles"]
    g, r = plan_for("two_static_obstacles"), plan_for("two_static_obstacles", "cilqr")
    sg = monte_carlo_validate(sc, g, trials=4000, seed=11)
    sr = monte_carlo_validate(sc, r, trials=4000, seed=11)
    # active: steps where the cilqr plan fails the tightened check
    active = np.argwhere(r.state_constraint_values > 0)
    assert len(active) > 0
    rates_r = sr.state_violation_rate[tuple(active.T)]
    rates_g = sg.state_violation_rate[tuple(active.T)]
    assert np.all(rates_r > rates_g)


def test_standard_errors(scenarios, plan_for):
    sc, plan = scenarios["two_static_obstacles"], plan_for("two_static_obstacles")
    n = 2000
    stats = monte_carlo_validate(sc, plan, trials=n, seed=2)
    p = sc.settings.p
    for rate, se in ((stats.state_violation_rate, stats.state_standard_error),
                     (stats.control_violation_rate, stats.control_standard_error)):
        np.testing.assert_allclose(se, np.sqrt(rate * (1 - rate) / n))
        low = rate <= 1 - p
        assert np.all(se[low] <= math.sqrt(p * (1 - p) / n) + 1e-15)
        assert np.all(se <= 0.5 / math.sqrt(n))


@pytest.mark.parametrize("trials, threads", [(0, 1), (-5, 1), (2.5, 1), (10, 0)])
def test_bad_parameters(scenarios, plan_for, trials, threads):
    with pytest.raises(BadParams):
        monte_carlo_validate(scenarios["two_static_obstacles"], plan_for("two_static_obstacles"),
                             trials=trials, threads=threads)


def test_rollout_record_shapes(scenarios, plan_for):
    sc, plan = scenarios["two_static_obstacles"], plan_for("two_static_obstacles")
    rec = simulate_rollout(sc, plan, seed=5)
    N = plan.horizon
    assert rec.true_states.shape == (N + 1, 4) and rec.estimates.shape == (N + 1, 4)
    assert rec.controls.shape == (N, 2)
    assert rec.state_constraint_values.shape == (N + 1, 2)
    assert rec.control_constraint_values.shape == (N, 4)
    assert rec.seed == 5 and isinstance(rec.collision, bool)
    again = simulate_rollout(sc, plan, seed=5)
    np.testing.assert_array_equal(rec.true_states, again.true_states)


def _linear_system(rng, n=3, N=12):
    A = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    B = rng.normal(size=(n, 1))
    W = rng.normal(size=(n, 2))
    H = rng.normal(size=(2, n))
    Sw = np.diag([0.05, 0.02])
    Sv = np.diag([0.1, 0.3])
    model = LinearModel(A, B, W=W, H=H, V=np.eye(2), process_noise_cov=Sw, measurement_noise_cov=Sv)
    U = rng.normal(size=(N, 1))
    X = np.empty((N + 1, n))
    X[0] = rng.normal(size=n)
    for k in range(N):
        X[k + 1] = A @ X[k] + B @ U[k]
    S0 = 0.2 * np.eye(n)
    return model, NominalTrajectory(X, U), S0


@pytest.mark.parametrize("p", [0.9, 0.98])
def test_linear_gaussian_open_loop_rate_is_exact(p):
    rng = np.random.default_rng(42)
    model, nom, S0 = _linear_system(rng)
    covs = propagate_variance(nom, Belief(nom.states[0], S0), model, measurement=False).covariances
    trials = 100_000
    sim = np.random.default_rng(99)
    x = nom.states[0] + sim.multivariate_normal(np.zeros(3), S0, size=trials)
    G = np.array([0.6, -0.8, 0.3])
    for k in range(nom.controls.shape[0]):
        x = x @ model.A.T + nom.controls[k] @ model.B.T + sim.multivariate_normal(
            np.zeros(2), model.process_noise_cov, size=trials) @ model.W.T
        # a constraint G x + h <= 0 whose tightened form is exactly active at the nominal
        h = -(G @ nom.states[k + 1]) - compute_gamma(G, covs[k + 1], p)
        rate = float(np.mean(x @ G + h > 0))
        se = math.sqrt(p * (1 - p) / trials)
        assert abs(rate - (1 - p)) <= 3 * se


@pytest.mark.parametrize("p", [0.9, 0.98])
def test_linear_gaussian_posterior_rate_is_exact(p):
    """Kalman estimation error under the library's gains has exactly the posterior covariance."""
    rng = np.random.default_rng(43)
    model, nom, S0 = _linear_system(rng)
    seq = propagate_variance(nom, Belief(nom.states[0], S0), model)
    trials = 100_000
    sim = np.random.default_rng(7)
    x = nom.states[0] + sim.multivariate_normal(np.zeros(3), S0, size=trials)
    xh = np.broadcast_to(nom.states[0], x.shape).copy()
    G = np.array([-0.2, 0.9, 0.5])
    hits = []
    for k in range(nom.controls.shape[0]):
        u = nom.controls[k]
        x = x @ model.A.T + u @ model.B.T + sim.multivariate_normal(
            np.zeros(2), model.process_noise_cov, size=trials) @ model.W.T
        y = x @ model.H.T + sim.multivariate_normal(np.zeros(2), model.measurement_noise_cov, size=trials)
        pred = xh @ model.A.T + u @ model.B.T
        xh = pred + (y - pred @ model.H.T) @ seq.gains[k + 1].T
        gamma = compute_gamma(G, seq.covariances[k + 1], p)
        # conditional on the belief mean sitting on the tightened boundary
        rate = float(np.mean((x - xh) @ G > gamma))
        hits.append(abs(rate - (1 - p)) <= 3 * math.sqrt(p * (1 - p) / trials))
    assert all(hits)
