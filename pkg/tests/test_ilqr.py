from __future__ import annotations

import math

import numpy as np
import pytest

from cilqg import (
    BicycleModel,
    BicycleParams,
    ConstraintSet,
    ILQRSettings,
    LinearModel,
    QuadraticTrackingCost,
    augment_barrier,
    backward_pass,
    forward_rollout,
    quadratize,
    rollout,
    solve_ilqr,
)
from cilqg.errors import BarrierDomainError, LineSearchFailed, NonFiniteDerivative, NotPositiveDefinite
from cilqg.ilqr import ConstrainedCost, QuadratizedCost, line_search, linearize_trajectory, policy_gains
from oracles import batch_lqr, riccati_lqr


def random_lqr(rng):
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 3))
    N = int(rng.integers(1, 51))
    A = np.eye(n) + 0.2 * rng.normal(size=(n, n))
    # keep the spectral radius near one so the dense oracle stays well conditioned
    A /= max(1.0, max(abs(np.linalg.eigvals(A))) / 1.05)
    B = rng.normal(size=(n, m))
    Lq, Lr = rng.normal(size=(n, n)), rng.normal(size=(m, m))
    Q = Lq @ Lq.T + 0.1 * np.eye(n)
    R = Lr @ Lr.T + 0.1 * np.eye(m)
    Qf = 3.0 * Q
    return A, B, Q, R, Qf, rng.normal(size=n), N


def one_pass(A, B, Q, R, Qf, x0, N):
    model = LinearModel(A, B)
    cost = QuadraticTrackingCost(Q, R, Qf, np.zeros((N + 1, A.shape[0])))
    U = np.zeros((N, B.shape[1]))
    X = rollout(model, x0, U)
    Aseq, Bseq = linearize_trajectory(model, X, U)
    bp = backward_pass(Aseq, Bseq, cost.derivatives(X, U))
    Xn, Un, J = forward_rollout(model, X, U, bp, 1.0, cost)
    return Xn, Un, J, cost, bp, X, U, model


def test_one_pass_recovers_riccati_solution():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        A, B, Q, R, Qf, x0, N = random_lqr(rng)
        Xn, Un, J, cost, *_ = one_pass(A, B, Q, R, Qf, x0, N)
        Xr, Ur = riccati_lqr(A, B, Q, R, Qf, x0, N)
        Xb, Ub = batch_lqr(A, B, Q, R, Qf, x0, N)
        scale = max(1.0, np.abs(Ur).max())
        assert np.max(np.abs(Un - Ur)) <= 1e-9 * scale
        assert np.max(np.abs(Un - Ub)) <= 1e-7 * scale
        assert J == pytest.approx(cost.value(Xr, Ur), rel=1e-10)


def test_step_fraction_descends_on_lqr():
    rng = np.random.default_rng(3)
    A, B, Q, R, Qf, x0, N = random_lqr(rng)
    _, _, _, cost, bp, X, U, model = one_pass(A, B, Q, R, Qf, x0, N)
    J0 = cost.value(X, U)
    Xz, Uz, Jz = forward_rollout(model, X, U, bp, 0.0, cost)
    np.testing.assert_array_equal(Uz, U)
    assert Jz == J0
    for alpha in (1.0, 0.5, 0.1, 1e-3):
        assert forward_rollout(model, X, U, bp, alpha, cost)[2] <= J0


def test_scalar_one_step_hand_solution():
    A = np.ones((1, 1, 1))
    B = np.ones((1, 1, 1))
    cost = QuadraticTrackingCost([[1.0]], [[1.0]], [[1.0]], np.zeros((2, 1)))
    X = np.array([[1.0], [1.0]])
    U = np.zeros((1, 1))
    bp = backward_pass(A, B, cost.derivatives(X, U))
    assert bp.k_ff[0, 0] == pytest.approx(-0.5, abs=1e-12)
    assert bp.K_fb[0, 0, 0] == pytest.approx(-0.5, abs=1e-12)
    # minimize u^2 + (1 + u)^2 + ... at x=1 gives u = -1/2
    assert U[0, 0] + bp.k_ff[0, 0] == pytest.approx(-0.5, abs=1e-12)


def test_stationary_nominal_has_zero_feedforward():
    model = LinearModel(np.eye(2), np.eye(2))
    cost = QuadraticTrackingCost(np.eye(2), np.eye(2), np.eye(2), np.zeros((6, 2)))
    X, U = np.zeros((6, 2)), np.zeros((5, 2))
    Aseq, Bseq = linearize_trajectory(model, X, U)
    bp = backward_pass(Aseq, Bseq, cost.derivatives(X, U))
    np.testing.assert_array_equal(bp.k_ff, 0.0)
    Xl, Ul, J, alpha = line_search(model, X, U, bp, cost, cost.value(X, U))
    assert alpha == 0.0 and J == 0.0
    np.testing.assert_array_equal(Ul, U)


def test_non_pd_quu_raises():
    cost = QuadraticTrackingCost([[1.0]], [[-5.0]], [[1.0]], np.zeros((2, 1)))
    with pytest.raises(NotPositiveDefinite):
        backward_pass(np.ones((1, 1, 1)), np.ones((1, 1, 1)), cost.derivatives(np.ones((2, 1)), np.zeros((1, 1))))
    bp = policy_gains(LinearModel([[1.0]], [[1.0]]), cost, np.ones((2, 1)), np.zeros((1, 1)))
    assert np.all(np.isfinite(bp.k_ff))


def test_value_hessian_symmetric_psd():
    rng = np.random.default_rng(8)
    A, B, Q, R, Qf, x0, N = random_lqr(rng)
    *_, bp, _, _, _ = one_pass(A, B, Q, R, Qf, x0, N)
    for V in bp.V_xx:
        np.testing.assert_array_equal(V, V.T)
        assert np.linalg.eigvalsh(V).min() >= -1e-9


def test_quadratize_tracking_cost():
    cost = QuadraticTrackingCost(np.eye(3), np.eye(2), 5 * np.eye(3), np.zeros((4, 3)))
    x0 = np.array([1.0, -2.0, 0.5])
    q = quadratize(cost, x0, np.zeros(2), k=0)
    np.testing.assert_array_equal(q.l_x, 2 * x0)
    np.testing.assert_array_equal(q.l_xx, 2 * np.eye(3))
    np.testing.assert_array_equal(q.l_ux, np.zeros((2, 3)))
    q = quadratize(cost, np.zeros(3), np.zeros(2), k=1)
    np.testing.assert_array_equal(q.l_x, 0.0)
    np.testing.assert_array_equal(q.l_u, 0.0)


def test_quadratize_finite_difference_oracle():
    cost = QuadraticTrackingCost(np.diag([1.0, 2.0]), np.diag([3.0]), np.eye(2), np.ones((3, 2)))
    x, u = np.array([0.3, -0.7]), np.array([0.4])
    exact = quadratize(cost, x, u, k=1)
    fd = quadratize(lambda xx, uu: cost.stage(1, xx, uu), x, u)
    for name in ("l_x", "l_xx", "l_u", "l_uu", "l_ux"):
        np.testing.assert_allclose(getattr(fd, name), getattr(exact, name), atol=1e-5)
    const = quadratize(lambda xx, uu: 4.2, x, u)
    for name in ("l_x", "l_xx", "l_u", "l_uu", "l_ux"):
        np.testing.assert_allclose(getattr(const, name), 0.0, atol=1e-8)
    term = quadratize(lambda xx: float(xx @ xx), x, terminal=True)
    np.testing.assert_allclose(term.l_xx, 2 * np.eye(2), atol=1e-5)


def test_quadratized_cost_symmetrizes_and_checks():
    q = QuadratizedCost(l_x=np.zeros(2), l_xx=np.array([[1.0, 2.0], [0.0, 1.0]]), l0=0.0)
    np.testing.assert_array_equal(q.l_xx, [[1, 1], [1, 1]])
    with pytest.raises(NonFiniteDerivative):
        QuadratizedCost(l_x=np.array([np.nan]), l_xx=np.eye(1), l0=0.0)


def scalar_constraint_set(N, G, h):
    """One scalar state row per step (step 0 inert), no control rows."""
    Gx = np.zeros((N + 1, 1, 1))
    Gx[1:] = G
    hx = np.full((N + 1, 1), float(h))
    hx[0] = -1.0
    return ConstraintSet(Gx=Gx, hx=hx, gx=np.zeros((N + 1, 1)), Gu=np.zeros((N, 0, 1)), hu=np.zeros((N, 0)),
                         gu=np.zeros((N, 0)))


def test_barrier_scalar_example():
    base = QuadraticTrackingCost([[0.0]], [[0.0]], [[0.0]], np.zeros((2, 1)))
    cost = augment_barrier(base, scalar_constraint_set(1, 1.0, 0.0), 1.0)
    X, U = np.array([[0.0], [-1.0]]), np.zeros((1, 1))
    assert cost.value(X, U) == 0.0
    assert cost.derivatives(X, U).lx[1, 0] == pytest.approx(1.0)


def test_barrier_vanishes_far_inside_and_diverges_at_boundary():
    base = QuadraticTrackingCost([[1.0]], [[1.0]], [[1.0]], np.zeros((2, 1)))
    cs = scalar_constraint_set(1, 1.0, 0.0)
    U = np.zeros((1, 1))
    far = np.array([[0.0], [-1e3]])
    big_t = augment_barrier(base, cs, 1e8)
    assert abs(big_t.value(far, U) - base.value(far, U)) < 1e-6
    small = augment_barrier(base, cs, 1.0)
    vals = [small.value(np.array([[0.0], [-10.0 ** -e]]), U) for e in (1, 5, 50, 300)]
    assert vals == sorted(vals) and vals[-1] > 600
    with pytest.raises(BarrierDomainError):
        small.value(np.array([[0.0], [0.0]]), U)
    with pytest.raises(ValueError):
        augment_barrier(base, cs, 0.0)


def test_line_search_backtracks_to_stay_feasible():
    N = 5
    model = LinearModel([[1.0]], [[1.0]])
    base = QuadraticTrackingCost([[1.0]], [[0.1]], [[1.0]], np.full((N + 1, 1), 10.0))
    barrier = augment_barrier(base, scalar_constraint_set(N, 1.0, -1.0), 10.0)  # x <= 1
    X, U = np.zeros((N + 1, 1)), np.zeros((N, 1))
    Aseq, Bseq = linearize_trajectory(model, X, U)
    bp = backward_pass(Aseq, Bseq, base.derivatives(X, U))
    full = forward_rollout(model, X, U, bp, 1.0)[0]
    assert full[1:].max() > 1.0
    Xn, Un, J, alpha = line_search(model, X, U, bp, barrier, barrier.value(X, U))
    assert 0.0 < alpha < 1.0
    assert np.all(Xn[1:] < 1.0) and J < barrier.value(X, U)


def test_line_search_failure():
    N = 2
    model = LinearModel([[1.0]], [[1.0]])
    base = QuadraticTrackingCost([[1.0]], [[1.0]], [[1.0]], np.zeros((N + 1, 1)))
    X, U = np.zeros((N + 1, 1)), np.zeros((N, 1))
    Aseq, Bseq = linearize_trajectory(model, X, U)
    bp = backward_pass(Aseq, Bseq, base.derivatives(X, U))
    bp.k_ff[:] = 1.0  # an ascent direction
    with pytest.raises(LineSearchFailed):
        line_search(model, X, U, bp, base, base.value(X, U), max_trials=4)


def test_q_u_matches_closed_loop_finite_difference():
    """Q_u equals the cost gradient w.r.t. u_k when later steps follow the feedback policy."""
    model = BicycleModel(BicycleParams())
    rng = np.random.default_rng(17)
    for _ in range(5):
        N = 12
        U = np.column_stack([rng.uniform(-1, 1, N), rng.uniform(-0.2, 0.2, N)])
        X = rollout(model, np.array([0, 0, 5.0, 0.1]), U)
        ref = X + rng.normal(scale=0.5, size=X.shape)
        cost = QuadraticTrackingCost(np.diag([1.0, 2.0, 0.5, 1.0]), np.diag([0.3, 2.0]), np.eye(4) * 4, ref)
        Aseq, Bseq = linearize_trajectory(model, X, U)
        d = cost.derivatives(X, U)
        bp = backward_pass(Aseq, Bseq, d)
        for k in (0, 5, N - 1):
            Quu = d.luu[k] + Bseq[k].T @ bp.V_xx[k + 1] @ Bseq[k]
            Qu = -Quu @ bp.k_ff[k]
            grad = np.empty(2)
            for j in range(2):
                vals = []
                for h in (1e-6, -1e-6):
                    Un = U.copy()
                    Un[k, j] += h
                    x = X[k].copy()
                    Xs = X.copy()
                    for i in range(k, N):
                        if i > k:
                            Un[i] = U[i] + bp.K_fb[i] @ (x - X[i])
                        x = model.step(x, Un[i])
                        Xs[i + 1] = x
                    vals.append(cost.value(Xs, Un))
                grad[j] = (vals[0] - vals[1]) / 2e-6
            np.testing.assert_allclose(Qu, grad, rtol=1e-4, atol=1e-4)


def test_solve_ilqr_bicycle_tracking():
    model = BicycleModel(BicycleParams())
    N = 30
    ref = np.column_stack([5.0 * 0.2 * np.arange(N + 1), np.full(N + 1, 1.0), np.full(N + 1, 5.0), np.zeros(N + 1)])
    cost = QuadraticTrackingCost(np.diag([1.0, 5.0, 1.0, 1.0]), np.eye(2), 10 * np.eye(4), ref)
    U = np.zeros((N, 2))
    X = rollout(model, np.array([0, 0, 5.0, 0]), U)
    res = solve_ilqr(model, cost, X, U, ILQRSettings(tol=1e-8))
    assert res.converged
    assert res.cost < 0.2 * cost.value(X, U)
    assert abs(res.states[-1, 1] - 1.0) < 0.1


def test_solve_ilqr_requires_interior_start():
    N = 2
    base = QuadraticTrackingCost([[1.0]], [[1.0]], [[1.0]], np.zeros((N + 1, 1)))
    cost = ConstrainedCost(base, scalar_constraint_set(N, 1.0, 1.0), 1.0)
    with pytest.raises(BarrierDomainError):
        solve_ilqr(LinearModel([[1.0]], [[1.0]]), cost, np.zeros((N + 1, 1)), np.zeros((N, 1)))


def test_penalty_mode_is_quadratic_outside():
    base = QuadraticTrackingCost([[0.0]], [[0.0]], [[0.0]], np.zeros((2, 1)))
    cost = ConstrainedCost(base, scalar_constraint_set(1, 1.0, 0.0), 3.0, mode="penalty")
    assert cost.value(np.array([[0.0], [-2.0]]), np.zeros((1, 1))) == 0.0
    assert cost.value(np.array([[0.0], [2.0]]), np.zeros((1, 1))) == pytest.approx(12.0)
    assert math.isfinite(cost.value(np.array([[0.0], [0.0]]), np.zeros((1, 1))))
