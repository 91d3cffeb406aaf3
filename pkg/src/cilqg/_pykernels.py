"""Pure-Python implementations of the compiled bicycle kernels.

Signatures match ``cilqg._kernels`` one to one; each routine delegates to
the generic numpy machinery so the two backends share one algorithm.
"""

from __future__ import annotations

import math

import numpy as np

from .belief import propagate_variance
from .constraints import ConstraintSet
from .errors import DomainError, NotPositiveDefinite
from .ilqr import ConstrainedCost, ILQRSettings, QuadraticTrackingCost, policy_gains, solve_ilqr
from .models import BicycleModel, BicycleParams, rollout
from .types import Belief, NominalTrajectory


def _model(wheelbase, tr, sw=None, sv=None):
    return BicycleModel(BicycleParams(
        wheelbase=wheelbase, sampling_time=tr,
        process_noise_cov=np.zeros((2, 2)) if sw is None else sw,
        measurement_noise_cov=np.zeros((4, 4)) if sv is None else sv,
    ))


def _cost(Xref, Q, R, Qf, Gx, hx, Gu, hu, penalty, weight):
    N = Gu.shape[0]
    cs = ConstraintSet(Gx=np.asarray(Gx, float), hx=np.asarray(hx, float), gx=np.zeros_like(hx),
                       Gu=np.asarray(Gu, float), hu=np.asarray(hu, float), gu=np.zeros((N, Gu.shape[1])))
    base = QuadraticTrackingCost(Q, R, Qf, Xref)
    return ConstrainedCost(base, cs, weight, mode="penalty" if penalty else "barrier")


def bicycle_rollout(x0, U, wheelbase, tr):
    try:
        return rollout(_model(wheelbase, tr), x0, U)
    except DomainError as exc:
        raise ValueError(str(exc)) from None


def constrained_cost(X, U, Xref, Q, R, Qf, Gx, hx, Gu, hu, wheelbase, tr, penalty, weight):
    U = np.asarray(U, float)
    if np.any(np.abs(U[:, 1]) >= 0.5 * np.pi):
        return math.inf
    cost = _cost(Xref, Q, R, Qf, Gx, hx, Gu, hu, penalty, weight)
    if not cost.feasible(X, U):
        return math.inf
    return cost.value(np.asarray(X, float), U)


def backward_gains(X, U, Xref, Q, R, Qf, Gx, hx, Gu, hu, wheelbase, tr, penalty, weight,
                   rho_min, rho_max, rho_growth):
    cost = _cost(Xref, Q, R, Qf, Gx, hx, Gu, hu, penalty, weight)
    settings = ILQRSettings(rho_min=rho_min, rho_max=rho_max, rho_growth=rho_growth)
    try:
        bp = policy_gains(_model(wheelbase, tr), cost, np.asarray(X, float), np.asarray(U, float),
                          rho_settings=settings)
    except NotPositiveDefinite:
        raise ArithmeticError("Q_uu not positive definite for any admissible regularization") from None
    return bp.k_ff, bp.K_fb


def inner_solve(X, U, Xref, Q, R, Qf, Gx, hx, Gu, hu, wheelbase, tr, penalty, weight, max_iter, tol,
                rho_init, rho_min, rho_max, rho_growth, rho_shrink, beta, max_ls):
    cost = _cost(Xref, Q, R, Qf, Gx, hx, Gu, hu, penalty, weight)
    X = np.array(X, dtype=float)
    U = np.array(U, dtype=float)
    N = U.shape[0]
    if not cost.feasible(X, U):
        return X, U, math.inf, np.zeros((N, 2)), np.zeros((N, 2, 4)), 0, False, "infeasible_start"
    settings = ILQRSettings(max_iter=max_iter, tol=tol, rho_init=rho_init, rho_min=rho_min,
                            rho_max=rho_max, rho_growth=rho_growth, rho_shrink=rho_shrink,
                            beta=beta, max_line_search=max_ls)
    res = solve_ilqr(_model(wheelbase, tr), cost, X, U, settings)
    return (res.states, res.controls, res.cost, res.k_ff, res.K_fb, res.iterations,
            res.converged, res.status)


def bicycle_covariances(X, U, Sigma0, Sw, Sv, wheelbase, tr, measurement):
    model = _model(wheelbase, tr, Sw, Sv)
    X = np.asarray(X, float)
    seq = propagate_variance(NominalTrajectory(X, U), Belief(X[0], Sigma0), model,
                             measurement=bool(measurement))
    return seq.covariances, seq.priors, seq.gains
