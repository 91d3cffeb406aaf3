"""Outer barrier loop of the chance-constrained belief-space planner and its baselines.

Four modes share one pipeline:

``cilqg``
    closed-loop (Kalman-filtered) covariances tighten every constraint.
``open``
    covariances are propagated without measurement updates.
``cilqr``
    covariances are ignored, so no tightening is applied.
``gbsp``
    closed-loop tightening, with quadratic penalties in place of barriers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .constraints import ConstraintSet, build_constraint_set
from .errors import BadParams, BadProbability, InfeasibleStart, NoProgress
from .ilqr import QuadraticTrackingCost, augment_barrier

MODES = ("cilqg", "cilqr", "gbsp", "open")


@dataclass(frozen=True)
class SolverSettings:
    """Tuning knobs for :func:`solve`.

    ``p`` may equal 0.5, which disables tightening (gamma = 0) while keeping
    the rest of the pipeline unchanged.
    """

    p: float = 0.98
    t0: float = 1.0
    mu: float = 10.0
    outer_tol: float = 1e-3
    inner_tol: float = 1e-4
    max_outer: int = 20
    max_inner: int = 100
    t_max: float = 1e8
    rho_init: float = 0.0
    rho_min: float = 1e-6
    rho_max: float = 1e10
    rho_growth: float = 10.0
    rho_shrink: float = 0.5
    beta: float = 0.5
    max_line_search: int = 10
    mode: str = "cilqg"
    penalty_weight: float = 1e3
    penalty_max_outer: int = 50
    recovery_margin: float = 0.05
    recovery_weights: tuple = (1e2, 1e4, 1e6)
    max_blend: int = 10
    monotone_tol: float = 1e-10
    cost_tol: float = 1e-4
    settle_step: float = 1.0 / 16.0

    def __post_init__(self):
        if not (0.5 <= self.p < 1.0):
            raise BadProbability(f"p must lie in [0.5, 1), got {self.p}")
        if not self.t0 > 0:
            raise BadParams("t0 must be positive")
        if not self.mu > 1:
            raise BadParams("mu must exceed 1")
        if self.mode not in MODES:
            raise BadParams(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.penalty_weight < 0:
            raise BadParams("penalty_weight must be non-negative")
        if min(self.max_outer, self.max_inner, self.penalty_max_outer) < 1:
            raise BadParams("iteration limits must be positive")


@dataclass
class PlanResult:
    """Optimized plan, its belief trajectory and solver diagnostics.

    ``covariances`` are the ones the planner used (zero for ``cilqr``,
    open-loop for ``open``). ``belief_covariances`` are the closed-loop
    posterior covariances of the true noisy system along the same nominal;
    ``constraint_values`` are evaluated with them, so every mode is judged
    by the same tightened test.
    """

    mode: str
    states: np.ndarray
    controls: np.ndarray
    covariances: np.ndarray
    belief_covariances: np.ndarray
    kalman_gains: np.ndarray
    constraints: ConstraintSet
    state_constraint_values: np.ndarray
    control_constraint_values: np.ndarray
    k_ff: np.ndarray
    K_fb: np.ndarray
    cost: float
    converged: bool
    status: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    @property
    def max_constraint_value(self) -> float:
        parts = [self.state_constraint_values[1:].ravel(), self.control_constraint_values.ravel()]
        vals = np.concatenate(parts)
        return float(vals.max()) if vals.size else -math.inf

    @property
    def feasible(self) -> bool:
        return self.max_constraint_value <= 0.0


class _Problem:
    """Scenario data flattened into the arrays the kernels consume."""

    def __init__(self, scenario, settings: SolverSettings, kernels):
        self.sc = scenario
        self.s = settings
        self.k = kernels
        params = scenario.params
        self.L = float(params.wheelbase)
        self.tr = float(params.sampling_time)
        self.Sw = np.ascontiguousarray(params.process_noise_cov, dtype=float)
        self.Sv = np.ascontiguousarray(params.measurement_noise_cov, dtype=float)
        self.x0 = np.asarray(scenario.initial_mean, dtype=float)
        self.S0 = np.ascontiguousarray(scenario.initial_cov, dtype=float)
        self.Xref = np.ascontiguousarray(scenario.reference, dtype=float)
        self.Q = np.ascontiguousarray(scenario.Q, dtype=float)
        self.R = np.ascontiguousarray(scenario.R, dtype=float)
        self.Qf = np.ascontiguousarray(scenario.Qf, dtype=float)
        self.base = QuadraticTrackingCost(self.Q, self.R, self.Qf, self.Xref)

    def rollout(self, U):
        return self.k.bicycle_rollout(self.x0, np.ascontiguousarray(U, dtype=float), self.L, self.tr)

    def closed_loop(self, X, U):
        return self.k.bicycle_covariances(X, U, self.S0, self.Sw, self.Sv, self.L, self.tr, 1)

    def planning_covariances(self, X, U):
        mode = self.s.mode
        if mode == "cilqr":
            return np.zeros((X.shape[0], 4, 4))
        return self.k.bicycle_covariances(X, U, self.S0, self.Sw, self.Sv, self.L, self.tr,
                                          0 if mode == "open" else 1)[0]

    def constraints(self, X, U, covs) -> ConstraintSet:
        tighten = self.s.mode != "cilqr"
        return build_constraint_set(
            X, U, covs, self.s.p,
            static_obstacles=self.sc.static_obstacles,
            dynamic_obstacles=self.sc.dynamic_obstacles,
            box=self.sc.box,
            control_cov=self.sc.control_cov if tighten else None,
            tighten=tighten,
        )

    def linearize(self, X, U):
        covs = self.planning_covariances(X, U)
        return covs, self.constraints(X, U, covs)

    def true_cost(self, X, U) -> float:
        return float(self.base.value(X, U))

    def inner(self, X, U, cs: ConstraintSet, weight: float, penalty: bool, hx=None, hu=None):
        s = self.s
        return self.k.inner_solve(
            X, U, self.Xref, self.Q, self.R, self.Qf,
            np.ascontiguousarray(cs.Gx), np.ascontiguousarray(cs.hx if hx is None else hx),
            np.ascontiguousarray(cs.Gu), np.ascontiguousarray(cs.hu if hu is None else hu),
            self.L, self.tr, int(penalty), float(weight), s.max_inner, s.inner_tol,
            s.rho_init, s.rho_min, s.rho_max, s.rho_growth, s.rho_shrink, s.beta, s.max_line_search,
        )

    def gains(self, X, U, cs: ConstraintSet, weight: float, penalty: bool):
        s = self.s
        return self.k.backward_gains(
            X, U, self.Xref, self.Q, self.R, self.Qf,
            np.ascontiguousarray(cs.Gx), np.ascontiguousarray(cs.hx),
            np.ascontiguousarray(cs.Gu), np.ascontiguousarray(cs.hu),
            self.L, self.tr, int(penalty), float(weight), s.rho_min, s.rho_max, s.rho_growth,
        )


def _braking_controls(prob: _Problem, n_steps: int) -> np.ndarray:
    """Straight-wheel deceleration to standstill, then hold; used as a fallback seed."""
    v0 = float(prob.x0[2])
    box = prob.sc.box
    decel = -float(box.lower[0]) if box is not None and box.lower[0] < 0 else max(abs(v0), 1.0)
    U = np.zeros((n_steps, 2))
    if box is not None:
        U[:, 1] = np.clip(0.0, box.lower[1], box.upper[1])
    v = v0
    for k in range(n_steps):
        if abs(v) < 1e-12:
            break
        a = -math.copysign(min(decel, abs(v) / prob.tr), v)
        U[k, 0] = a
        v += a * prob.tr
    return U


def _recover(prob: _Problem, X, U, diag: dict):
    """Drive an infeasible seed into the strict interior with shifted quadratic penalties.

    Tries the given seed first, then a braking seed.
    """
    s = prob.s
    seeds = [U, _braking_controls(prob, U.shape[0])]
    cs = None
    for i, U in enumerate(seeds):
        X = prob.rollout(U)
        covs, cs = prob.linearize(X, U)
        if cs.strictly_feasible(X, U):
            diag["recovery_seed"] = i
            return X, U, covs, cs
        for w in s.recovery_weights:
            shifted = cs.hx + s.recovery_margin
            shifted[0] = -1.0
            Xn, Un, *_ = prob.inner(X, U, cs, w, True, hx=shifted, hu=cs.hu + s.recovery_margin)
            diag["recovery_weights"].append(w)
            X, U = prob.rollout(Un), Un
            covs, cs = prob.linearize(X, U)
            if cs.strictly_feasible(X, U):
                diag["recovery_seed"] = i
                return X, U, covs, cs
    raise InfeasibleStart(
        "initial controls violate the tightened constraints and penalty recovery did not restore "
        f"feasibility (max value {cs.max_violation(X, U):.4g})"
    )


def _barrier_loop(prob: _Problem, X, U, covs, cs, diag: dict):
    """Log-barrier outer loop with self-consistent acceptance of each inner solution.

    The inner solve sees constraints linearized (and tightened) at the current
    nominal. A candidate is accepted only if it is strictly feasible for the
    constraints rebuilt at the candidate itself and does not raise the true
    cost; otherwise the control update is halved up to ``max_blend`` times.
    The loop is settled once the true cost stops moving or only a small
    fraction of the update survives (the nominal sits at the fixed point of
    the tightening).
    """
    s = prob.s
    t = s.t0
    J_true = prob.true_cost(X, U)
    converged = False
    for outer in range(s.max_outer):
        weight = 1.0 / t
        Xn, Un, Jb, kff, Kfb, it, inner_ok, status = prob.inner(X, U, cs, weight, False)
        diag["inner_iterations"].append(int(it))
        diag["inner_status"].append(status)
        J_prev = J_true
        accepted = False
        step = 1.0
        for _ in range(s.max_blend):
            Uc = U + step * (Un - U)
            Xc = Xn if step == 1.0 else prob.rollout(Uc)
            covs_c, cs_c = prob.linearize(Xc, Uc)
            Jc = prob.true_cost(Xc, Uc)
            if cs_c.strictly_feasible(Xc, Uc) and Jc <= J_true + s.monotone_tol * max(abs(J_true), 1.0):
                X, U, covs, cs, J_true = Xc, Uc, covs_c, cs_c, Jc
                accepted = True
                break
            step *= 0.5
        if not accepted:
            step = 0.0
        diag["accepted_steps"].append(step)
        diag["true_costs"].append(J_true)
        gap = cs.count / t
        diag["outer_iterations"] = outer + 1
        diag["t"] = t
        settled = (abs(J_prev - J_true) <= s.cost_tol * max(abs(J_true), 1.0)
                   or step <= s.settle_step)
        if gap < s.outer_tol and inner_ok and settled:
            converged = True
            break
        t = min(t * s.mu, s.t_max)
    return X, U, covs, cs, 1.0 / t, converged


def _penalty_loop(prob: _Problem, X, U, covs, cs, diag: dict):
    s = prob.s
    converged = False
    for outer in range(s.penalty_max_outer):
        Xn, Un, Jp, kff, Kfb, it, inner_ok, status = prob.inner(X, U, cs, s.penalty_weight, True)
        diag["inner_iterations"].append(int(it))
        diag["inner_status"].append(status)
        change = float(np.max(np.abs(Un - U))) if U.size else 0.0
        X, U = Xn, Un
        covs, cs = prob.linearize(X, U)
        diag["true_costs"].append(prob.true_cost(X, U))
        diag["outer_iterations"] = outer + 1
        if change < 1e-6 and inner_ok:
            converged = True
            break
    return X, U, covs, cs, s.penalty_weight, converged


def solve(scenario, settings: SolverSettings | None = None, *, backend: str | None = None,
          raise_on_stall: bool = True) -> PlanResult:
    """Plan a chance-constrained trajectory for ``scenario``.

    ``settings`` defaults to the scenario's own settings. ``backend`` selects
    ``"compiled"`` or ``"python"`` kernels (default: whichever is active).
    Raises :class:`InfeasibleStart` when no strictly feasible seed can be
    found and :class:`NoProgress` (carrying the best plan as ``.result``)
    when the outer loop runs out of iterations.
    """
    settings = settings if settings is not None else scenario.settings
    kernels = _backend.get(backend)
    prob = _Problem(scenario, settings, kernels)
    t_start = time.perf_counter()
    diag = {"backend": "python" if kernels is _backend.python_kernels else "compiled",
            "inner_iterations": [], "inner_status": [], "accepted_steps": [], "true_costs": [],
            "recovery_weights": [], "recovered": False, "outer_iterations": 0}

    U = np.array(scenario.initial_controls, dtype=float)
    X = prob.rollout(U)
    covs, cs = prob.linearize(X, U)
    penalty = settings.mode == "gbsp"
    if penalty:
        X, U, covs, cs, weight, converged = _penalty_loop(prob, X, U, covs, cs, diag)
    else:
        if not cs.strictly_feasible(X, U):
            X, U, covs, cs = _recover(prob, X, U, diag)
            diag["recovered"] = True
        X, U, covs, cs, weight, converged = _barrier_loop(prob, X, U, covs, cs, diag)

    k_ff, K_fb = prob.gains(X, U, cs, weight, penalty)
    belief_covs, _, kalman_gains = prob.closed_loop(X, U)
    # Judge every mode with the closed-loop tightening at the final nominal.
    judge = replace(settings, mode="cilqg")
    judge_cs = _Problem(scenario, judge, kernels).constraints(X, U, belief_covs)
    diag["solve_time_s"] = time.perf_counter() - t_start
    diag["barrier_weight"] = weight
    # Tightening the planner itself used (zero for cilqr), then the one used for judging.
    diag["gamma_state"] = cs.gx
    diag["gamma_control"] = cs.gu
    diag["judge_gamma_state"] = judge_cs.gx
    diag["judge_gamma_control"] = judge_cs.gu
    result = PlanResult(
        mode=settings.mode, states=X, controls=U, covariances=np.asarray(covs),
        belief_covariances=np.asarray(belief_covs), kalman_gains=np.asarray(kalman_gains),
        constraints=judge_cs,
        state_constraint_values=judge_cs.state_values(X),
        control_constraint_values=judge_cs.control_values(U),
        k_ff=np.asarray(k_ff), K_fb=np.asarray(K_fb), cost=prob.true_cost(X, U),
        converged=converged, status="converged" if converged else "no_progress", diagnostics=diag,
    )
    if not converged and raise_on_stall:
        limit = settings.penalty_max_outer if penalty else settings.max_outer
        err = NoProgress(f"{settings.mode} outer loop did not converge in {limit} iterations")
        err.result = result
        raise err
    return result


def _with_mode(scenario, settings, mode):
    base = settings if settings is not None else scenario.settings
    return replace(base, mode=mode)


def solve_baseline_cilqr(scenario, settings: SolverSettings | None = None, **kw) -> PlanResult:
    """Deterministic constrained iLQR: covariances ignored, gamma identically zero."""
    return solve(scenario, _with_mode(scenario, settings, "cilqr"), **kw)


def solve_baseline_gbsp(scenario, settings: SolverSettings | None = None, **kw) -> PlanResult:
    """Soft-constrained variant with quadratic penalties instead of barriers."""
    return solve(scenario, _with_mode(scenario, settings, "gbsp"), **kw)


def solve_baseline_open(scenario, settings: SolverSettings | None = None, **kw) -> PlanResult:
    """Barrier planner whose covariances skip the measurement update."""
    return solve(scenario, _with_mode(scenario, settings, "open"), **kw)


__all__ = [
    "MODES", "PlanResult", "SolverSettings", "augment_barrier", "solve", "solve_baseline_cilqr",
    "solve_baseline_gbsp", "solve_baseline_open",
]
