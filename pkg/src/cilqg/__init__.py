"""Chance-constrained iterative LQG planning in Gaussian belief space.

The planner optimizes a control sequence for a stochastic, partially observed
vehicle. Kalman-filtered covariances tighten every linearized constraint so
that each one holds with probability ``p``. Typical use::

    from cilqg import builtin_scenario, solve, monte_carlo_validate

    scenario = builtin_scenario("two_static_obstacles")
    plan = solve(scenario)
    stats = monte_carlo_validate(scenario, plan, trials=10_000, seed=0)
"""

from __future__ import annotations

from ._backend import BACKEND
from .belief import KalmanStep, VarianceSequence, measurement_update, prior_update, propagate_mean, propagate_variance
from .constraints import (
    ConstraintSet,
    ControlBox,
    ConvexPolygonObstacle,
    HalfSpace,
    LinearChanceConstraint,
    UncertainObstacleState,
    build_constraint_set,
    compute_gamma,
    control_chance_constraints,
    convex_feasible_set,
    linearize_constraint,
    obstacle_uncertainty_constraint,
    signed_distance,
    transform_chance_constraint,
)
from .errors import *  # noqa: F401,F403
from .ilqr import (
    ILQRResult,
    ILQRSettings,
    QuadraticTrackingCost,
    augment_barrier,
    backward_pass,
    forward_rollout,
    quadratize,
    solve_ilqr,
)
from .models import (
    BicycleModel,
    BicycleParams,
    LinearModel,
    bicycle_measure,
    bicycle_step,
    linearize_dynamics,
    linearize_measurement,
    rollout,
    sample_measurement_noise,
    sample_process_noise,
)
from .montecarlo import MonteCarloStats, RolloutRecord, monte_carlo_validate, simulate_rollout
from .scenario import (
    BUILTIN_NAMES,
    Scenario,
    builtin_document,
    builtin_scenario,
    builtin_scenarios,
    generate_reference,
    load_scenario,
    resolve_scenario,
)
from .solver import (
    MODES,
    PlanResult,
    SolverSettings,
    solve,
    solve_baseline_cilqr,
    solve_baseline_gbsp,
    solve_baseline_open,
)
from .types import (
    Belief,
    Ellipse,
    LinearizedStep,
    NominalTrajectory,
    chi2_2dof_quantile,
    confidence_ellipse,
    ellipse_intersects_polygon,
    make_covariance,
)

__version__ = "0.1.0"
