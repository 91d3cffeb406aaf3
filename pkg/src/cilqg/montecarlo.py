"""Closed-loop Monte Carlo check of a plan's chance constraints.

Each trial draws the initial state from the initial belief, then runs the
true nonlinear bicycle with sampled process and measurement noise. The plan's
LQG policy is executed in the loop: an extended Kalman filter uses the
planned gains, and the control is ``u = u_bar + K_fb (x_hat - x_bar)``.
Trials are simulated in fixed-size chunks. Each chunk draws from its own
child of ``SeedSequence(seed)``, so statistics do not depend on the thread
count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constraints import signed_distance_batch
from .errors import BadParams
from .models import bicycle_step_batch

CHUNK = 1000
_STEER_LIMIT = 0.5 * math.pi - 1e-6


@dataclass(frozen=True)
class RolloutRecord:
    """One closed-loop trial."""

    true_states: np.ndarray  # (N+1, 4)
    estimates: np.ndarray  # (N+1, 4)
    controls: np.ndarray  # (N, 2)
    state_constraint_values: np.ndarray  # (N+1, c) raw g(x_true); row 0 included
    control_constraint_values: np.ndarray  # (N, 2m)
    collision: bool
    seed: int


@dataclass(frozen=True)
class MonteCarloStats:
    """Violation statistics over all trials.

    ``state_violation_rate[k, j]`` is the fraction of trials whose true state
    violates raw state constraint ``j`` at step ``k``. Standard errors are
    binomial, ``sqrt(r (1 - r) / trials)``.
    """

    trials: int
    seed: int
    state_names: tuple
    control_names: tuple
    state_violation_rate: np.ndarray  # (N+1, c)
    state_standard_error: np.ndarray
    control_violation_rate: np.ndarray  # (N, 2m)
    control_standard_error: np.ndarray
    collision_rate: float
    mean_cost: float

    @property
    def max_state_violation_rate(self) -> float:
        r = self.state_violation_rate
        return float(r.max()) if r.size else 0.0

    @property
    def max_control_violation_rate(self) -> float:
        r = self.control_violation_rate
        return float(r.max()) if r.size else 0.0

    @property
    def max_violation_rate(self) -> float:
        return max(self.max_state_violation_rate, self.max_control_violation_rate)


class _Simulator:
    def __init__(self, scenario, plan):
        self.sc = scenario
        self.plan = plan
        p = scenario.params
        self.L = float(p.wheelbase)
        self.tr = float(p.sampling_time)
        self.Sw = np.asarray(p.process_noise_cov, dtype=float)
        self.Sv = np.asarray(p.measurement_noise_cov, dtype=float)
        self.Xbar = np.asarray(plan.states, dtype=float)
        self.Ubar = np.asarray(plan.controls, dtype=float)
        self.Kfb = np.asarray(plan.K_fb, dtype=float)
        self.gains = np.asarray(plan.kalman_gains, dtype=float)
        self.N = self.Ubar.shape[0]
        self.ref = np.asarray(scenario.reference, dtype=float)[: self.N + 1]
        self.box = scenario.box

    @staticmethod
    def _factor(cov):
        cov = np.asarray(cov, dtype=float)
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        return V * np.sqrt(np.clip(w, 0.0, None))

    def run(self, rng: np.random.Generator, n: int, keep: bool = False):
        N = self.N
        sc = self.sc
        x = self.Xbar[0] + rng.standard_normal((n, 4)) @ self._factor(sc.initial_cov).T
        xh = np.broadcast_to(np.asarray(sc.initial_mean, dtype=float), (n, 4)).copy()
        fw = self._factor(self.Sw)
        fv = self._factor(self.Sv)
        n_static = len(sc.static_obstacles)
        n_dyn = len(sc.dynamic_obstacles)
        dyn_f = [[self._factor(c) for c in o.covariances[: N + 1]] for o in sc.dynamic_obstacles]
        svals = np.full((N + 1, n_static + n_dyn, n), -np.inf)
        collided = np.zeros(n, dtype=bool)
        cost = np.zeros(n)
        cu = 0 if self.box is None else 2 * self.Ubar.shape[1]
        cvals = np.empty((N, cu, n))
        if keep:
            Xs, Xhs, Us = [x.copy()], [xh.copy()], []

        def constraints(k, x):
            pos = x[:, :2]
            for j, obs in enumerate(sc.static_obstacles):
                phi, _ = signed_distance_batch(obs.vertices, pos)
                svals[k, j] = obs.margin - phi
                collided[:] |= phi < 0.0
            for j, obs in enumerate(sc.dynamic_obstacles):
                z = obs.means[k] + rng.standard_normal((n, 2)) @ dyn_f[j][k].T
                dist = np.hypot(*(pos - z).T)
                svals[k, n_static + j] = obs.margin - dist
                collided[:] |= dist < obs.margin

        constraints(0, x)
        for k in range(N):
            e = x - self.ref[k]
            u = self.Ubar[k] + (xh - self.Xbar[k]) @ self.Kfb[k].T
            u[:, 1] = np.clip(u[:, 1], -_STEER_LIMIT, _STEER_LIMIT)
            cost += np.einsum("ti,ij,tj->t", e, sc.Q, e) + np.einsum("ti,ij,tj->t", u, sc.R, u)
            if cu:
                cvals[k, :cu // 2] = (u - self.box.upper).T
                cvals[k, cu // 2:] = (self.box.lower - u).T
            w = rng.standard_normal((n, 2)) @ fw.T
            x = bicycle_step_batch(x, u, w, self.L, self.tr)
            y = x + x[:, 2:3] * (rng.standard_normal((n, 4)) @ fv.T)
            pred = bicycle_step_batch(xh, u, np.zeros((n, 2)), self.L, self.tr)
            xh = pred + (y - pred) @ self.gains[k + 1].T
            constraints(k + 1, x)
            if keep:
                Xs.append(x.copy())
                Xhs.append(xh.copy())
                Us.append(u.copy())
        e = x - self.ref[N]
        cost += np.einsum("ti,ij,tj->t", e, sc.Qf, e)
        out = {"svals": svals, "cvals": cvals, "collided": collided, "cost": cost}
        if keep:
            out.update(X=np.stack(Xs, 1), Xh=np.stack(Xhs, 1), U=np.stack(Us, 1))
        return out


def _chunk_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, CHUNK)
    return [CHUNK] * full + ([rest] if rest else [])


def monte_carlo_validate(scenario, plan, trials: int = 10_000, seed: int = 0,
                         threads: int = 1) -> MonteCarloStats:
    """Simulate ``trials`` closed-loop executions of ``plan`` and tally raw-constraint violations."""
    if int(trials) != trials or trials < 1:
        raise BadParams("trials must be a positive integer")
    if threads < 1:
        raise BadParams("threads must be positive")
    trials = int(trials)
    sim = _Simulator(scenario, plan)
    sizes = _chunk_sizes(trials)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def job(i):
        return sim.run(np.random.default_rng(children[i]), sizes[i])

    if threads == 1:
        parts = [job(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))

    s_viol = sum((p["svals"] > 0).sum(axis=2) for p in parts)
    c_viol = sum((p["cvals"] > 0).sum(axis=2) for p in parts)
    collisions = sum(int(p["collided"].sum()) for p in parts)
    total_cost = math.fsum(float(p["cost"].sum()) for p in parts)
    s_rate = s_viol / trials
    c_rate = c_viol / trials
    names_s = tuple(o.name for o in scenario.static_obstacles) + tuple(o.name for o in scenario.dynamic_obstacles)
    m = plan.controls.shape[1]
    names_c = () if scenario.box is None else tuple(
        [f"u{j}_upper" for j in range(m)] + [f"u{j}_lower" for j in range(m)])
    return MonteCarloStats(
        trials=trials, seed=seed, state_names=names_s, control_names=names_c,
        state_violation_rate=s_rate, state_standard_error=np.sqrt(s_rate * (1 - s_rate) / trials),
        control_violation_rate=c_rate, control_standard_error=np.sqrt(c_rate * (1 - c_rate) / trials),
        collision_rate=collisions / trials, mean_cost=total_cost / trials,
    )


def simulate_rollout(scenario, plan, seed: int = 0) -> RolloutRecord:
    """A single traced closed-loop trial."""
    sim = _Simulator(scenario, plan)
    out = sim.run(np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]), 1, keep=True)
    return RolloutRecord(
        true_states=out["X"][0], estimates=out["Xh"][0], controls=out["U"][0],
        state_constraint_values=out["svals"][:, :, 0], control_constraint_values=out["cvals"][:, :, 0],
        collision=bool(out["collided"][0]), seed=seed,
    )


__all__ = ["CHUNK", "MonteCarloStats", "RolloutRecord", "monte_carlo_validate", "simulate_rollout"]
