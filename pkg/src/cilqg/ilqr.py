"""Iterative LQR inner loop: quadratization, backward pass, line-searched rollout.

The belief covariance does not enter this optimization; the belief mean is
identified with the nominal state trajectory. Constraint handling lives in
the cost object (log barrier or quadratic penalty over linear rows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet
from .errors import (
    BarrierDomainError,
    DomainError,
    LineSearchFailed,
    NonFiniteDerivative,
    NotPositiveDefinite,
    ShapeMismatch,
)
from .models import rollout
from .types import symmetrize


@dataclass(frozen=True)
class QuadratizedCost:
    l_x: np.ndarray
    l_xx: np.ndarray
    l0: float
    l_u: np.ndarray | None = None
    l_uu: np.ndarray | None = None
    l_ux: np.ndarray | None = None

    def __post_init__(self):
        for name in ("l_x", "l_xx", "l_u", "l_uu", "l_ux"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.array(val, dtype=float)
            if not np.all(np.isfinite(val)):
                raise NonFiniteDerivative(f"{name} is not finite")
            if name in ("l_xx", "l_uu"):
                val = symmetrize(val)
            object.__setattr__(self, name, val)


@dataclass
class TrajectoryDerivatives:
    lx: np.ndarray  # (N+1, n)
    lu: np.ndarray  # (N, m)
    lxx: np.ndarray  # (N+1, n, n)
    luu: np.ndarray  # (N, m, m)
    lux: np.ndarray  # (N, m, n)


@dataclass
class BackwardPassResult:
    k_ff: np.ndarray  # (N, m)
    K_fb: np.ndarray  # (N, m, n)
    V_x: np.ndarray  # (N+1, n)
    V_xx: np.ndarray  # (N+1, n, n)
    expected: tuple[float, float]  # linear and quadratic terms in alpha

    @property
    def expected_reduction(self) -> float:
        return -(self.expected[0] + self.expected[1])


@dataclass(frozen=True)
class ILQRSettings:
    max_iter: int = 100
    tol: float = 1e-4
    rho_init: float = 0.0
    rho_min: float = 1e-6
    rho_max: float = 1e10
    rho_growth: float = 10.0
    rho_shrink: float = 0.5
    beta: float = 0.5
    max_line_search: int = 10


@dataclass
class ILQRResult:
    states: np.ndarray
    controls: np.ndarray
    cost: float
    k_ff: np.ndarray
    K_fb: np.ndarray
    iterations: int
    converged: bool
    status: str


# --- costs -----------------------------------------------------------------

class QuadraticTrackingCost:
    """Stage ``(x - r)^T Q (x - r) + u^T R u``, terminal ``(x - r)^T Qf (x - r)``.

    Derivatives keep the factor 2 of the quadratic forms (``l_x = 2 Q (x - r)``).
    """

    def __init__(self, Q, R, Qf, x_ref):
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.Qf = np.asarray(Qf, dtype=float)
        self.x_ref = np.asarray(x_ref, dtype=float)

    def stage(self, k, x, u) -> float:
        e = np.asarray(x) - self.x_ref[k]
        u = np.asarray(u)
        return float(e @ self.Q @ e + u @ self.R @ u)

    def terminal(self, x) -> float:
        e = np.asarray(x) - self.x_ref[-1]
        return float(e @ self.Qf @ e)

    def value(self, X, U) -> float:
        N = U.shape[0]
        E = X - self.x_ref[: N + 1]
        run = np.einsum("ki,ij,kj->", E[:N], self.Q, E[:N]) + np.einsum("ki,ij,kj->", U, self.R, U)
        return float(run + E[N] @ self.Qf @ E[N])

    def derivatives(self, X, U) -> TrajectoryDerivatives:
        N, m = U.shape
        n = X.shape[1]
        E = X - self.x_ref[: N + 1]
        lx = np.empty((N + 1, n))
        lx[:N] = 2.0 * E[:N] @ self.Q.T
        lx[N] = 2.0 * self.Qf @ E[N]
        lxx = np.empty((N + 1, n, n))
        lxx[:N] = 2.0 * self.Q
        lxx[N] = 2.0 * self.Qf
        return TrajectoryDerivatives(
            lx=lx, lu=2.0 * U @ self.R.T, lxx=lxx,
            luu=np.broadcast_to(2.0 * self.R, (N, m, m)).copy(), lux=np.zeros((N, m, n)))

    def quadratize(self, k, x, u=None, terminal=False) -> QuadratizedCost:
        e = np.asarray(x, dtype=float) - self.x_ref[k]
        if terminal:
            return QuadratizedCost(l_x=2 * self.Qf @ e, l_xx=2 * self.Qf, l0=self.terminal(x))
        u = np.asarray(u, dtype=float)
        return QuadratizedCost(l_x=2 * self.Q @ e, l_xx=2 * self.Q, l0=self.stage(k, x, u),
                               l_u=2 * self.R @ u, l_uu=2 * self.R, l_ux=np.zeros((u.size, e.size)))


class ConstrainedCost:
    """Base cost plus log-barrier (``mode='barrier'``) or quadratic penalty terms.

    Barrier rows add ``-weight * log(-c)``; penalty rows add
    ``weight * max(0, c)^2``, with ``c = G . z + h`` for each linear row.
    """

    def __init__(self, base, constraints: ConstraintSet, weight: float, mode: str = "barrier"):
        if mode not in ("barrier", "penalty"):
            raise ValueError(f"unknown mode {mode!r}")
        self.base = base
        self.cs = constraints
        self.weight = float(weight)
        self.mode = mode

    def feasible(self, X, U) -> bool:
        if self.mode == "penalty":
            return True
        return self.cs.strictly_feasible(X, U)

    def _term(self, c: np.ndarray) -> float:
        if c.size == 0:
            return 0.0
        if self.mode == "barrier":
            if np.any(c >= 0.0):
                raise BarrierDomainError("barrier evaluated outside the strict interior")
            return -self.weight * float(np.sum(np.log(-c)))
        return self.weight * float(np.sum(np.maximum(c, 0.0) ** 2))

    def constraint_cost(self, X, U) -> float:
        cx = self.cs.state_values(X)[1:]
        return self._term(cx) + self._term(self.cs.control_values(U))

    def value(self, X, U) -> float:
        return self.base.value(X, U) + self.constraint_cost(X, U)

    def _grad_hess_weights(self, c):
        if self.mode == "barrier":
            return self.weight / (-c), self.weight / (c * c)
        pos = c > 0.0
        return 2.0 * self.weight * np.where(pos, c, 0.0), 2.0 * self.weight * pos

    def derivatives(self, X, U) -> TrajectoryDerivatives:
        d = self.base.derivatives(X, U)
        cs = self.cs
        if cs.Gx.shape[1]:
            c = cs.state_values(X)
            c[0] = -1.0
            g1, g2 = self._grad_hess_weights(c)
            g1[0] = g2[0] = 0.0
            d.lx = d.lx + np.einsum("kc,kcn->kn", g1, cs.Gx)
            d.lxx = d.lxx + np.einsum("kc,kci,kcj->kij", g2, cs.Gx, cs.Gx)
        if cs.Gu.shape[1]:
            c = cs.control_values(U)
            g1, g2 = self._grad_hess_weights(c)
            d.lu = d.lu + np.einsum("kc,kcm->km", g1, cs.Gu)
            d.luu = d.luu + np.einsum("kc,kci,kcj->kij", g2, cs.Gu, cs.Gu)
        return d

    def quadratize(self, k, x, u=None, terminal=False) -> QuadratizedCost:
        N = self.cs.Gu.shape[0]
        q = self.base.quadratize(k, x, u, terminal=terminal)
        lx, lxx, l0 = q.l_x, q.l_xx, q.l0
        if k > 0 and self.cs.Gx.shape[1]:
            c = self.cs.Gx[k] @ x + self.cs.hx[k]
            l0 += self._term(c)
            g1, g2 = self._grad_hess_weights(c)
            lx = lx + self.cs.Gx[k].T @ g1
            lxx = lxx + (self.cs.Gx[k].T * g2) @ self.cs.Gx[k]
        if terminal or k >= N:
            return QuadratizedCost(l_x=lx, l_xx=lxx, l0=l0)
        lu, luu = q.l_u, q.l_uu
        if self.cs.Gu.shape[1]:
            c = self.cs.Gu[k] @ u + self.cs.hu[k]
            l0 += self._term(c)
            g1, g2 = self._grad_hess_weights(c)
            lu = lu + self.cs.Gu[k].T @ g1
            luu = luu + (self.cs.Gu[k].T * g2) @ self.cs.Gu[k]
        return QuadratizedCost(l_x=lx, l_xx=lxx, l0=l0, l_u=lu, l_uu=luu, l_ux=q.l_ux)


def augment_barrier(base, constraints: ConstraintSet, t: float) -> ConstrainedCost:
    """Cost with ``-(1/t) log(-c)`` added for every constraint row."""
    if not t > 0:
        raise ValueError("barrier parameter t must be positive")
    return ConstrainedCost(base, constraints, 1.0 / t, mode="barrier")


def quadratize(cost, x_bar, u_bar=None, k: int = 0, terminal: bool = False, h: float = 1e-4) -> QuadratizedCost:
    """Second-order expansion of a stage (or terminal) cost at the nominal.

    Cost objects exposing ``quadratize`` are differentiated analytically; a
    plain callable ``l(x, u)`` (or ``l(x)`` when terminal) falls back to
    central finite differences.
    """
    if hasattr(cost, "quadratize"):
        return cost.quadratize(k, x_bar, u_bar, terminal=terminal)
    x_bar = np.asarray(x_bar, dtype=float)
    if terminal:
        f = lambda z: float(cost(z))  # noqa: E731
        z0 = x_bar
    else:
        u_bar = np.asarray(u_bar, dtype=float)
        n = x_bar.size
        f = lambda z: float(cost(z[:n], z[n:]))  # noqa: E731
        z0 = np.concatenate([x_bar, u_bar])
    dim = z0.size
    grad = np.empty(dim)
    hess = np.empty((dim, dim))
    f0 = f(z0)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = h
        grad[i] = (f(z0 + ei) - f(z0 - ei)) / (2 * h)
        for j in range(dim):
            ej = np.zeros(dim)
            ej[j] = h
            hess[i, j] = (f(z0 + ei + ej) - f(z0 + ei - ej) - f(z0 - ei + ej) + f(z0 - ei - ej)) / (4 * h * h)
    if terminal:
        return QuadratizedCost(l_x=grad, l_xx=hess, l0=f0)
    n = x_bar.size
    return QuadratizedCost(l_x=grad[:n], l_xx=hess[:n, :n], l0=f0, l_u=grad[n:],
                           l_uu=hess[n:, n:], l_ux=hess[n:, :n])


# --- passes ----------------------------------------------------------------

def linearize_trajectory(model, X, U):
    N = U.shape[0]
    n, m = X.shape[1], U.shape[1]
    A = np.empty((N, n, n))
    B = np.empty((N, n, m))
    for k in range(N):
        A[k], B[k], _ = model.dynamics_jacobians(X[k], U[k])
    return A, B


def backward_pass(A, B, derivs: TrajectoryDerivatives, rho: float = 0.0) -> BackwardPassResult:
    """Riccati-like sweep producing feedforward/feedback terms.

    Raises :class:`NotPositiveDefinite` when ``Q_uu + rho I`` is not positive
    definite at some step.
    """
    N, n, m = B.shape
    if A.shape != (N, n, n):
        raise ShapeMismatch("A and B sequences disagree")
    k_ff = np.zeros((N, m))
    K_fb = np.zeros((N, m, n))
    Vx = np.empty((N + 1, n))
    Vxx = np.empty((N + 1, n, n))
    Vx[N] = derivs.lx[N]
    Vxx[N] = derivs.lxx[N]
    d1 = d2 = 0.0
    eye = np.eye(m)
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        vx, vxx = Vx[k + 1], Vxx[k + 1]
        Qx = derivs.lx[k] + Ak.T @ vx
        Qu = derivs.lu[k] + Bk.T @ vx
        VA = vxx @ Ak
        Qxx = derivs.lxx[k] + Ak.T @ VA
        Qux = derivs.lux[k] + Bk.T @ VA
        Quu = derivs.luu[k] + Bk.T @ vxx @ Bk + rho * eye
        try:
            L = np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(f"Q_uu not positive definite at step {k} (rho={rho:g})") from None
        sol = np.linalg.solve(L.T, np.linalg.solve(L, np.column_stack([Qu, Qux])))
        kk = -sol[:, 0]
        KK = -sol[:, 1:]
        k_ff[k] = kk
        K_fb[k] = KK
        Vx[k] = Qx + Qux.T @ kk
        Vxx[k] = symmetrize(Qxx + Qux.T @ KK)
        d1 += float(kk @ Qu)
        d2 += 0.5 * float(kk @ Quu @ kk)
    return BackwardPassResult(k_ff=k_ff, K_fb=K_fb, V_x=Vx, V_xx=Vxx, expected=(d1, d2))


def forward_rollout(model, X, U, bp: BackwardPassResult, alpha: float, cost=None):
    """Closed-loop rollout ``u = u_bar + alpha k_ff + K_fb (x - x_bar)`` at zero noise.

    Returns ``(X_new, U_new, cost)``; the cost is ``inf`` when the rollout
    leaves the barrier domain and ``nan`` when no cost is given.
    """
    N = U.shape[0]
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    try:
        for k in range(N):
            Un[k] = U[k] + alpha * bp.k_ff[k] + bp.K_fb[k] @ (Xn[k] - X[k])
            Xn[k + 1] = model.step(Xn[k], Un[k])
    except DomainError:
        if cost is None:
            raise
        return Xn, Un, math.inf
    if cost is None:
        return Xn, Un, math.nan
    if hasattr(cost, "feasible") and not cost.feasible(Xn, Un):
        return Xn, Un, math.inf
    J = cost.value(Xn, Un)
    return Xn, Un, (J if math.isfinite(J) else math.inf)


def line_search(model, X, U, bp: BackwardPassResult, cost, J0: float, *, beta: float = 0.5,
                max_trials: int = 10):
    """Backtrack over alpha = 1, beta, beta^2, ... until the cost decreases.

    Rollouts leaving the barrier interior are rejected. Returns
    ``(X, U, J, alpha)``; a direction with zero feedforward returns the
    nominal unchanged.
    """
    if not np.any(bp.k_ff):
        return X, U, J0, 0.0
    alpha = 1.0
    for _ in range(max_trials):
        Xn, Un, J = forward_rollout(model, X, U, bp, alpha, cost)
        if J < J0:
            return Xn, Un, J, alpha
        alpha *= beta
    raise LineSearchFailed(f"no decrease after {max_trials} backtracking steps")


def solve_ilqr(model, cost, X, U, settings: ILQRSettings = ILQRSettings()) -> ILQRResult:
    """Run the inner loop from a nominal that lies in the cost's domain."""
    X = np.array(X, dtype=float)
    U = np.array(U, dtype=float)
    N, m = U.shape
    n = X.shape[1]
    if hasattr(cost, "feasible") and not cost.feasible(X, U):
        raise BarrierDomainError("inner loop started outside the barrier interior")
    J = cost.value(X, U)
    rho = settings.rho_init
    k_ff = np.zeros((N, m))
    K_fb = np.zeros((N, m, n))
    status = "max_iter"
    converged = False
    it = 0
    while it < settings.max_iter:
        it += 1
        A, B = linearize_trajectory(model, X, U)
        d = cost.derivatives(X, U)
        bp = None
        while bp is None:
            try:
                bp = backward_pass(A, B, d, rho)
            except NotPositiveDefinite:
                rho = max(settings.rho_min, rho) * settings.rho_growth
                if rho > settings.rho_max:
                    return ILQRResult(X, U, J, k_ff, K_fb, it, False, "rho_overflow")
        k_ff, K_fb = bp.k_ff, bp.K_fb
        if bp.expected_reduction <= 1e-12 * max(abs(J), 1.0):
            converged, status = True, "converged"
            break
        try:
            Xn, Un, Jn, _ = line_search(model, X, U, bp, cost, J, beta=settings.beta,
                                        max_trials=settings.max_line_search)
        except LineSearchFailed:
            rho = max(settings.rho_min, rho) * settings.rho_growth
            if rho > settings.rho_max:
                status = "stalled"
                break
            continue
        rel = (J - Jn) / max(abs(J), 1.0)
        X, U, J = Xn, Un, Jn
        rho *= settings.rho_shrink
        if rho < settings.rho_min:
            rho = 0.0
        if rel < settings.tol:
            converged, status = True, "converged"
            break
    return ILQRResult(X, U, J, k_ff, K_fb, it, converged, status)


def policy_gains(model, cost, X, U, rho: float = 0.0, rho_settings: ILQRSettings = ILQRSettings()):
    """Feedforward/feedback terms of one backward pass at the given nominal."""
    A, B = linearize_trajectory(model, X, U)
    d = cost.derivatives(X, U)
    while True:
        try:
            return backward_pass(A, B, d, rho)
        except NotPositiveDefinite:
            rho = max(rho_settings.rho_min, rho) * rho_settings.rho_growth
            if rho > rho_settings.rho_max:
                raise


__all__ = [
    "BackwardPassResult", "ConstrainedCost", "ILQRResult", "ILQRSettings", "QuadraticTrackingCost",
    "QuadratizedCost", "TrajectoryDerivatives", "augment_barrier", "backward_pass", "forward_rollout",
    "line_search", "linearize_trajectory", "policy_gains", "quadratize", "rollout", "solve_ilqr",
]
