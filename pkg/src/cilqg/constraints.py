"""Chance-constraint transformation and collision-avoidance geometry.

A scalar constraint ``g(x) <= 0`` is linearized at the nominal to
``G x + m <= 0`` and tightened by ``gamma`` so that the deterministic
constraint ``G z + m + gamma <= 0`` on the mean implies
``Pr(g(x) <= 0) >= p`` for Gaussian state uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfinv

from .errors import (
    BadProbability,
    CoincidentCenters,
    EmptyBox,
    InvariantError,
    NominalInsideObstacle,
    NonFiniteGradient,
)
from .types import make_covariance

POSITION = (0, 1)


@dataclass(frozen=True)
class LinearChanceConstraint:
    """Deterministic form ``G z + m + gamma <= 0`` of one scalar chance constraint."""

    G: np.ndarray
    m: float
    gamma: float
    kind: str = "state"

    def value(self, z) -> float:
        return float(self.G @ np.asarray(z, dtype=float) + self.m + self.gamma)

    def satisfied(self, z) -> bool:
        return self.value(z) <= 0.0


def linearize_constraint(g: Callable, x_bar, jacobian: Callable | None = None, h: float = 1e-6):
    """First-order expansion ``G x + m`` of ``g`` around ``x_bar``.

    Without an analytic ``jacobian`` the gradient comes from central
    differences with step ``h``.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    if jacobian is not None:
        G = np.asarray(jacobian(x_bar), dtype=float).reshape(-1)
    else:
        G = np.empty_like(x_bar)
        for i in range(x_bar.size):
            e = np.zeros_like(x_bar)
            e[i] = h
            G[i] = (g(x_bar + e) - g(x_bar - e)) / (2 * h)
    if not np.all(np.isfinite(G)):
        raise NonFiniteGradient(f"gradient of constraint at {x_bar} is not finite")
    m = float(g(x_bar)) - float(G @ x_bar)
    return G, m


def _check_p(p: float):
    if not 0.5 <= p < 1.0:
        raise BadProbability(f"chance threshold must lie in [0.5, 1), got {p}")


def compute_gamma(G, cov, p: float) -> float:
    """Tightening ``sqrt(2 G cov G^T) * erfinv(2p - 1)``."""
    _check_p(p)
    G = np.asarray(G, dtype=float).reshape(-1)
    var = float(G @ np.asarray(cov, dtype=float) @ G)
    return math.sqrt(2.0 * max(var, 0.0)) * float(erfinv(2.0 * p - 1.0))


def gamma_batch(variances: np.ndarray, p: float) -> np.ndarray:
    _check_p(p)
    return np.sqrt(2.0 * np.clip(variances, 0.0, None)) * float(erfinv(2.0 * p - 1.0))


def transform_chance_constraint(g: Callable, x_bar, cov, p: float, jacobian: Callable | None = None,
                                kind: str = "state") -> LinearChanceConstraint:
    G, m = linearize_constraint(g, x_bar, jacobian)
    return LinearChanceConstraint(G=G, m=m, gamma=compute_gamma(G, cov, p), kind=kind)


# --- polygons -------------------------------------------------------------

def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class ConvexPolygonObstacle:
    """Convex polygon (stored counterclockwise) with a safety-margin band."""

    vertices: np.ndarray
    margin: float = 0.0
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise InvariantError("polygon needs at least 3 two-dimensional vertices")
        area = _signed_area(v)
        if abs(area) < 1e-12:
            raise InvariantError("polygon has zero area")
        if area < 0:
            v = v[::-1].copy()
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
        if np.any(cross < -1e-12):
            raise InvariantError("polygon is not convex")
        if self.margin < 0:
            raise InvariantError("margin must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)


def _edge_data(verts: np.ndarray):
    e = np.roll(verts, -1, axis=0) - verts
    length = np.hypot(e[:, 0], e[:, 1])
    normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / length[:, None]
    return e, length, normals


def signed_distance_batch(verts, points) -> tuple[np.ndarray, np.ndarray]:
    """Signed distances and unit gradients of points w.r.t. a CCW convex polygon.

    Positive outside, negative inside. Where the gradient is not unique
    (vertices on the boundary, ties inside) the normalized bisector of the
    candidate edge normals is returned.
    """
    verts = np.asarray(verts, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    e, length, normals = _edge_data(verts)
    rel = pts[:, None, :] - verts[None, :, :]  # (P, E, 2)
    t = np.clip(np.einsum("pei,ei->pe", rel, e) / (length ** 2), 0.0, 1.0)
    near = verts[None] + t[..., None] * e[None]
    diff = pts[:, None, :] - near
    dist = np.hypot(diff[..., 0], diff[..., 1])
    side = np.einsum("pei,ei->pe", rel, normals)  # >0 outside the edge line
    outside = np.any(side > 0.0, axis=1)

    idx = np.argmin(dist, axis=1)
    rows = np.arange(pts.shape[0])
    dmin = dist[rows, idx]
    regular = outside & (dmin > 0.0)
    phi = np.where(regular, dmin, 0.0)
    safe = np.where(regular, dmin, 1.0)
    grad = diff[rows, idx] / safe[:, None]
    for p in np.flatnonzero(~regular):
        if outside[p]:
            phi[p] = 0.0
        else:
            phi[p] = float(np.max(side[p]))  # = -(distance to nearest edge line)
        best = np.max(side[p])
        ties = np.abs(side[p] - best) <= 1e-12
        g = normals[ties].sum(axis=0)
        nrm = math.hypot(g[0], g[1])
        grad[p] = g / nrm if nrm > 0 else normals[int(np.argmax(side[p]))]
    return phi, grad


def polygon_distance(verts, points) -> np.ndarray:
    return signed_distance_batch(verts, points)[0]


def signed_distance(poly: ConvexPolygonObstacle, point) -> tuple[float, np.ndarray]:
    phi, grad = signed_distance_batch(poly.vertices, np.asarray(point, dtype=float)[None, :])
    return float(phi[0]), grad[0]


def polygons_overlap(a, b) -> bool:
    """Separating-axis test for two convex polygons (touching counts as overlap)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for poly in (a, b):
        _, _, normals = _edge_data(poly)
        for nrm in normals:
            pa, pb = a @ nrm, b @ nrm
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


@dataclass(frozen=True)
class HalfSpace:
    """Set ``{x : normal . x <= offset}`` over positions."""

    normal: np.ndarray
    offset: float

    def contains(self, x) -> bool:
        return float(self.normal @ np.asarray(x, dtype=float)) <= self.offset

    def constraint(self, x_bar):
        """The convex-feasible-set row as a scalar ``g(x) <= 0`` callable and its gradient."""
        a, b = self.normal, self.offset
        return (lambda x: float(a @ np.asarray(x, dtype=float)) - b), (lambda x: a)


def convex_feasible_set(poly: ConvexPolygonObstacle, x_bar, margin: float | None = None) -> HalfSpace:
    """Half-space under-approximating the free space outside ``poly`` at ``x_bar``.

    ``phi(x_bar) - margin + grad . (x - x_bar) >= 0`` written as
    ``-grad . x <= phi(x_bar) - margin - grad . x_bar``.
    """
    x_bar = np.asarray(x_bar, dtype=float)[:2]
    phi, grad = signed_distance(poly, x_bar)
    if phi <= 0.0:
        raise NominalInsideObstacle(f"nominal {x_bar} is inside or on the obstacle (phi={phi:.3g})")
    eta = poly.margin if margin is None else margin
    return HalfSpace(normal=-grad, offset=phi - eta - float(grad @ x_bar))


# --- uncertain obstacles and control boxes --------------------------------

@dataclass(frozen=True)
class UncertainObstacleState:
    """Predicted obstacle position distribution per planning step."""

    means: np.ndarray  # (N+1, 2)
    covariances: np.ndarray  # (N+1, 2, 2)
    margin: float
    name: str = ""

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        covs = np.array(self.covariances, dtype=float)
        if means.ndim != 2 or means.shape[1] != 2:
            raise InvariantError("obstacle means must have shape (steps, 2)")
        if covs.shape != (means.shape[0], 2, 2):
            raise InvariantError("need one 2x2 covariance per obstacle mean")
        covs = np.stack([make_covariance(c) for c in covs])
        if not self.margin > 0:
            raise InvariantError("safety margin must be positive")
        means.setflags(write=False)
        covs.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)


def obstacle_uncertainty_constraint(x_bar, obs_mean, obs_cov, margin: float, ego_cov, p: float,
                                    state_dim: int | None = None) -> LinearChanceConstraint:
    """Linearized ``margin - ||x - x_obs|| <= 0`` tightened by the combined covariance.

    ``ego_cov`` is either the full state covariance or its 2x2 position block;
    the returned ``G`` spans the full state (zero beyond the position entries).
    """
    x_bar = np.asarray(x_bar, dtype=float)
    n = state_dim or x_bar.size
    pos = x_bar[:2]
    diff = pos - np.asarray(obs_mean, dtype=float)
    dist = math.hypot(diff[0], diff[1])
    if dist < 1e-9:
        raise CoincidentCenters("nominal coincides with the obstacle mean")
    G = np.zeros(n)
    G[:2] = -diff / dist
    m = (margin - dist) - float(G[:2] @ pos)
    ego = np.asarray(ego_cov, dtype=float)
    if ego.shape != (2, 2):
        ego = ego[:2, :2]
    total = ego + np.asarray(obs_cov, dtype=float)
    gamma = compute_gamma(G[:2], total, p)
    return LinearChanceConstraint(G=G, m=m, gamma=gamma, kind="state")


@dataclass(frozen=True)
class ControlBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise InvariantError("control box needs lower < upper componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


def control_chance_constraints(box: ControlBox, u_bar, cov_u, p: float) -> list[LinearChanceConstraint]:
    """Upper then lower bound rows for each control channel, tightened per channel."""
    m_dim = box.lower.size
    cov_u = np.zeros((m_dim, m_dim)) if cov_u is None else np.asarray(cov_u, dtype=float)
    out_hi, out_lo = [], []
    for j in range(m_dim):
        e = np.zeros(m_dim)
        e[j] = 1.0
        gam = compute_gamma(e, cov_u, p)
        if box.lower[j] + gam > box.upper[j] - gam:
            raise EmptyBox(f"tightening empties the box on control channel {j}")
        out_hi.append(LinearChanceConstraint(G=e, m=-float(box.upper[j]), gamma=gam, kind="control"))
        out_lo.append(LinearChanceConstraint(G=-e, m=float(box.lower[j]), gamma=gam, kind="control"))
    return out_hi + out_lo


# --- horizon-wide builders used by the solver ------------------------------

@dataclass
class ConstraintSet:
    """All linear rows over a horizon as ``G . z + h < 0`` with ``h = m + gamma``.

    State rows at step 0 are inert (the initial state is fixed).
    """

    Gx: np.ndarray  # (N+1, cx, n)
    hx: np.ndarray  # (N+1, cx)
    gx: np.ndarray  # (N+1, cx) tightening part of hx
    Gu: np.ndarray  # (N, cu, m)
    hu: np.ndarray  # (N, cu)
    gu: np.ndarray  # (N, cu)
    state_names: list = field(default_factory=list)
    control_names: list = field(default_factory=list)

    @property
    def count(self) -> int:
        N = self.Gu.shape[0]
        return N * self.Gx.shape[1] + N * self.Gu.shape[1]

    def state_values(self, X) -> np.ndarray:
        v = np.einsum("kcn,kn->kc", self.Gx, X) + self.hx
        v[0] = -np.inf
        return v

    def control_values(self, U) -> np.ndarray:
        return np.einsum("kcm,km->kc", self.Gu, U) + self.hu

    def strictly_feasible(self, X, U, slack: float = 0.0) -> bool:
        sv = self.state_values(X)[1:]
        cv = self.control_values(U)
        return bool(np.all(sv < -slack) and np.all(cv < -slack))

    def max_violation(self, X, U) -> float:
        parts = [self.state_values(X)[1:].ravel(), self.control_values(U).ravel()]
        vals = np.concatenate(parts) if any(p.size for p in parts) else np.zeros(1)
        return float(vals.max()) if vals.size else -np.inf


def build_constraint_set(X, U, covariances, p: float, *, static_obstacles: Sequence = (),
                         dynamic_obstacles: Sequence = (), box: ControlBox | None = None,
                         control_cov=None, tighten: bool = True) -> ConstraintSet:
    """Linearize every collision and box constraint along the nominal ``(X, U)``.

    ``covariances`` has shape (N+1, n, n); ``tighten=False`` keeps gamma at 0.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    N1, n = X.shape
    m_dim = U.shape[1]
    pos = X[:, :2]
    cov_pos = np.asarray(covariances, dtype=float)[:, :2, :2]
    rows_G, rows_h, rows_g, names = [], [], [], []
    for i, poly in enumerate(static_obstacles):
        phi, grad = signed_distance_batch(poly.vertices, pos)
        G = np.zeros((N1, n))
        G[:, :2] = -grad
        m = -(phi - poly.margin) - np.einsum("ki,ki->k", G[:, :2], pos)
        var = np.einsum("ki,kij,kj->k", grad, cov_pos, grad)
        gam = gamma_batch(var, p) if tighten else np.zeros(N1)
        rows_G.append(G)
        rows_h.append(m + gam)
        rows_g.append(gam)
        names.append(poly.name or f"static{i}")
    for i, obs in enumerate(dynamic_obstacles):
        means = obs.means[:N1]
        diff = pos - means
        dist = np.hypot(diff[:, 0], diff[:, 1])
        dist = np.where(dist < 1e-9, 1e-9, dist)
        grad = -diff / dist[:, None]
        G = np.zeros((N1, n))
        G[:, :2] = grad
        m = (obs.margin - dist) - np.einsum("ki,ki->k", grad, pos)
        total = cov_pos + obs.covariances[:N1]
        var = np.einsum("ki,kij,kj->k", grad, total, grad)
        gam = gamma_batch(var, p) if tighten else np.zeros(N1)
        rows_G.append(G)
        rows_h.append(m + gam)
        rows_g.append(gam)
        names.append(obs.name or f"dynamic{i}")
    if rows_G:
        Gx = np.stack(rows_G, axis=1)
        hx = np.stack(rows_h, axis=1)
        gx = np.stack(rows_g, axis=1)
    else:
        Gx = np.zeros((N1, 0, n))
        hx = np.zeros((N1, 0))
        gx = np.zeros((N1, 0))
    Gx[0] = 0.0
    hx[0] = -1.0
    gx[0] = 0.0

    N = U.shape[0]
    if box is None:
        Gu = np.zeros((N, 0, m_dim))
        hu = np.zeros((N, 0))
        gu = np.zeros((N, 0))
        cnames = []
    else:
        rows = control_chance_constraints(box, None, control_cov if tighten else None, p)
        Gu = np.broadcast_to(np.stack([r.G for r in rows]), (N, len(rows), m_dim)).copy()
        hu = np.tile([r.m + r.gamma for r in rows], (N, 1))
        gu = np.tile([r.gamma for r in rows], (N, 1))
        cnames = [f"u{j}_upper" for j in range(m_dim)] + [f"u{j}_lower" for j in range(m_dim)]
    return ConstraintSet(Gx=Gx, hx=hx, gx=gx, Gu=Gu, hu=hu, gu=gu,
                         state_names=names, control_names=cnames)
