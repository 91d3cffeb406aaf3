"""Validated value types: covariances, beliefs, nominal trajectories, ellipses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadProbability, NotPSD, NotSquare, ShapeMismatch

PSD_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def make_covariance(raw) -> np.ndarray:
    """Return the symmetrized, PSD-checked copy of ``raw``.

    Eigenvalues in ``[-1e-9, 0)`` are clamped to zero; anything more negative
    raises :class:`NotPSD`. The result is read-only.
    """
    m = np.array(raw, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSquare(f"covariance must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPSD("covariance has non-finite entries")
    m = symmetrize(m)
    if m.size == 0:
        return _frozen(m)
    w, v = np.linalg.eigh(m)
    if w[0] < -PSD_TOL:
        raise NotPSD(f"smallest eigenvalue {w[0]:.3e} < -{PSD_TOL:g}")
    if w[0] < 0.0:
        w = np.clip(w, 0.0, None)
        m = symmetrize((v * w) @ v.T)
    return _frozen(m)


@dataclass(frozen=True)
class Belief:
    """Gaussian belief over the state: mean and covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if not np.all(np.isfinite(mean)):
            raise ValueError("belief mean has non-finite entries")
        cov = make_covariance(self.covariance)
        if cov.shape != (mean.size, mean.size):
            raise ShapeMismatch(f"covariance {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class NominalTrajectory:
    states: np.ndarray  # (N+1, n)
    controls: np.ndarray  # (N, m)

    def __post_init__(self):
        x = np.atleast_2d(np.array(self.states, dtype=float))
        u = np.array(self.controls, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if x.shape[0] != u.shape[0] + 1:
            raise ShapeMismatch(f"{x.shape[0]} states for {u.shape[0]} controls")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise ValueError("trajectory has non-finite entries")
        object.__setattr__(self, "states", _frozen(x))
        object.__setattr__(self, "controls", _frozen(u))

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


@dataclass(frozen=True)
class LinearizedStep:
    """Jacobians of one step of a stochastic model around the nominal.

    ``A, B, W`` come from the dynamics at ``(x_k, u_k, 0)``; ``H, V`` from
    the measurement model at ``(x_{k+1}, 0)``.
    """

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    H: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        mats = {k: np.atleast_2d(np.array(getattr(self, k), dtype=float)) for k in "ABWHV"}
        n = mats["A"].shape[0]
        r = mats["H"].shape[0]
        ok = (
            mats["A"].shape == (n, n)
            and mats["B"].shape[0] == n
            and mats["W"].shape[0] == n
            and mats["H"].shape == (r, n)
            and mats["V"].shape[0] == r
        )
        if not ok:
            raise ShapeMismatch("inconsistent linearized step shapes: "
                                + ", ".join(f"{k}{v.shape}" for k, v in mats.items()))
        for k, v in mats.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{k} has non-finite entries")
            object.__setattr__(self, k, _frozen(v))


@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    semi_axes: np.ndarray  # major first
    rotation: float  # angle of the major axis [rad]

    def polyline(self, n_points: int = 64) -> np.ndarray:
        """Boundary sampled at ``n_points`` angles, shape (n_points, 2)."""
        s = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
        c, sn = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -sn], [sn, c]])
        pts = np.stack([self.semi_axes[0] * np.cos(s), self.semi_axes[1] * np.sin(s)], axis=1)
        return self.center + pts @ rot.T


def chi2_2dof_quantile(p: float) -> float:
    """Quantile of the 2-DOF chi-square distribution, CDF 1 - exp(-x/2)."""
    if not 0.0 < p < 1.0:
        raise BadProbability(f"p must lie in (0, 1), got {p}")
    return -2.0 * math.log1p(-p)


def confidence_ellipse(belief: Belief, p: float, axes: tuple[int, int] = (0, 1)) -> Ellipse:
    """Confidence region with probability ``p`` for two state components."""
    scale = chi2_2dof_quantile(p)
    i, j = axes
    sub = belief.covariance[np.ix_([i, j], [i, j])]
    w, v = np.linalg.eigh(sub)
    if w[0] < -PSD_TOL:
        raise NotPSD("sub-covariance is not PSD")
    w = np.clip(w, 0.0, None)[::-1]
    v = v[:, ::-1]
    rotation = math.atan2(v[1, 0], v[0, 0])
    # canonical orientation in (-pi/2, pi/2]
    if rotation <= -math.pi / 2:
        rotation += math.pi
    elif rotation > math.pi / 2:
        rotation -= math.pi
    if w[0] == w[1]:
        rotation = 0.0
    center = np.array([belief.mean[i], belief.mean[j]])
    return Ellipse(center=_frozen(center), semi_axes=_frozen(np.sqrt(scale * w)), rotation=float(rotation))


def ellipse_intersects_polygon(ellipse: Ellipse, vertices) -> bool:
    """True when the closed ellipse and the convex polygon share a point.

    Maps the polygon into the frame where the ellipse is the unit disk and
    compares the disk radius against the distance from the origin.
    """
    from .constraints import polygon_distance

    verts = np.asarray(vertices, dtype=float)
    a, b = ellipse.semi_axes
    if a <= 0.0 or b <= 0.0:
        d = polygon_distance(verts, ellipse.center[None, :])[0]
        if a <= 0.0:
            return bool(d <= 0.0)
        # degenerate segment: sample it densely
        c, s = math.cos(ellipse.rotation), math.sin(ellipse.rotation)
        ts = np.linspace(-a, a, 257)[:, None]
        pts = ellipse.center + ts * np.array([c, s])
        return bool(np.any(polygon_distance(verts, pts) <= 0.0))
    c, s = math.cos(ellipse.rotation), math.sin(ellipse.rotation)
    rot = np.array([[c, -s], [s, c]])
    local = (verts - ellipse.center) @ rot
    local = local / np.array([a, b])
    # an affine map keeps orientation when its determinant is positive
    d = polygon_distance(local, np.zeros((1, 2)))[0]
    return bool(d <= 1.0)
