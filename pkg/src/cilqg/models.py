"""Stochastic dynamics and measurement models.

Every model exposes a noise-aware step ``f(x, u, w)`` and measurement
``h(x, v)`` plus their Jacobians at zero noise. The kinematic bicycle is the
model used by the driving scenarios; :class:`LinearModel` is a small test
double used to cross-check the generic machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeMismatch
from .types import LinearizedStep, make_covariance

# below this |kappa * d| the arc integrals switch to their Taylor expansions
TAYLOR_EPS = 1e-8
# the Jacobian helpers keep more Taylor terms and switch over earlier
_JAC_EPS = 1e-3


def _sinc_terms(phi: float) -> tuple[float, float]:
    """Return ``S = sin(phi)/phi`` and ``C = (1 - cos(phi))/phi``."""
    if abs(phi) <= TAYLOR_EPS:
        return 1.0 - phi * phi / 6.0, 0.5 * phi
    h = math.sin(0.5 * phi)
    return math.sin(phi) / phi, 2.0 * h * h / phi


def _sinc_derivs(phi: float) -> tuple[float, float]:
    """Derivatives dS/dphi and dC/dphi of :func:`_sinc_terms`."""
    if abs(phi) < _JAC_EPS:
        p2 = phi * phi
        return (-phi / 3.0 + phi * p2 / 30.0 - phi * p2 * p2 / 840.0,
                0.5 - p2 / 8.0 + p2 * p2 / 144.0)
    s, c = math.sin(phi), math.cos(phi)
    p2 = phi * phi
    return (phi * c - s) / p2, (phi * s - (1.0 - c)) / p2


@dataclass(frozen=True)
class BicycleParams:
    wheelbase: float = 2.9
    sampling_time: float = 0.2
    process_noise_cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    measurement_noise_cov: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))

    def __post_init__(self):
        if not self.wheelbase > 0:
            raise ValueError("wheelbase must be positive")
        if not self.sampling_time > 0:
            raise ValueError("sampling time must be positive")
        sw = make_covariance(self.process_noise_cov)
        sv = make_covariance(self.measurement_noise_cov)
        if sw.shape != (2, 2):
            raise ShapeMismatch("bicycle process noise covariance must be 2x2")
        if sv.shape != (4, 4):
            raise ShapeMismatch("bicycle measurement noise covariance must be 4x4")
        object.__setattr__(self, "process_noise_cov", sw)
        object.__setattr__(self, "measurement_noise_cov", sv)


def bicycle_step(x, u, w, params: BicycleParams) -> np.ndarray:
    """One sampling period of the kinematic bicycle, state ``(px, py, v, theta)``.

    The noisy acceleration ``a + w_a`` drives both the speed update and the
    travelled distance; the curvature is ``tan(delta)/L + w_kappa``.
    """
    px, py, v, th = (float(s) for s in x)
    a, delta = float(u[0]), float(u[1])
    if abs(delta) >= 0.5 * math.pi:
        raise DomainError(f"steering angle {delta} outside (-pi/2, pi/2)")
    wa, wk = (0.0, 0.0) if w is None else (float(w[0]), float(w[1]))
    tr = params.sampling_time
    acc = a + wa
    kappa = math.tan(delta) / params.wheelbase + wk
    d = v * tr + 0.5 * acc * tr * tr
    phi = kappa * d
    S, C = _sinc_terms(phi)
    c, s = math.cos(th), math.sin(th)
    return np.array([
        px + d * (c * S - s * C),
        py + d * (c * C + s * S),
        v + acc * tr,
        th + phi,
    ])


def bicycle_measure(x, n) -> np.ndarray:
    """Measurement ``y = x + speed * n`` (noise grows with speed)."""
    x = np.asarray(x, dtype=float)
    return x + x[2] * np.asarray(n, dtype=float)


def _bicycle_jacobians(x, u, wheelbase: float, tr: float):
    px, py, v, th = (float(s) for s in x)
    a, delta = float(u[0]), float(u[1])
    if abs(delta) >= 0.5 * math.pi:
        raise DomainError(f"steering angle {delta} outside (-pi/2, pi/2)")
    t = math.tan(delta)
    kappa = t / wheelbase
    dk_ddelta = (1.0 + t * t) / wheelbase
    d = v * tr + 0.5 * a * tr * tr
    phi = kappa * d
    S, C = _sinc_terms(phi)
    dS, dC = _sinc_derivs(phi)
    c, s = math.cos(th), math.sin(th)
    dpx = d * (c * S - s * C)
    dpy = d * (c * C + s * S)
    # derivative w.r.t. the travelled distance is the end heading direction
    cth, sth = math.cos(th + phi), math.sin(th + phi)
    dpx_dk = d * d * (c * dS - s * dC)
    dpy_dk = d * d * (c * dC + s * dS)
    h2 = 0.5 * tr * tr
    A = np.array([
        [1.0, 0.0, cth * tr, -dpy],
        [0.0, 1.0, sth * tr, dpx],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, kappa * tr, 1.0],
    ])
    W = np.array([
        [cth * h2, dpx_dk],
        [sth * h2, dpy_dk],
        [tr, 0.0],
        [kappa * h2, d],
    ])
    B = W.copy()
    B[:, 1] *= dk_ddelta
    return A, B, W


class BicycleModel:
    """Kinematic bicycle with noisy acceleration/curvature and speed-scaled sensing."""

    state_dim = 4
    control_dim = 2
    process_noise_dim = 2
    measurement_dim = 4
    measurement_noise_dim = 4

    def __init__(self, params: BicycleParams):
        self.params = params

    @property
    def process_noise_cov(self) -> np.ndarray:
        return self.params.process_noise_cov

    @property
    def measurement_noise_cov(self) -> np.ndarray:
        return self.params.measurement_noise_cov

    def step(self, x, u, w=None) -> np.ndarray:
        return bicycle_step(x, u, w, self.params)

    def measure(self, x, v=None) -> np.ndarray:
        if v is None:
            return np.array(x, dtype=float)
        return bicycle_measure(x, v)

    def dynamics_jacobians(self, x, u):
        return _bicycle_jacobians(x, u, self.params.wheelbase, self.params.sampling_time)

    def measurement_jacobians(self, x):
        n = self.state_dim
        return np.eye(n), float(x[2]) * np.eye(n)

    def with_noise(self, process_noise_cov=None, measurement_noise_cov=None) -> "BicycleModel":
        p = self.params
        return BicycleModel(BicycleParams(
            wheelbase=p.wheelbase,
            sampling_time=p.sampling_time,
            process_noise_cov=p.process_noise_cov if process_noise_cov is None else process_noise_cov,
            measurement_noise_cov=p.measurement_noise_cov if measurement_noise_cov is None else measurement_noise_cov,
        ))


class LinearModel:
    """x' = A x + B u + W w,  y = H x + V v."""

    def __init__(self, A, B, W=None, H=None, V=None, process_noise_cov=None, measurement_noise_cov=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        n, m = self.B.shape
        self.W = np.eye(n) if W is None else np.atleast_2d(np.asarray(W, dtype=float))
        self.H = np.eye(n) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
        self.V = np.eye(self.H.shape[0]) if V is None else np.atleast_2d(np.asarray(V, dtype=float))
        self.state_dim, self.control_dim = n, m
        self.process_noise_dim = self.W.shape[1]
        self.measurement_dim = self.H.shape[0]
        self.measurement_noise_dim = self.V.shape[1]
        q, s = self.process_noise_dim, self.measurement_noise_dim
        self.process_noise_cov = make_covariance(np.zeros((q, q)) if process_noise_cov is None else process_noise_cov)
        self.measurement_noise_cov = make_covariance(
            np.zeros((s, s)) if measurement_noise_cov is None else measurement_noise_cov)

    def step(self, x, u, w=None):
        out = self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)
        if w is not None:
            out = out + self.W @ np.asarray(w, dtype=float)
        return out

    def measure(self, x, v=None):
        out = self.H @ np.asarray(x, dtype=float)
        if v is not None:
            out = out + self.V @ np.asarray(v, dtype=float)
        return out

    def dynamics_jacobians(self, x, u):
        return self.A, self.B, self.W

    def measurement_jacobians(self, x):
        return self.H, self.V


def linearize_dynamics(model, x_bar, u_bar):
    """(A, B, W) = partial derivatives of f at (x_bar, u_bar, w=0)."""
    A, B, W = model.dynamics_jacobians(x_bar, u_bar)
    return np.array(A, dtype=float), np.array(B, dtype=float), np.array(W, dtype=float)


def linearize_measurement(model, x_bar):
    """(H, V) = partial derivatives of h at (x_bar, v=0)."""
    H, V = model.measurement_jacobians(x_bar)
    return np.array(H, dtype=float), np.array(V, dtype=float)


def linearize_step(model, x_bar, u_bar, x_next) -> LinearizedStep:
    A, B, W = linearize_dynamics(model, x_bar, u_bar)
    H, V = linearize_measurement(model, x_next)
    return LinearizedStep(A, B, W, H, V)


def finite_difference_jacobians(model, x, u, h: float = 1e-6):
    """Central-difference (A, B, W); a test oracle, never used by the solver."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    q = model.process_noise_dim
    w0 = np.zeros(q)

    def jac(fun, z):
        cols = []
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = h
            cols.append((fun(z + e) - fun(z - e)) / (2 * h))
        return np.stack(cols, axis=1)

    A = jac(lambda z: model.step(z, u, w0), x)
    B = jac(lambda z: model.step(x, z, w0), u)
    W = jac(lambda z: model.step(x, u, z), w0)
    return A, B, W


def rollout(model, x0, controls) -> np.ndarray:
    """Noise-free forward simulation; returns states of shape (N+1, n)."""
    controls = np.asarray(controls, dtype=float)
    x = np.asarray(x0, dtype=float)
    out = np.empty((controls.shape[0] + 1, x.size))
    out[0] = x
    for k, u in enumerate(controls):
        x = model.step(x, u)
        out[k + 1] = x
    return out


def _gaussian(rng: np.random.Generator, cov, size=None) -> np.ndarray:
    cov = make_covariance(cov)
    dim = cov.shape[0]
    shape = (dim,) if size is None else (size, dim)
    z = rng.standard_normal(shape)
    if not np.any(cov):
        return np.zeros(shape)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # semidefinite: factor through the eigen-decomposition instead
        w, v = np.linalg.eigh(cov)
        L = v * np.sqrt(np.clip(w, 0.0, None))
    return z @ L.T


def sample_process_noise(rng: np.random.Generator, cov, size=None) -> np.ndarray:
    return _gaussian(rng, cov, size)


def sample_measurement_noise(rng: np.random.Generator, cov, size=None) -> np.ndarray:
    return _gaussian(rng, cov, size)


def bicycle_step_batch(X, U, Wn, wheelbase: float, tr: float) -> np.ndarray:
    """Vectorized :func:`bicycle_step` over a batch of rows (Monte Carlo use)."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if np.any(np.abs(U[..., 1]) >= 0.5 * np.pi):
        raise DomainError("steering angle outside (-pi/2, pi/2)")
    acc = U[..., 0] + Wn[..., 0]
    kappa = np.tan(U[..., 1]) / wheelbase + Wn[..., 1]
    d = X[..., 2] * tr + 0.5 * acc * tr * tr
    phi = kappa * d
    small = np.abs(phi) <= TAYLOR_EPS
    safe = np.where(small, 1.0, phi)
    h = np.sin(0.5 * safe)
    S = np.where(small, 1.0 - phi * phi / 6.0, np.sin(safe) / safe)
    C = np.where(small, 0.5 * phi, 2.0 * h * h / safe)
    c, s = np.cos(X[..., 3]), np.sin(X[..., 3])
    out = np.empty_like(X)
    out[..., 0] = X[..., 0] + d * (c * S - s * C)
    out[..., 1] = X[..., 1] + d * (c * C + s * S)
    out[..., 2] = X[..., 2] + acc * tr
    out[..., 3] = X[..., 3] + phi
    return out
