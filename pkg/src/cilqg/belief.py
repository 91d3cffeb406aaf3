"""Gaussian belief propagation along a nominal trajectory.

Prior and measurement updates run on the model linearized at each nominal
step. Future measurements are replaced by their expectation, so the
posterior mean equals the prior mean and only the covariance contracts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, SingularInnovation
from .models import linearize_step
from .types import Belief, LinearizedStep, NominalTrajectory, symmetrize

INNOVATION_JITTER = 1e-12
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class KalmanStep:
    prior_cov: np.ndarray
    gain: np.ndarray
    posterior_cov: np.ndarray


@dataclass(frozen=True)
class VarianceSequence:
    """Posterior covariances for k = 0..N plus the per-step Kalman gains."""

    covariances: np.ndarray  # (N+1, n, n)
    priors: np.ndarray  # (N+1, n, n); entry 0 repeats the initial covariance
    gains: np.ndarray  # (N+1, n, r); entry 0 is zero

    def __len__(self):
        return self.covariances.shape[0]

    def __getitem__(self, k):
        return self.covariances[k]


def prior_update(posterior: Belief, step: LinearizedStep, x_bar_k, u_bar_k, x_bar_next, u_k,
                 process_noise_cov) -> Belief:
    A, B, W = step.A, step.B, step.W
    sw = np.asarray(process_noise_cov, dtype=float)
    if sw.shape != (W.shape[1], W.shape[1]):
        raise ShapeMismatch(f"process noise covariance {sw.shape} vs W {W.shape}")
    mean = (np.asarray(x_bar_next, dtype=float)
            + A @ (posterior.mean - np.asarray(x_bar_k, dtype=float))
            + B @ (np.asarray(u_k, dtype=float) - np.asarray(u_bar_k, dtype=float)))
    cov = symmetrize(A @ posterior.covariance @ A.T + W @ sw @ W.T)
    return Belief(mean, cov)


def _condition(S) -> float:
    sv = np.linalg.svd(S, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0.0 else np.inf


def _gain(prior_cov, H, innovation):
    """``K = P H^T S^-1``, solved rather than inverted.

    A near-singular innovation (for example at zero speed, where the
    measurement noise vanishes) is regularized by ``INNOVATION_JITTER * I``;
    well-conditioned ones are used exactly.
    """
    S = symmetrize(innovation)
    if _condition(S) > MAX_CONDITION:
        S = S + INNOVATION_JITTER * np.eye(S.shape[0])
        cond = _condition(S)
        if cond > MAX_CONDITION:
            raise SingularInnovation(f"innovation condition number {cond:.3e}")
    return np.linalg.solve(S, H @ prior_cov).T


def measurement_update(prior: Belief, step: LinearizedStep, measurement_noise_cov, *,
                       joseph: bool = False, literal_cov=None) -> KalmanStep:
    """Kalman gain and posterior covariance for one expected measurement.

    ``literal_cov`` substitutes the given state covariance for the
    measurement-noise covariance inside the innovation term; it exists only to
    reproduce that variant for comparison.
    """
    sv = np.asarray(measurement_noise_cov if literal_cov is None else literal_cov, dtype=float)
    return _update(prior.covariance, step.H, step.V, sv, joseph)


def _update(P, H, V, sv, joseph):
    if sv.shape != (V.shape[1], V.shape[1]):
        raise ShapeMismatch(f"noise covariance {sv.shape} vs V {V.shape}")
    K = _gain(P, H, H @ P @ H.T + V @ sv @ V.T)
    n = P.shape[0]
    IKH = np.eye(n) - K @ H
    if joseph:
        post = IKH @ P @ IKH.T + K @ (V @ sv @ V.T) @ K.T
    else:
        post = IKH @ P
    return KalmanStep(prior_cov=P, gain=K, posterior_cov=symmetrize(post))


def propagate_variance(nominal: NominalTrajectory, initial: Belief, model, *,
                       measurement: bool = True, joseph: bool = False,
                       innovation_uses_state_cov: bool = False) -> VarianceSequence:
    """Posterior covariance sequence along ``nominal``.

    With ``measurement=False`` only the prior recursion runs (open-loop
    uncertainty growth). ``innovation_uses_state_cov`` puts the previous
    posterior in place of the measurement-noise covariance inside the
    innovation; that variant exists only for comparison.
    """
    X, U = nominal.states, nominal.controls
    N = U.shape[0]
    n = X.shape[1]
    if X.shape[1] != model.state_dim or U.shape[1] != model.control_dim:
        raise ShapeMismatch("nominal trajectory does not match model dimensions")
    sw = model.process_noise_cov
    sv = model.measurement_noise_cov
    covs = np.empty((N + 1, n, n))
    priors = np.empty((N + 1, n, n))
    gains = np.zeros((N + 1, n, model.measurement_dim))
    covs[0] = priors[0] = initial.covariance
    post = initial.covariance
    for k in range(N):
        step = linearize_step(model, X[k], U[k], X[k + 1])
        P = symmetrize(step.A @ post @ step.A.T + step.W @ sw @ step.W.T)
        priors[k + 1] = P
        if measurement:
            ks = _update(P, step.H, step.V, post if innovation_uses_state_cov else sv, joseph)
            gains[k + 1] = ks.gain
            post = ks.posterior_cov
        else:
            post = P
        covs[k + 1] = post
    return VarianceSequence(covariances=covs, priors=priors, gains=gains)


def propagate_mean(nominal: NominalTrajectory, mean0, controls, steps) -> np.ndarray:
    """Belief mean under ``controls`` via the linearized dynamics."""
    X, U = nominal.states, nominal.controls
    controls = np.asarray(controls, dtype=float)
    if controls.shape != U.shape or len(steps) != U.shape[0]:
        raise ShapeMismatch("controls / linearized steps do not match the nominal horizon")
    out = np.empty_like(X)
    out[0] = np.asarray(mean0, dtype=float)
    for k, st in enumerate(steps):
        out[k + 1] = X[k + 1] + st.A @ (out[k] - X[k]) + st.B @ (controls[k] - U[k])
    return out
