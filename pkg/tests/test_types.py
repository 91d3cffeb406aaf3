from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cilqg import (
    Belief,
    LinearizedStep,
    NominalTrajectory,
    chi2_2dof_quantile,
    confidence_ellipse,
    ellipse_intersects_polygon,
    make_covariance,
)
from cilqg.errors import BadProbability, NotPSD, NotSquare, ShapeMismatch
from oracles import chi2_2_quantile

finite = st.floats(-10, 10, allow_nan=False)


def test_identity_is_fixed_point():
    np.testing.assert_array_equal(make_covariance(np.eye(4)), np.eye(4))


def test_symmetrization_formula():
    np.testing.assert_array_equal(make_covariance([[1, 0.1], [0.0, 1]]), [[1, 0.05], [0.05, 1]])


def test_negative_eigenvalue_rejected():
    with pytest.raises(NotPSD):
        make_covariance([[-1, 0], [0, 1]])


def test_non_square_rejected():
    with pytest.raises(NotSquare):
        make_covariance(np.zeros((2, 3)))


def test_tiny_negative_eigenvalue_is_clamped():
    m = make_covariance(np.diag([1.0, -5e-10]))
    assert np.linalg.eigvalsh(m).min() >= 0.0


def test_covariance_is_read_only():
    m = make_covariance(np.eye(2))
    with pytest.raises(ValueError):
        m[0, 0] = 3.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 3), elements=finite))
def test_accepted_covariances_are_symmetric_psd(a):
    raw = a @ a.T + np.triu(a) * 1e-12
    m = make_covariance(raw)
    assert np.max(np.abs(m - m.T)) == 0.0
    assert np.linalg.eigvalsh(m).min() >= -1e-9


def test_belief_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Belief(np.zeros(3), np.eye(2))


def test_nominal_length_invariant():
    NominalTrajectory(np.zeros((4, 2)), np.zeros((3, 1)))
    with pytest.raises(ShapeMismatch):
        NominalTrajectory(np.zeros((3, 2)), np.zeros((3, 1)))


def test_linearized_step_shapes():
    LinearizedStep(np.eye(4), np.zeros((4, 2)), np.zeros((4, 2)), np.eye(4), np.eye(4))
    with pytest.raises(ShapeMismatch):
        LinearizedStep(np.eye(4), np.zeros((3, 2)), np.zeros((4, 2)), np.eye(4), np.eye(4))
    with pytest.raises(ValueError):
        LinearizedStep(np.full((2, 2), np.inf), np.zeros((2, 1)), np.zeros((2, 1)), np.eye(2), np.eye(2))


@pytest.mark.parametrize("p", [0.01, 0.5, 0.9, 0.98, 0.999])
def test_chi2_quantile_matches_bisection(p):
    assert chi2_2dof_quantile(p) == pytest.approx(chi2_2_quantile(p), abs=1e-12)


def test_unit_circle_radius_at_098():
    ell = confidence_ellipse(Belief(np.zeros(2), np.eye(2)), 0.98)
    r = math.sqrt(chi2_2_quantile(0.98))
    assert r == pytest.approx(2.797, abs=5e-4)
    np.testing.assert_allclose(ell.semi_axes, [r, r], atol=1e-12)


def test_radius_vanishes_as_p_goes_to_zero():
    ell = confidence_ellipse(Belief(np.zeros(2), np.eye(2)), 1e-12)
    assert ell.semi_axes.max() < 1e-5


def test_diagonal_ellipse_axes_and_rotation():
    ell = confidence_ellipse(Belief(np.zeros(2), np.diag([4.0, 1.0])), 0.98)
    r = math.sqrt(chi2_2_quantile(0.98))
    np.testing.assert_allclose(ell.semi_axes, [2 * r, r], atol=1e-12)
    assert ell.rotation == pytest.approx(0.0, abs=1e-15)


def test_ellipse_selects_axes():
    cov = np.diag([1.0, 2.0, 9.0, 4.0])
    ell = confidence_ellipse(Belief(np.arange(4.0), cov), 0.5, axes=(2, 3))
    np.testing.assert_array_equal(ell.center, [2.0, 3.0])
    s = math.sqrt(chi2_2_quantile(0.5))
    np.testing.assert_allclose(ell.semi_axes, [3 * s, 2 * s])


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_bad_probability(p):
    with pytest.raises(BadProbability):
        confidence_ellipse(Belief(np.zeros(2), np.eye(2)), p)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), arrays(np.float64, (2, 2), elements=finite))
def test_ellipse_monotone_in_p(p1, p2, a):
    p1, p2 = sorted((p1, p2))
    b = Belief(np.zeros(2), a @ a.T)
    e1, e2 = confidence_ellipse(b, p1), confidence_ellipse(b, p2)
    assert np.all(e1.semi_axes <= e2.semi_axes + 1e-12)


def test_ellipse_monte_carlo_coverage(rng):
    cov = np.array([[2.0, 0.8], [0.8, 0.7]])
    p = 0.9
    ell = confidence_ellipse(Belief(np.zeros(2), cov), p)
    pts = rng.multivariate_normal(np.zeros(2), cov, size=100_000)
    c, s = math.cos(ell.rotation), math.sin(ell.rotation)
    local = pts @ np.array([[c, -s], [s, c]])
    inside = (local[:, 0] / ell.semi_axes[0]) ** 2 + (local[:, 1] / ell.semi_axes[1]) ** 2 <= 1.0
    assert abs(inside.mean() - p) < 0.01


def test_polyline_lies_on_ellipse():
    cov = np.array([[3.0, 1.0], [1.0, 2.0]])
    ell = confidence_ellipse(Belief(np.array([1.0, -2.0]), cov), 0.98)
    pts = ell.polyline(64)
    assert pts.shape == (64, 2)
    d = pts - ell.center
    q = np.einsum("ki,ij,kj->k", d, np.linalg.inv(cov), d)
    np.testing.assert_allclose(q, chi2_2_quantile(0.98), rtol=1e-10)


def _sampled_intersection(ell, verts, n=4000):
    """Oracle: dense sampling of the filled ellipse against the polygon half-planes."""
    from cilqg.constraints import polygon_distance
    r = np.sqrt(np.linspace(0, 1, 60))[:, None]
    ang = np.linspace(0, 2 * np.pi, n // 60, endpoint=False)[None, :]
    c, s = math.cos(ell.rotation), math.sin(ell.rotation)
    x = (r * np.cos(ang)).ravel() * ell.semi_axes[0]
    y = (r * np.sin(ang)).ravel() * ell.semi_axes[1]
    pts = ell.center + np.column_stack([c * x - s * y, s * x + c * y])
    return bool(np.any(polygon_distance(verts, pts) <= 0.0))


@pytest.mark.parametrize("center,expected", [((0.0, 0.0), True), ((3.0, 0.0), True), ((4.5, 0.0), False),
                                             ((2.5, 2.5), False), ((2.5, 1.8), True), ((3.6, 3.6), False)])
def test_ellipse_polygon_intersection(center, expected):
    verts = np.array([[1.0, -1.0], [2.0, -1.0], [2.0, 1.0], [1.0, 1.0]])
    ell = confidence_ellipse(Belief(np.array(center), np.diag([1.0, 0.25])), 0.9)
    assert ellipse_intersects_polygon(ell, verts) is expected
    assert _sampled_intersection(ell, verts) is expected


def test_degenerate_ellipse_is_a_point():
    verts = np.array([[1.0, -1.0], [2.0, -1.0], [2.0, 1.0], [1.0, 1.0]])
    ell = confidence_ellipse(Belief(np.array([1.5, 0.0]), np.zeros((2, 2))), 0.98)
    assert ellipse_intersects_polygon(ell, verts)
    ell = confidence_ellipse(Belief(np.array([0.5, 0.0]), np.zeros((2, 2))), 0.98)
    assert not ellipse_intersects_polygon(ell, verts)
