import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from rigidlab.geodesics import (
    IntegrationError,
    curve_length,
    exit_map,
    fan_crossings,
    integrate_fan,
    integrate_omega_geodesic,
    lift_to_bicharacteristic,
    null_residual,
    orthonormal_complement,
    riemannian_distance,
    sigma_minus_fan,
)
from rigidlab.media import compute_bounds

from .conftest import DIAG, E1

# First crossing of x.omega = 1 for omega = e1 through the amplitude-0.2 bump,
# from a = (-1, a2): (t*, y*, v*).  Frozen from scipy DOP853 (rtol 1e-13) on the
# conformal geodesic equation x'' = -(2 (grad rho . x') x' - |x'|^2 grad rho) / (2 rho),
# written independently of the package.
BUMP_CROSSINGS = {
    0.3: (1.0816761655010179, 0.16743473671230985, (0.9909709105731236, -0.13407704649860466)),
    0.0: (1.0929263918545518, 0.0, (1.0, 0.0)),
    -0.55: (1.0491059736725468, -0.34102701874273905, (0.976147758436935, 0.21710724008785498)),
}

unit2 = st.floats(0, 2 * np.pi).map(lambda a: np.array([np.cos(a), np.sin(a)]))


def test_bump_crossings_match_independent_integrator(bump):
    starts = np.array([[-1.0, a2] for a2 in BUMP_CROSSINGS])
    fan = integrate_fan(bump, E1, starts, 4.0, 1e-3)
    for c, (t, y, v) in zip(fan_crossings(fan), BUMP_CROSSINGS.values()):
        assert c.crossed and not c.recross
        assert c.t_star == pytest.approx(t, abs=1e-9)
        assert c.x_star[1] == pytest.approx(y, abs=1e-9)
        np.testing.assert_allclose(c.velocity, v, atol=1e-9)


def test_euclidean_straight_line(flat):
    a = np.array([[-1.0, 0.4], [-1.0, -0.7]])
    fan = integrate_fan(flat, E1, a, 4.0, 1e-3)
    expected = a[None] + (fan.t[:, None, None] + 1.0) * E1
    assert np.abs(fan.X - expected).max() < 1e-12


def test_euclidean_covector_is_minus_omega(flat):
    ray = integrate_omega_geodesic(flat, DIAG, -DIAG, 2.0)
    np.testing.assert_allclose(ray.xi, np.broadcast_to(-DIAG, ray.xi.shape), atol=1e-15)
    assert null_residual(ray, 1.0).max() < 1e-14


def test_covector_scales_with_tau(bump):
    ray = integrate_omega_geodesic(bump, E1, np.array([-1.0, 0.2]), 2.0)
    np.testing.assert_allclose(lift_to_bicharacteristic(ray, 2.5), 2.5 * ray.xi)
    assert null_residual(ray, 2.5).max() < 1e-8


def test_euclidean_crossing_at_one(flat):
    fan = integrate_fan(flat, DIAG, -DIAG[None], 3.0, 1e-3)
    c = fan_crossings(fan)[0]
    assert c.t_star == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(c.x_star, DIAG, atol=1e-12)


def test_euclidean_exit_map_is_translation(flat):
    starts = sigma_minus_fan(DIAG, 0.1)
    em = exit_map(flat, DIAG, starts, 3.0)
    np.testing.assert_allclose(em.images, starts + 2 * DIAG, atol=1e-12)
    np.testing.assert_allclose(em.times, 1.0, atol=1e-12)
    assert em.injective and not em.missed and not em.recrossed


def test_pullback_exit_map_is_translation(pullback):
    # psi maps the omega-geodesics to straight lines and is the identity near Sigma_+
    starts = sigma_minus_fan(E1, 0.1)
    em = exit_map(pullback, E1, starts, 4.0)
    np.testing.assert_allclose(em.images, starts + 2 * E1, atol=1e-8)
    np.testing.assert_allclose(em.times, 1.0, atol=1e-8)
    assert not em.recrossed


def test_unit_speed_in_bump(bump):
    starts = -E1 + np.linspace(-1, 1, 41)[:, None] * np.array([0.0, 1.0])
    fan = integrate_fan(bump, E1, starts, 4.0, 1e-3)
    assert fan.unit_speed_drift().max() < 1e-6


def test_drift_guard_rejects_coarse_steps(bump):
    with pytest.raises(IntegrationError):
        integrate_fan(bump, E1, np.array([[-1.0, 0.1]]), 4.0, dt=0.5, tol=1e-12)


def test_start_points_must_lie_on_sigma_minus(bump):
    with pytest.raises(ValueError):
        integrate_fan(bump, E1, np.array([[-0.5, 0.0]]), 1.0)


def test_curve_length_of_segment(flat, bump):
    p, q = np.array([-0.9, 0.1]), np.array([0.7, -0.2])
    assert curve_length(flat, np.stack([p, q])) == pytest.approx(np.linalg.norm(q - p), rel=1e-14)
    # Simpson on a finely sampled segment agrees with adaptive quadrature of sqrt(rho)
    s = np.linspace(0, 1, 401)[:, None]
    pts = p + s * (q - p)
    exact = quad(lambda u: np.sqrt(bump.rho(p + u * (q - p))), 0, 1, epsabs=1e-13)[0] * np.linalg.norm(q - p)
    assert curve_length(bump, pts) == pytest.approx(exact, rel=1e-9)


def test_euclidean_distance(flat):
    p, q = np.array([-0.8, -0.3]), np.array([0.6, 0.5])
    d = riemannian_distance(flat, p, q)
    exact = np.linalg.norm(q - p)
    assert d.refined == pytest.approx(exact, rel=1e-6)
    # graph metrication with 16 neighbours stays within 3%
    assert abs(d.graph - exact) / exact < 0.03


def test_bump_distance_bounds(bump):
    p, q = np.array([-0.9, 0.0]), np.array([0.9, 0.0])
    b = compute_bounds(bump)
    d = riemannian_distance(bump, p, q)
    euclid = np.linalg.norm(q - p)
    segment = quad(lambda u: np.sqrt(bump.rho(p + u * (q - p))), 0, 1, epsabs=1e-13)[0] * euclid
    assert np.sqrt(b.g_min) * euclid <= d.refined <= np.sqrt(b.g_max) * euclid
    assert d.refined <= segment + 1e-9
    assert d.refined <= d.graph + 1e-12


@given(unit2, st.floats(-1.0, 1.0))
def test_straight_lines_for_any_direction(omega, s):
    from rigidlab.media import euclidean

    a = -omega + s * orthonormal_complement(omega)[0]
    fan = integrate_fan(euclidean(2), omega, a[None], 4.0, 1e-2)
    expected = a + (fan.t[:, None] + 1.0) * omega
    assert np.abs(fan.X[:, 0] - expected).max() < 1e-12


@given(unit2)
def test_complement_is_orthonormal(omega):
    B = orthonormal_complement(omega)
    np.testing.assert_allclose(B @ omega, 0, atol=1e-15)
    np.testing.assert_allclose(B @ B.T, np.eye(1), atol=1e-15)


@given(st.floats(-0.9, 0.9))
def test_bump_rays_keep_unit_speed(s):
    from rigidlab.media import make_bump_density

    m = make_bump_density(0.2, (0.0, 0.0), 0.8)
    fan = integrate_fan(m, E1, np.array([[-1.0, s]]), 2.0, 2e-3)
    assert fan.unit_speed_drift().max() < 1e-6
