import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from rigidlab.arrival import (
    ArrivalError,
    ShootingArrival,
    SweepingArrival,
    arrival_by_shooting,
    arrival_by_sweeping,
    arrival_difference,
    default_grid,
    eikonal_residual,
    gradient_matches_geodesic_velocity,
    inflow_faces,
    kink_mask,
    lipschitz_excess,
    monotone_along_rays,
)
from rigidlab.geodesics import integrate_fan, sigma_minus_fan
from rigidlab.media import compute_bounds, euclidean
from rigidlab.stencil import Grid

from .conftest import DIAG, E1, pullback_spec

H = 0.015


@pytest.fixture(scope="module")
def grid():
    return default_grid(2, H)


@pytest.fixture(scope="module")
def bump_fields(bump, grid):
    return arrival_by_shooting(bump, E1, grid), arrival_by_sweeping(bump, E1, grid)


@pytest.fixture(scope="module")
def pullback_fields(pullback, grid):
    return arrival_by_shooting(pullback, E1, grid), arrival_by_sweeping(pullback, E1, grid)


@pytest.mark.parametrize("omega", [E1, DIAG])
def test_euclidean_arrival_is_linear(flat, grid, omega):
    plane = grid.points() @ omega
    for f in (arrival_by_shooting(flat, omega, grid), arrival_by_sweeping(flat, omega, grid)):
        assert f.reached.all()
        assert np.abs(f.alpha - plane).max() < 1e-9
        assert eikonal_residual(f, flat).linf < 1e-9


def test_euclidean_gradient_is_omega(flat, grid):
    f = arrival_by_sweeping(flat, DIAG, grid)
    fan = integrate_fan(flat, DIAG, sigma_minus_fan(DIAG, 0.1), 2.0, 0.01)
    out = gradient_matches_geodesic_velocity(f, flat, fan)
    assert out["samples"] > 0 and out["max_deviation"] < 1e-9


def test_pullback_arrival_is_psi_dot_omega(pullback, grid, pullback_fields):
    # isometry oracle: psi maps omega-geodesics to straight rays, so alpha = psi(x) . omega
    truth = pullback_spec().psi(grid.points()) @ E1
    for f in pullback_fields:
        sel = f.smooth
        assert sel.sum() > 0.9 * sel.size
        assert np.abs(f.alpha - truth)[sel].max() < 0.1 * H


def test_bump_methods_agree(bump_fields):
    shoot, sweep = bump_fields
    assert arrival_difference(shoot, sweep) < 0.05 * H


def test_bump_residual_small(bump, bump_fields):
    for f in bump_fields:
        r = eikonal_residual(f, bump)
        assert r.l2 < 0.1 * H and r.cells > 0


def test_bump_gradient_follows_rays(bump, bump_fields):
    fan = integrate_fan(bump, E1, sigma_minus_fan(E1, 0.05), 2.5, 5e-3)
    out = gradient_matches_geodesic_velocity(bump_fields[1], bump, fan)
    assert out["samples"] > 1000 and out["max_angle"] < 0.02


def test_monotone_along_rays(bump, bump_fields):
    fan = integrate_fan(bump, E1, sigma_minus_fan(E1, 0.05), 2.5, 5e-3)
    ok, worst = monotone_along_rays(bump_fields[0], fan)
    assert ok and worst > 0


def test_lipschitz(bump, bump_fields):
    g_max = compute_bounds(bump).g_max
    for f in bump_fields:
        assert lipschitz_excess(f, g_max) <= 0


def test_collar_is_exact(bump_fields, grid):
    plane = grid.points() @ E1
    for f in bump_fields:
        m = f.collar_mask()
        assert np.abs(f.alpha[m] - plane[m]).max() < 1e-12


def test_kink_mask_finds_a_crease():
    g = Grid(2, 1.0, 0.05)
    X = g.points()
    alpha = X[..., 0] + 0.5 * np.abs(X[..., 1])
    k = kink_mask(alpha, g.h)
    mid = g.points_per_axis // 2
    assert k[5:-5, mid].all()
    assert not k[5:-5, mid + 3].any()


def test_short_horizon_leaves_cells_unreached(bump, grid):
    f = arrival_by_shooting(bump, E1, grid, horizon=0.0)
    assert not f.reached.all()
    assert np.isnan(f.predict(np.array([[1.4, 0.0]])))[0]


def test_coarse_fan_raises(flat):
    g = default_grid(2, H)
    with pytest.raises(ArrivalError):
        arrival_by_shooting(flat, DIAG, g, fan_spacing=0.5)


def test_grid_must_cover_ball(flat):
    with pytest.raises(ValueError):
        arrival_by_sweeping(flat, E1, Grid(2, 0.9, 0.05))


def test_inflow_faces():
    g = Grid(2, 1.0, 0.1)
    m = inflow_faces(g, E1)
    assert m[:2].all() and not m[2:].any()


def test_csv_and_pgm(tmp_path, bump_fields):
    from rigidlab.io import read_csv, read_pgm

    f = bump_fields[1]
    f.to_csv(tmp_path / "a.csv")
    f.to_pgm(tmp_path / "a.pgm")
    header, cols, data = read_csv(tmp_path / "a.csv")
    assert cols[:3] == ["x", "y", "alpha"] and len(data) == f.alpha.size
    assert read_pgm(tmp_path / "a.pgm").shape == f.alpha.shape


def test_estimators(flat):
    est = SweepingArrival(omega=(0.0, 1.0), h=0.05)
    assert clone(est).get_params() == est.get_params()
    est.fit(flat)
    np.testing.assert_allclose(est.predict(np.array([[0.3, -0.2]])), [-0.2], atol=1e-9)
    assert est.residual().linf < 1e-9
    shoot = ShootingArrival(omega=(0.0, 1.0), h=0.05).fit(flat)
    np.testing.assert_allclose(shoot.predict(np.array([[0.3, -0.2]])), [-0.2], atol=1e-9)


@settings(max_examples=6)
@given(st.floats(0, 2 * np.pi))
def test_euclidean_sweeping_any_direction(angle):
    omega = np.array([np.cos(angle), np.sin(angle)])
    g = Grid(2, 1.5, 0.05)
    f = arrival_by_sweeping(euclidean(2), omega, g)
    assert np.abs(f.alpha - g.points() @ omega).max() < 1e-8
