import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from rigidlab.media import (
    Bump,
    DiffeoSpec,
    DisplacementTerm,
    Medium,
    bump_profile,
    check_admissible,
    compute_bounds,
    dump_medium,
    euclidean,
    load_medium,
    make_bump_density,
    make_metric_bumps,
    make_pullback_metric,
    medium_from_dict,
)

from .conftest import pullback_spec

points = st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2).map(np.array)


def test_bump_peak_and_support():
    assert bump_profile(np.zeros(2), (0, 0), 0.5) == pytest.approx(1.0)
    assert bump_profile(np.array([0.5, 0.0]), (0, 0), 0.5) == 0.0


def test_bump_density_values(bump):
    # rho = 1 + amplitude * beta, beta(center) = 1
    assert bump.rho(np.zeros(2)) == pytest.approx(1.2)
    assert bump.rho(np.array([0.9, 0.0])) == 1.0


def test_bounds_of_bump(bump):
    b = compute_bounds(bump)
    assert b.rho_max == pytest.approx(1.2)
    assert b.rho_min == pytest.approx(1.0)
    # g = rho I for density media
    assert b.g_max == pytest.approx(1.2)


def test_bounds_of_euclidean(flat):
    b = compute_bounds(flat)
    assert (b.g_min, b.g_max, b.rho_min, b.rho_max) == (1.0, 1.0, 1.0, 1.0)


def test_density_metric_is_conformal(bump):
    X = np.array([[0.1, 0.2], [0.5, -0.3]])
    G = bump.metric(X)
    np.testing.assert_allclose(G, bump.rho(X)[:, None, None] * np.eye(2))


def test_identity_pullback_is_euclidean(flat):
    spec = DiffeoSpec((DisplacementTerm(0.0, (0.0, 0.0), 0.5, offset=(1.0, 0.0)),))
    m = make_pullback_metric(spec)
    X = np.random.default_rng(0).uniform(-1.5, 1.5, (200, 2))
    np.testing.assert_array_equal(m.metric(X), flat.metric(X))
    np.testing.assert_array_equal(m.weight(X), flat.weight(X))


def test_pullback_metric_matches_finite_difference_jacobian(pullback):
    # independent oracle: J from centred differences of psi, g = J^T J
    spec = pullback_spec()
    X = np.array([[0.1, -0.2], [0.4, 0.3], [-0.5, 0.1]])
    step = 1e-6
    J = np.empty((len(X), 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        J[:, :, j] = (spec.psi(X + e) - spec.psi(X - e)) / (2 * step)
    np.testing.assert_allclose(pullback.metric(X), np.swapaxes(J, 1, 2) @ J, atol=1e-8)


def test_metric_gradient_matches_finite_differences(pullback):
    X = np.array([[0.2, 0.1], [-0.3, 0.4]])
    step = 1e-6
    dG = pullback.metric_gradient(X)
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        fd = (pullback.metric(X + e) - pullback.metric(X - e)) / (2 * step)
        np.testing.assert_allclose(dG[:, k], fd, atol=1e-7)


def test_pullback_is_admissible(pullback):
    assert check_admissible(pullback).passed
    assert pullback_spec().verify() > 0


def test_bump_too_wide_rejected():
    with pytest.raises(ValueError, match="support"):
        make_bump_density(0.2, (0.3, 0.0), 0.8)


def test_nonpositive_density_rejected():
    with pytest.raises(ValueError):
        make_bump_density(-1.0, (0.0, 0.0), 0.5)


def test_metric_bump_needs_positive_definiteness():
    with pytest.raises(ValueError):
        make_metric_bumps([Bump(-2.0, (0.0, 0.0), 0.5, ((1.0, 0.0), (0.0, 1.0)))], 2)


def test_yaml_round_trip(pullback, bump):
    for m in (pullback, bump):
        again = load_medium(dump_medium(m))
        assert again == m


def test_medium_from_dict_needs_kind():
    with pytest.raises(ValueError, match="kind"):
        medium_from_dict({"dimension": 2})


def test_unknown_kind():
    with pytest.raises(ValueError):
        Medium("sound", 2)


@given(points)
def test_metric_symmetric_positive_definite(x):
    for m in (make_bump_density(0.3, (0.1, 0.0), 0.6), make_pullback_metric(pullback_spec())):
        G = m.metric(x)
        np.testing.assert_allclose(G, G.T, atol=1e-14)
        assert np.linalg.eigvalsh(G).min() > 0


@given(points)
def test_euclidean_outside_collar(x):
    m = make_pullback_metric(pullback_spec())
    if np.linalg.norm(x) >= 1 - m.delta:
        np.testing.assert_array_equal(m.metric(x), np.eye(2))
        assert m.weight(x) == 1.0


@given(points)
def test_bounds_enclose_metric(x):
    m = make_pullback_metric(pullback_spec())
    b = compute_bounds(m)
    ev = np.linalg.eigvalsh(m.metric(x))
    # bounds are sampled on a grid, so allow a sliver of slack
    assert b.g_min - 1e-3 <= ev.min() and ev.max() <= b.g_max + 1e-3


def test_yaml_schema_is_plain_data(pullback):
    data = yaml.safe_load(dump_medium(pullback))
    assert data["kind"] == "metric" and data["diffeo"]["displacements"][0]["amplitude"] == 0.1


def test_euclidean_factory():
    assert euclidean(3).is_euclidean and euclidean(3).dimension == 3
