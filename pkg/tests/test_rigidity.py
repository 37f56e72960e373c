import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse.linalg import spsolve
from sklearn.base import clone

from rigidlab.arrival import arrival_by_sweeping, default_grid
from rigidlab.forward import ConfigError
from rigidlab.media import Bump, euclidean, make_metric_bumps
from rigidlab.rigidity import (
    CONSISTENT,
    DISTINGUISHABLE,
    WITNESS,
    Check,
    HarmonicCoordinates,
    RigidityReport,
    _DirichletSystem,
    diffeo_condition_checklist,
    fan_fold,
    laplacian_of_arrival,
    omega_set,
    pair_identity_residual,
    pair_index,
    recover_diffeo,
    solve_harmonic_coordinate,
    solve_harmonic_set,
    verify_metric_rigidity,
    verify_rho_rigidity,
)

from .conftest import E1

H = 0.03


def anisotropic():
    # a metric bump that is not a pullback of the Euclidean metric
    return make_metric_bumps([Bump(0.2, (0.0, 0.0), 0.7, ((1.0, 0.0), (0.0, 0.0)))], 2)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_omega_set(n):
    dirs = omega_set(n)
    assert len(dirs) == n * (n + 1) // 2
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    for (i, j), k in pair_index(n).items():
        np.testing.assert_allclose(dirs[k], (dirs[i] + dirs[j]) / math.sqrt(2))


def test_euclidean_harmonic_coordinates_are_linear(flat):
    for w in omega_set(2):
        f = solve_harmonic_coordinate(flat, w, H)
        P = f.grid.points()
        assert np.abs(f.values - P @ w).max() < 1e-12
        assert f.iterations == 0 or f.residual < 1e-12


def test_cg_matches_direct_solve(pullback):
    sysm = _DirichletSystem(pullback, 0.05, 1.05)
    f = solve_harmonic_coordinate(pullback, E1, 0.05, system=sysm)
    data = (sysm.points @ E1).ravel()
    direct = spsolve(sysm.A.tocsc(), sysm.LIB @ data[sysm.B])
    assert np.abs(f.values.ravel()[sysm.I] - direct).max() < 1e-10


def test_radius_must_stay_in_collar(flat):
    with pytest.raises(ValueError):
        solve_harmonic_coordinate(flat, E1, H, radius=1.5)


def test_laplacian_of_euclidean_arrival_vanishes(flat):
    f = arrival_by_sweeping(flat, E1, default_grid(2, H))
    _, norms = laplacian_of_arrival(f, flat)
    assert norms["cells"] > 0 and norms["linf"] < 1e-9


def test_laplacian_of_bump_arrival_is_reported(bump):
    f = arrival_by_sweeping(bump, E1, default_grid(2, H))
    _, norms = laplacian_of_arrival(f, bump)
    assert np.isfinite(norms["l2"])


@pytest.mark.parametrize("medium", ["pullback", "anisotropic"])
def test_pair_identity(medium, request):
    m = request.getfixturevalue("pullback") if medium == "pullback" else anisotropic()
    fields = solve_harmonic_set(m, H)
    assert pair_identity_residual(fields, 2) < 1e-9


def test_recovery_on_pullback(pullback):
    rec = recover_diffeo(pullback, solve_harmonic_set(pullback, H))
    inner = rec.interior
    assert rec.ortho[inner].max() < 15 * H
    assert rec.det[inner].min() > 0
    assert rec.identity[rec.ring].max() < 1e-8
    assert rec.truth_error[inner].max() < 0.01 * (H / 0.015) ** 2
    # both forms of the pullback residual carry the same spectrum
    np.testing.assert_allclose(rec.inverse_form_norm[inner], rec.pullback_form_norm[inner], atol=1e-10)


def test_recovery_fails_orthonormality_off_pullbacks():
    m = anisotropic()
    rec = recover_diffeo(m, solve_harmonic_set(m, H))
    assert rec.ortho[rec.interior].max() > 0.05


def test_harmonic_estimator(pullback):
    est = HarmonicCoordinates(h=0.05)
    assert clone(est).get_params() == {"h": 0.05, "tol": 1e-12}
    X = np.array([[0.0, 0.0], [1.05, 0.0], [0.3, -0.4]])
    Y = est.fit(pullback).transform(X)
    assert Y.shape == (3, 2)
    np.testing.assert_allclose(Y[1], X[1], atol=1e-12)
    assert np.abs(Y - pullback.diffeo.psi(X)).max() < 0.01


def test_report_logic():
    checks = [Check("a", 0.1, 1.0, "pass"), Check("b", 2.0, 1.0, "warn", required=False)]
    r = RigidityReport("x", "m", checks, CONSISTENT)
    assert r.passed and r.exit_code == 0 and r.check("b").status == "warn"
    bad = RigidityReport("x", "m", [Check("a", 2.0, 1.0, "fail")], WITNESS, witness=True)
    assert not bad.passed and bad.exit_code == 2
    assert "FAIL" in bad.to_text()


def test_report_write(tmp_path):
    r = RigidityReport("x", "m", [Check("a", 0.1, 1.0, "pass")], CONSISTENT)
    paths = r.write(tmp_path)
    assert all(p.exists() for p in paths)


def test_rho_pipeline_null_case(flat):
    r = verify_rho_rigidity(flat, h=H, horizon=3.2)
    assert r.verdict == CONSISTENT and r.exit_code == 0
    assert r.check("rho_hat_equals_one").value < 5 * H
    assert r.check("trace_distance").value == 0.0


def test_rho_pipeline_rejects_short_horizon(bump):
    with pytest.raises(ConfigError, match=r"T=2 violates T > 4√g_max − 1 = 3.38"):
        verify_rho_rigidity(bump, h=H, horizon=2.0)


def test_rho_pipeline_needs_density(pullback):
    with pytest.raises(ValueError):
        verify_rho_rigidity(pullback, h=H)


def test_rho_pipeline_bump_with_given_floor(bump):
    # a tiny supplied floor makes any difference decisive
    r = verify_rho_rigidity(bump, h=0.05, floor=1e-6)
    assert r.verdict.startswith(DISTINGUISHABLE) and not r.witness


def test_witness_when_data_match_but_recovery_fails():
    # force "match" with a huge floor on a strongly non-pullback medium
    m = make_metric_bumps([Bump(2.0, (0.0, 0.0), 0.7, ((1.0, 0.0), (0.0, 0.0)))], 2)
    report, _ = verify_metric_rigidity(m, h=H, floors=[1e3] * 3)
    assert report.witness and report.exit_code == 2
    assert report.verdict.startswith(WITNESS)


def test_metric_pipeline_recovery_only(pullback):
    report, rec = verify_metric_rigidity(pullback, h=H, traces=False)
    assert report.check("pair_identity").status == "pass"
    assert report.check("psi_hat_vs_psi").status == "pass"


def test_checklist_euclidean(flat):
    cl = diffeo_condition_checklist(flat, E1, 3.0, fan_spacing=0.05, h=H)
    assert [i.key for i in cl.items] == ["a", "b", "c", "d", "e"]
    assert all(i.status == "pass" for i in cl.items[:4])
    assert cl.item("e").status == "skipped"


def test_checklist_rejects_short_horizon(bump):
    with pytest.raises(ConfigError):
        diffeo_condition_checklist(bump, E1, 0.5)


def test_strong_lens_folds():
    from rigidlab.media import make_bump_density

    flips, _ = fan_fold(make_bump_density(3.0, (0.0, 0.0), 0.5), E1, 3.0, spacing=0.05, dt=5e-3)
    assert flips > 0


def test_no_folds_in_weak_bump(bump):
    flips, _ = fan_fold(bump, E1, 3.0, spacing=0.05, dt=5e-3)
    assert flips == 0


@given(st.floats(0, 2 * np.pi))
def test_linear_data_is_harmonic_for_any_direction(angle):
    w = np.array([np.cos(angle), np.sin(angle)])
    f = solve_harmonic_coordinate(euclidean(2), w, 0.1)
    assert np.abs(f.values - f.grid.points() @ w).max() < 1e-12
