from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from residualspike.errors import DegenerateError, ValidationError
from residualspike.matgen import (
    DataMatrix,
    EntryModel,
    PerturbationModel,
    ScenarioSpec,
    generate_pair,
)
from residualspike.nulldist import mp_special_case, orderk_null_sample, residual_zone
from residualspike.pipeline import (
    ResidualSpectrum,
    TestConfig,
    extract_residual_vectors,
    residual_spectrum,
    run_test,
)
from residualspike.spectra import SpectralSummary
from residualspike.spikes import build_filtered, filtered_from_matrix

FAST = TestConfig(null_replicates=2000)


def random_filter(m, k, seed, strength=4.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, 3 * m))
    a[:k] *= strength
    return filtered_from_matrix(a @ a.T / (3 * m), k)


def identity_filter(m):
    return build_filtered(SpectralSummary(np.ones(m)), np.eye(m), 0)


def dense_spectrum(fx, fy):
    ax = fx.dense(-0.5)
    return np.sort(np.linalg.eigvalsh(ax @ fy.dense() @ ax))[::-1]


def null_pair(m=100, n_x=200, n_y=200, thetas=(50.0, 20.0), seed=0, replicate=0, model=None):
    spec = ScenarioSpec(m, n_x, n_y, model or EntryModel(), PerturbationModel(thetas), seed)
    return generate_pair(spec, replicate)


def rotation_fixing_ones(m, seed):
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(np.column_stack([np.ones(m), rng.standard_normal((m, m - 1))]))[0][:, 1:]
    r = np.linalg.qr(rng.standard_normal((m - 1, m - 1)))[0]
    return np.full((m, m), 1 / m) + basis @ r @ basis.T


# ---------------------------------------------------------- residual spectrum


@pytest.mark.parametrize("m,k,method", [(20, 2, "reduced"), (20, 2, "dense"), (60, 3, "auto")])
def test_residual_spectrum_matches_dense_oracle(m, k, method):
    fx, fy = random_filter(m, k, 1), random_filter(m, k, 2)
    res = residual_spectrum(fx, fy, method)
    np.testing.assert_allclose(res.full(), dense_spectrum(fx, fy), atol=1e-9)
    v = res.eigenvectors
    ax = fx.dense(-0.5)
    mat = ax @ fy.dense() @ ax
    np.testing.assert_allclose(mat @ v, v * res.eigenvalues, atol=1e-9 * res.eigenvalues.max())
    np.testing.assert_allclose(np.linalg.norm(v, axis=0), 1.0, atol=1e-12)


def test_reduced_and_dense_paths_agree_above_threshold():
    fx, fy = random_filter(600, 4, 3), random_filter(600, 4, 4)
    red = residual_spectrum(fx, fy)  # auto selects the reduced path here
    den = residual_spectrum(fx, fy, "dense")
    np.testing.assert_allclose(red.eigenvalues, den.eigenvalues, atol=1e-9)
    assert red.unit_multiplicity == den.unit_multiplicity == 592


def test_identity_y_filter_gives_inverse_thetas():
    fx = random_filter(15, 2, 5)
    res = residual_spectrum(fx, identity_filter(15), "reduced")
    expected = np.sort(np.r_[1 / fx.thetas, np.ones(13)])[::-1]
    np.testing.assert_allclose(res.full(), expected, atol=1e-12)


def test_equal_filters_give_unit_spectrum():
    fx = random_filter(25, 3, 6)
    for method in ("reduced", "dense"):
        res = residual_spectrum(fx, fx, method)
        np.testing.assert_allclose(res.full(), 1.0, atol=1e-12)
        assert res.above().size == res.below().size == 0
        assert res.max == pytest.approx(1.0) and res.min == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(9, 30), kx=st.integers(1, 2), ky=st.integers(1, 2), seed=st.integers(0, 10_000))
def test_residual_spectrum_reciprocal(m, kx, ky, seed):
    fx, fy = random_filter(m, kx, seed), random_filter(m, ky, seed + 1)
    a = residual_spectrum(fx, fy, "reduced").full()
    b = residual_spectrum(fy, fx, "reduced").full()
    np.testing.assert_allclose(np.sort(a), np.sort(1 / b), rtol=1e-9)


def test_residual_spectrum_rejects_mismatch():
    with pytest.raises(ValidationError):
        residual_spectrum(random_filter(10, 1, 0), random_filter(12, 1, 1))
    with pytest.raises(ValidationError):
        residual_spectrum(random_filter(10, 1, 0), random_filter(10, 1, 1), "sparse")


# ------------------------------------------------------------------- run_test


def test_identical_data_never_rejects():
    x, _ = null_pair()
    rep = run_test(x, x, FAST)
    assert rep.spikes_above == rep.spikes_below == ()
    assert rep.lambda_max == pytest.approx(1.0, abs=1e-12)
    assert rep.lambda_min == pytest.approx(1.0, abs=1e-12)
    assert rep.p_max > 0.99 and rep.p_min > 0.99
    assert not rep.reject and rep.residual_vectors == ()


def test_report_fields_under_null():
    x, y = null_pair(seed=3)
    rep = run_test(x, y, FAST)
    assert rep.k_used == max(rep.k_selected) >= 2
    assert rep.reject == (rep.p_max < 0.025 or rep.p_min < 0.025)
    assert list(rep.spikes_above) == sorted(rep.spikes_above, reverse=True)
    assert list(rep.spikes_below) == sorted(rep.spikes_below)
    assert rep.zone.lower < 1 < rep.zone.upper
    assert rep.thetas_x[0] == pytest.approx(50.0, rel=0.3)
    assert rep.sigma2_x == pytest.approx(1.0, rel=0.1)
    for rv in rep.residual_vectors:
        assert np.linalg.norm(rv.vector) == pytest.approx(1.0)


def test_scale_invariance():
    x, y = null_pair(seed=4)
    a = run_test(x, y, FAST)
    b = run_test(x.with_values(3.0 * x.values), y.with_values(0.2 * y.values), FAST)
    np.testing.assert_allclose(b.residual.eigenvalues, a.residual.eigenvalues, rtol=1e-9)
    assert b.p_max == pytest.approx(a.p_max) and b.p_min == pytest.approx(a.p_min)
    assert b.sigma2_x == pytest.approx(9 * a.sigma2_x)


def test_orthogonal_invariance_without_centering():
    x, y = null_pair(m=60, n_x=120, n_y=90, seed=5)
    q = np.linalg.qr(np.random.default_rng(0).standard_normal((60, 60)))[0]
    cfg = TestConfig(null_replicates=2000, center=False)
    a = run_test(x, y, cfg)
    b = run_test(x.with_values(q @ x.values), y.with_values(q @ y.values), cfg)
    np.testing.assert_allclose(b.residual.eigenvalues, a.residual.eigenvalues, atol=1e-8)


def test_orthogonal_invariance_with_centering():
    # double centering commutes with rotations that fix the all-ones vector
    x, y = null_pair(m=60, n_x=120, n_y=90, seed=6)
    q = rotation_fixing_ones(60, 1)
    a = run_test(x, y, FAST)
    b = run_test(x.with_values(q @ x.values), y.with_values(q @ y.values), FAST)
    np.testing.assert_allclose(b.residual.eigenvalues, a.residual.eigenvalues, atol=1e-8)


def test_swap_canonicalisation():
    x, y = null_pair(m=60, n_x=150, n_y=80, seed=7)
    a = run_test(x, y, FAST)
    b = run_test(y, x, FAST)
    assert not a.swapped and b.swapped
    assert a.to_dict() | {"swapped": None} == b.to_dict() | {"swapped": None}


def test_report_json_is_deterministic(tmp_path):
    x, y = null_pair(seed=8)
    a, b = run_test(x, y, FAST), run_test(x, y, FAST)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["format_version"] == 1
    assert d["null_model"]["offdiag_normality"] == "assumed"
    paths = a.write_exports(tmp_path / "rep")
    names = sorted(p.name for p in paths)
    assert "rep_residual_spectrum.csv" in names and "rep_null_max_hist.csv" in names
    text = (tmp_path / "rep_residual_spectrum.csv").read_text().splitlines()
    assert text[-1] == f"1.0,{a.residual.unit_multiplicity}"


def test_robust_mode_reports_both_models():
    x, y = null_pair(seed=9)
    rep = run_test(x, y, TestConfig(null_replicates=2000, moment_estimator="robust"))
    assert set(rep.moments) == {"usual", "robust"}
    assert rep.usual_null_model is not None
    assert rep.moments["robust"]["m2x"] >= rep.moments["usual"]["m2x"]
    assert rep.null_model["lambda_plus"] >= rep.usual_null_model["lambda_plus"]


def test_k_override_is_used():
    x, y = null_pair(seed=10)
    assert run_test(x, y, TestConfig(null_replicates=2000, k_override=5)).k_used == 5


def test_run_test_errors():
    x, y = null_pair(m=40, n_x=80, n_y=80, seed=11)
    with pytest.raises(ValidationError):
        run_test(x, y, TestConfig(null_replicates=2000, k_override=10))
    short = DataMatrix(y.values[:30])
    with pytest.raises(ValidationError):
        run_test(x, short, FAST)
    with pytest.raises(ValidationError):
        TestConfig(null_replicates=10)
    with pytest.raises(ValidationError):
        TestConfig(alpha=1.5)


def test_flat_spectra_are_degenerate():
    # noise-free orthogonal rows give flat bulks; skipping centering keeps them flat
    q = np.linalg.qr(np.random.default_rng(0).standard_normal((80, 80)))[0]
    x = DataMatrix(np.sqrt(80) * q[:40])
    y = DataMatrix(np.sqrt(80) * q[40:])
    with pytest.raises(DegenerateError):
        run_test(x, y, TestConfig(null_replicates=2000, center=False, k_override=1))


def test_power_and_direction_under_planted_difference():
    m, n, reps = 100, 200, 20
    hits, weights = 0, []
    for r in range(reps):
        sx = ScenarioSpec(m, n, n, EntryModel(), PerturbationModel((1000.0, 200.0, 16.0)), seed=20)
        sy = ScenarioSpec(m, n, n, EntryModel(), PerturbationModel((1000.0, 200.0, 160.0)), seed=20)
        x, _ = generate_pair(sx, r)
        _, y = generate_pair(sy, r)
        rep = run_test(x, y, TestConfig(null_replicates=2000, seed=r))
        hits += rep.reject
        top = rep.residual.eigenvectors[:, 0]
        weights.append(abs(top[2]))
    assert hits / reps > 0.9
    assert np.median(weights) > 0.8


def test_null_pvalues_are_not_anticonservative():
    pmax = []
    for r in range(30):
        x, y = null_pair(m=80, n_x=160, n_y=160, thetas=(40.0, 10.0), seed=12, replicate=r)
        pmax.append(run_test(x, y, TestConfig(null_replicates=2000, seed=r)).p_max)
    pmax = np.array(pmax)
    assert np.mean(pmax < 0.1) <= 0.2
    assert np.mean(pmax) > 0.4


# ------------------------------------------------------- residual eigenvectors


def synthetic_spectrum(values):
    values = np.asarray(values, dtype=float)
    return ResidualSpectrum(values, np.eye(10, values.size), 10 - values.size)


def test_extract_flags_only_the_extreme_pair():
    model = mp_special_case(0.5, 2.0, 1000, k=8)
    sample = orderk_null_sample(model, 5000)
    zone = residual_zone(0.5, 2.0)
    spec = synthetic_spectrum([56.03, 4.5, 3.0, 0.5, 0.04])
    out = extract_residual_vectors(spec, zone, model, sample, 0.05)
    assert [rv.eigenvalue for rv in out] == [56.03, 4.5, 0.04]
    flagged = [rv.eigenvalue for rv in out if rv.significant]
    assert flagged == [56.03, 0.04]
    caution = [rv for rv in out if not rv.significant]
    assert len(caution) == 1 and caution[0].caution is not None
    assert [rv.side for rv in out] == ["max", "max", "min"]


def test_extract_empty_inside_zone():
    model = mp_special_case(0.5, 0.5, 100)
    out = extract_residual_vectors(synthetic_spectrum([1.5, 0.8]), residual_zone(0.5, 0.5), model, None, 0.05)
    assert out == []
