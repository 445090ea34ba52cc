from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from residualspike.errors import PoleError, ValidationError
from residualspike.matgen import (
    DataMatrix,
    EntryModel,
    PerturbationModel,
    ScenarioSpec,
    apply_perturbation,
    generate_base,
    sample_covariance,
)
from residualspike.spectra import SpectralSummary, eigen_sym
from residualspike.spikes import (
    FilteredCovariance,
    build_filtered,
    debias_theta,
    debias_value,
    double_center,
    filtered_from_matrix,
    rescale_variance,
    select_k,
)


def random_filter(m, k, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, 3 * m))
    a[:k] *= 4.0
    return filtered_from_matrix(a @ a.T / (3 * m), k)


def test_double_center_constant_matrix():
    out = double_center(DataMatrix(np.full((3, 4), 2.5)))
    np.testing.assert_array_equal(out.values, 0.0)


def test_double_center_means_vanish_and_idempotent():
    x = DataMatrix(np.random.default_rng(0).standard_normal((5, 7)) + 3.0)
    once = double_center(x)
    assert np.abs(once.values.mean(axis=0)).max() < 1e-12
    assert np.abs(once.values.mean(axis=1)).max() < 1e-12
    np.testing.assert_allclose(double_center(once).values, once.values, atol=1e-12)


def test_double_center_needs_two_by_two():
    with pytest.raises(ValidationError):
        double_center(DataMatrix(np.ones((1, 5))))


def test_select_k_null_spectra_give_margin_only():
    spec = ScenarioSpec(400, 800, 800, seed=3)
    ks = []
    for r in range(20):
        cov = sample_covariance(generate_base(spec, "X", r))
        ks.append(select_k(SpectralSummary.from_matrix(cov, c=0.5)))
    assert ks == [1] * 20


def test_select_k_detects_planted_spike():
    spec = ScenarioSpec(200, 200, 200, EntryModel(), PerturbationModel((50.0,)), seed=4)
    x = apply_perturbation(generate_base(spec, "X"), spec.perturbation)
    assert select_k(SpectralSummary.from_matrix(sample_covariance(x), c=1.0)) == 2


def test_select_k_override_and_scale_invariance():
    spec = ScenarioSpec(100, 200, 200, EntryModel(), PerturbationModel((30.0, 10.0)), seed=5)
    cov = sample_covariance(apply_perturbation(generate_base(spec, "X"), spec.perturbation))
    s = SpectralSummary.from_matrix(cov, c=0.5)
    assert select_k(s, override=8) == 8
    assert select_k(s) == select_k(s.scaled(37.0)) == 3


def test_select_k_never_exceeds_quarter_dimension():
    vals = np.r_[np.full(30, 1000.0), np.ones(70)]
    assert select_k(SpectralSummary(vals, c=0.1)) < 100 / 4


def test_select_k_requires_aspect_ratio():
    with pytest.raises(ValidationError):
        select_k(SpectralSummary(np.ones(10)))


def test_rescale_scale_equivariance():
    x = generate_base(ScenarioSpec(20, 40, 40, seed=6), "X")
    out1, s1 = rescale_variance(x, 2)
    out3, s3 = rescale_variance(x.with_values(3 * x.values), 2)
    assert s3 == pytest.approx(9 * s1)
    np.testing.assert_allclose(out3.values, out1.values, atol=1e-12)
    bulk = SpectralSummary.from_matrix(sample_covariance(out1)).eigenvalues[2:]
    assert bulk.mean() == pytest.approx(1.0, abs=1e-8)


def test_rescale_white_data_near_unit():
    _, s2 = rescale_variance(generate_base(ScenarioSpec(100, 200, 200, seed=7), "X"), 0)
    assert s2 == pytest.approx(1.0, rel=0.05)


def test_rescale_guards():
    x = generate_base(ScenarioSpec(10, 20, 20), "X")
    with pytest.raises(ValidationError):
        rescale_variance(x, 9)
    with pytest.raises(ValidationError):
        rescale_variance(DataMatrix(np.zeros((4, 4))), 0)


def test_debias_flat_bulk_fixed_point():
    s = SpectralSummary(np.r_[11.0, np.ones(50)])
    assert debias_theta(s, 1, 1) == pytest.approx(11.0)


def test_debias_two_level_bulk():
    s = SpectralSummary(np.r_[3.0, np.full(50, 0.5), np.full(50, 1.5)])
    assert debias_theta(s, 1, 1) == pytest.approx(8 / 3)


def test_debias_pole_inside_bulk():
    with pytest.raises(PoleError):
        debias_value(1.0, np.array([0.5, 1.5, 2.0]))


def test_debias_monte_carlo_recovers_planted_spike():
    m, n = 200, 400
    spec = ScenarioSpec(m, n, n, EntryModel(), PerturbationModel((10.0,)), seed=8)
    raw, deb = [], []
    for r in range(100):
        x = apply_perturbation(generate_base(spec, "X", r), spec.perturbation)
        s = SpectralSummary.from_matrix(sample_covariance(x))
        raw.append(s.eigenvalues[0])
        deb.append(debias_theta(s, 1, 1))
    c = m / n
    assert np.mean(deb) == pytest.approx(10.0, rel=0.03)
    # first-order bias of the top eigenvalue: θ + cθ/(θ-1)
    assert np.mean(raw) == pytest.approx(10 + c * 10 / 9, rel=0.03)


@settings(max_examples=40, deadline=None)
@given(
    bulk=st.lists(st.floats(0.0, 3.0), min_size=2, max_size=30),
    t1=st.floats(3.1, 50.0),
    dt=st.floats(0.01, 20.0),
)
def test_debias_increasing_and_shrinking(bulk, t1, dt):
    bulk = np.array(bulk)
    if not np.any(bulk > 0):
        return
    bulk = bulk / bulk.mean()  # shrinkage holds on the unit-mean scale (Jensen)
    if t1 <= bulk.max():
        return
    a = debias_value(t1, bulk)
    b = debias_value(t1 + dt, bulk)
    assert b > a
    if np.ptp(bulk) > 1e-9:
        assert a < t1
    else:
        assert a == pytest.approx(t1)


def test_build_filtered_identity_for_k0():
    f = build_filtered(SpectralSummary(np.ones(4)), np.eye(4), 0)
    x = np.arange(4.0)
    np.testing.assert_array_equal(f.apply(x), x)
    np.testing.assert_array_equal(f.apply_inverse_sqrt(x), x)


def test_build_filtered_inverse_sqrt_canonical():
    s = SpectralSummary(np.r_[4.0, np.ones(5)])
    f = build_filtered(s, np.eye(6), 1)
    assert f.thetas[0] == pytest.approx(4.0)
    np.testing.assert_allclose(f.apply_inverse_sqrt(np.eye(6)[:, 0]), np.eye(6)[:, 0] / 2)


def test_filtered_dense_algebra():
    f = random_filter(6, 2, 9)
    inv = f.dense(-0.5)
    np.testing.assert_allclose(inv @ f.dense() @ inv, np.eye(6), atol=1e-12)


def test_filtered_spectrum_is_thetas_and_ones():
    f = random_filter(12, 3, 10)
    np.testing.assert_allclose(eigen_sym(f.dense())[0], f.spectrum(), atol=1e-10)
    np.testing.assert_allclose(f.spectrum()[:3], np.sort(f.thetas)[::-1])
    np.testing.assert_allclose(f.spectrum()[3:], 1.0)


def test_spike_estimates_are_unit_and_above_one():
    f = random_filter(20, 2, 11)
    for e in f.estimates:
        assert abs(np.linalg.norm(e.eigenvector) - 1) < 1e-10
        assert e.debiased_theta > 1


def test_filtered_json_roundtrip(tmp_path):
    f = random_filter(8, 2, 12)
    path = tmp_path / "f.json"
    f.save(path)
    g = FilteredCovariance.from_json(path.read_text())
    np.testing.assert_array_equal(g.thetas, f.thetas)
    np.testing.assert_array_equal(g.vectors, f.vectors)
    assert g.k == 2 and g.m == 8
