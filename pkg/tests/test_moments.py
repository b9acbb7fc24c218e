import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from se3inv.moments import (
    RhoMomentTensor,
    compute_rho_moments,
    convolve_translational,
    pairwise_difference_moments,
    pattern_error,
    quadratic_form_check,
    reflect_moments,
    sphere_pattern,
    to_racah,
)
from se3inv.so3 import random_rotation, real_wigner_from_matrix
from se3inv.sphharm import solid_basis
from se3inv.surface import SurfaceSample, make_shape, sample_measure


def _points(seed, n):
    r = np.random.default_rng(seed)
    nrm = r.normal(size=(n, 3))
    return SurfaceSample(r.normal(size=(n, 3)), nrm / np.linalg.norm(nrm, axis=1)[:, None], r.uniform(0.1, 2, n))


@given(st.integers(0, 2 ** 31), st.integers(1, 10), st.integers(0, 6), st.integers(0, 3))
def test_mgf_product_equals_pairwise_moments(seed, n, d, dp):
    s = _points(seed, n)
    rho = compute_rho_moments(s, d, dp, center=False)
    got = convolve_translational(rho).spatial_moments()
    ref = pairwise_difference_moments(s.points, s.weights, s.normals, d, dp)
    assert np.abs(got - ref).max() <= 1e-12 * max(np.abs(ref).max(), 1.0)


@given(st.integers(0, 2 ** 31))
def test_quadratic_form_audit(seed):
    rho = compute_rho_moments(_points(seed, 7), 4, 2)
    assert quadratic_form_check(rho, convolve_translational(rho)).passed


def test_quadratic_form_audit_catches_tampering():
    rho = compute_rho_moments(_points(0, 7), 3, 2)
    f = convolve_translational(rho)
    bad = type(f)(f.d, f.dp, f.data + 1e-6)
    assert not quadratic_form_check(rho, bad).passed


@given(st.integers(0, 2 ** 31))
def test_translational_tensor_ignores_translation(seed):
    s = _points(seed, 8)
    t = np.random.default_rng(seed).normal(size=3) * 3
    a = convolve_translational(compute_rho_moments(s, 5, 2, center=False)).data
    b = convolve_translational(compute_rho_moments(s.translated(t), 5, 2, center=False)).data
    np.testing.assert_allclose(a, b, atol=1e-9 * np.abs(a).max())


@given(st.integers(0, 2 ** 31))
def test_rho_moments_rotate_covariantly(seed):
    r = np.random.default_rng(seed)
    g = random_rotation(r)
    s = _points(seed, 9)
    d, dp = 3, 2
    A = compute_rho_moments(s, d, dp, center=False).data
    B = compute_rho_moments(s.transformed(g), d, dp, center=False).data
    W = [np.reshape(w, (2 * j + 1, 2 * j + 1)) for j, w in enumerate(real_wigner_from_matrix(max(d, dp), g))]
    Ws = np.zeros((len(A), len(A)))
    pos = 0
    for el in solid_basis(d):
        if el.c == -el.b:
            k = 2 * el.b + 1
            Ws[pos:pos + k, pos:pos + k] = W[el.b]
            pos += k
    Wh = np.zeros((A.shape[1],) * 2)
    for j in range(dp + 1):
        Wh[j * j:(j + 1) ** 2, j * j:(j + 1) ** 2] = W[j]
    np.testing.assert_allclose(B, Ws @ A @ Wh.T, atol=1e-11)


def test_reflection_flips_odd_degrees():
    rho = compute_rho_moments(_points(2, 5), 3, 1, center=False)
    ref = reflect_moments(rho)
    for k, el in enumerate(solid_basis(3)):
        np.testing.assert_allclose(ref.data[k], (-1) ** el.a * rho.data[k])


def test_sphere_pattern_and_racah_transcription():
    t = compute_rho_moments(sample_measure(make_shape("sphere", (), 4), 2), 4, 3)
    assert pattern_error(t) < 5e-3
    exact = RhoMomentTensor(4, 3, sphere_pattern(4, 3))
    rac = to_racah(exact)
    for k, el in enumerate(solid_basis(4)):
        for n in range(4):
            for m in range(-n, n + 1):
                want = 4 * np.pi / (2 * n + 1) if (el.b, el.c) == (n, m) else 0.0
                assert rac[k, n * n + n + m] == pytest.approx(want, abs=1e-14)


def test_centering_uses_area_centroid(ellipsoid3):
    s = sample_measure(ellipsoid3, 2)
    a = compute_rho_moments(s, 2, 1).data
    b = compute_rho_moments(s.translated([1.0, -2.0, 0.5]), 2, 1).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    # first moments vanish after centering
    first = [k for k, el in enumerate(solid_basis(2)) if el.a == 1]
    assert np.abs(a[first, 0]).max() < 1e-12


def test_caps_and_empty_sample_rejected():
    with pytest.raises(ValueError):
        compute_rho_moments(_points(0, 3), 13, 2)
    with pytest.raises(ValueError):
        compute_rho_moments(SurfaceSample(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)), 2, 2)


def test_entry_accessor():
    t = RhoMomentTensor(2, 1, sphere_pattern(2, 1))
    assert t.entry(1, 1, 0, 1, 0) == 1.0
    assert t.entry(2, 0, 0, 1, 0) == 0.0
