import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from se3inv.invariants import (
    CapMismatchError,
    InsufficientQuadratureError,
    InvariantDescriptor,
    channels,
    compute_descriptor,
    descriptor_distance,
    distance_breakdown,
    entry_keys,
    normalization_table,
    relative_change,
    required_quadrature_order,
    so3_convolve_cg,
    so3_convolve_quadrature,
)
from se3inv.moments import RhoMomentTensor, TranslationalTensor, convolve_translational, sphere_pattern
from se3inv.so3 import random_rotation, so3_quadrature
from se3inv.sphharm import solid_basis
from se3inv.surface import SurfaceSample, sample_measure


def _random_f(rng, d, dp):
    H = (dp + 1) ** 2
    return TranslationalTensor(d, dp, rng.normal(size=(len(solid_basis(d)), H, H)))


def _cloud(seed, n=6):
    r = np.random.default_rng(seed)
    nrm = r.normal(size=(n, 3))
    return SurfaceSample(r.normal(size=(n, 3)), nrm / np.linalg.norm(nrm, axis=1)[:, None], r.uniform(0.5, 1.5, n))


@pytest.mark.parametrize("d,dp", [(1, 1), (2, 1), (2, 2), (3, 1)])
def test_cg_route_matches_haar_quadrature(d, dp):
    f = _random_f(np.random.default_rng(d * 10 + dp), d, dp)
    a = so3_convolve_cg(f).values
    b = so3_convolve_quadrature(f, so3_quadrature(required_quadrature_order(d, dp))).values
    np.testing.assert_allclose(a, b, atol=1e-10 * np.abs(a).max())


def test_underintegrating_quadrature_rejected():
    f = _random_f(np.random.default_rng(0), 2, 2)
    with pytest.raises(InsufficientQuadratureError):
        so3_convolve_quadrature(f, so3_quadrature(required_quadrature_order(2, 2) - 1))


@settings(max_examples=15)
@given(st.integers(0, 2 ** 31))
def test_descriptor_is_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    s = _cloud(seed)
    g, t = random_rotation(rng), rng.normal(size=3) * 2
    a = compute_descriptor(s, 3, 2)
    b = compute_descriptor(s.transformed(g, t), 3, 2)
    assert relative_change(a, b) < 1e-10


def test_descriptor_distinguishes_point_sets():
    a, b = compute_descriptor(_cloud(1), 3, 2), compute_descriptor(_cloud(2), 3, 2)
    assert descriptor_distance(a, b) > 1e-3 * np.linalg.norm(a.values)


def test_frozen_sizes():
    # entry counts of the canonical ordering; a change here breaks stored descriptor files
    assert len(entry_keys(4, 3)) == 29418
    assert len(entry_keys(6, 4)) == 448115


def test_channels_respect_selection_rules():
    for c in channels(3, 2):
        assert (c.a - c.b) % 2 == 0 and c.b <= c.a
        assert abs(c.b - c.L) <= c.J <= c.b + c.L
        assert abs(c.n - c.n2) <= c.L <= c.n + c.n2
        if c.n == c.n2:
            assert (c.L - c.a) % 2 == 0


def test_normalization_table():
    tab = normalization_table(2, 1)
    assert tab[0] == 1.0
    assert tab[3] == pytest.approx(1 / np.sqrt(7))


def test_cap_mismatch():
    a = InvariantDescriptor(2, 1, np.zeros(len(entry_keys(2, 1))))
    b = InvariantDescriptor(2, 2, np.zeros(len(entry_keys(2, 2))))
    with pytest.raises(CapMismatchError):
        descriptor_distance(a, b)


def test_breakdown_sums_to_distance():
    a, b = compute_descriptor(_cloud(3), 2, 2), compute_descriptor(_cloud(4), 2, 2)
    assert np.sqrt(sum(distance_breakdown(a, b).values())) == pytest.approx(descriptor_distance(a, b))
    assert descriptor_distance(a, a) == 0.0


def test_mesh_sphere_matches_exact_pattern(sphere3):
    exact = so3_convolve_cg(convolve_translational(RhoMomentTensor(3, 2, sphere_pattern(3, 2)))).values
    mesh = compute_descriptor(sample_measure(sphere3, 2), 3, 2).values
    assert np.linalg.norm(mesh - exact) / np.linalg.norm(exact) < 5e-2


def test_gram_blocks_are_positive_semidefinite():
    desc = compute_descriptor(_cloud(5), 2, 2)
    for J, v in desc.per_J().items():
        n = int((np.sqrt(8 * len(v) + 1) - 1) / 2)
        G = np.zeros((n, n))
        G[np.triu_indices(n)] = v
        G = G + np.triu(G, 1).T
        assert np.linalg.eigvalsh(G).min() > -1e-10 * max(1.0, np.abs(G).max())
