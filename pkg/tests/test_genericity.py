import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from se3inv.fiber import OracleContext
from se3inv.genericity import (
    FAIL,
    PASS,
    SYMMETRY_TOL,
    Tolerances,
    _align,
    check_star,
    check_star_star,
    default_angle_tol,
    diagonal_explained,
    find_x2_candidates,
    format_report,
    global_symmetries,
    pair_families,
)
from se3inv.so3 import random_rotation
from se3inv.surface import make_shape, mean_edge_length

SMALL = Tolerances(pair_budget=800, witness_budget=4000, max_witnesses=200)


def _off_diagonal(mesh):
    ctx = OracleContext.build(mesh)
    tol = default_angle_tol(mesh)
    pairs = find_x2_candidates(mesh, tol)
    return pairs[~diagonal_explained(mesh, ctx.shape, pairs, tol, ctx.h)]


@pytest.fixture(scope="module")
def ellipsoid_star(ellipsoid3):
    return check_star(ellipsoid3)


@pytest.fixture(scope="module")
def sphere_star_star(sphere3):
    return check_star_star(sphere3, SMALL)


def test_sphere_x2_is_diagonal(sphere3):
    assert len(_off_diagonal(sphere3)) == 0
    pairs = find_x2_candidates(sphere3)
    assert set(range(sphere3.n_vertices)) <= {int(i) for i, j in pairs if i == j}


def test_two_spheres_cross_family():
    mesh = make_shape("two_spheres", (), 3)
    off = _off_diagonal(mesh)
    half = mesh.n_vertices // 2
    # every genuine off-diagonal pair joins the two spheres; ordered, plus two diagonals, gives four families
    assert np.all((off[:, 0] < half) & (off[:, 1] >= half))
    assert len(np.unique(pair_families(mesh, off))) == 1


def test_torus_pairs_sit_on_opposite_sides():
    mesh = make_shape("torus", (2.0, 0.5), 3)
    rep = check_star(mesh)
    off = [w for w in rep.witnesses if not w.diagonal]
    assert off
    rho = np.linalg.norm(mesh.vertices[:, :2], axis=1)
    s = np.array([rho[w.i] + rho[w.j] for w in off])
    assert np.abs(s - 4.0).max() < 0.2


def test_disc_fails_requirement_one():
    rep = check_star(make_shape("disc", (1.0,), 3))
    assert rep.verdict == FAIL and 1 in rep.failed_requirements()


def test_ellipsoid_star_passes(ellipsoid_star):
    assert ellipsoid_star.verdict == PASS
    assert ellipsoid_star.bad_fraction < 0.01


@given(st.floats(1e-5, 0.5), st.floats(1e-5, 0.5))
def test_star_fraction_monotone_in_rank_tol(ellipsoid_star, a, b):
    lo, hi = sorted((a, b))
    r_lo, r_hi = ellipsoid_star.evaluate(lo), ellipsoid_star.evaluate(hi)
    assert r_lo.bad_fraction <= r_hi.bad_fraction
    assert not (r_lo.verdict == FAIL and r_hi.verdict == PASS)


@given(st.floats(1e-6, 0.1), st.floats(1e-6, 0.1))
def test_star_star_fraction_monotone_in_rank_tol(sphere_star_star, a, b):
    lo, hi = sorted((a, b))
    assert sphere_star_star.evaluate(lo).bad_fraction <= sphere_star_star.evaluate(hi).bad_fraction


def test_sphere_fails_star_star(sphere_star_star):
    assert sphere_star_star.verdict == FAIL
    assert 1 in sphere_star_star.failed_requirements()


def test_star_star_reproducible(sphere3):
    a, b = check_star_star(sphere3, SMALL), check_star_star(sphere3, SMALL)
    assert format_report(a) == format_report(b)
    np.testing.assert_array_equal(a.iota_sv, b.iota_sv)


def test_star_witness_reproducible(ellipsoid3, ellipsoid_star):
    again = check_star(ellipsoid3)
    assert again.witnesses == ellipsoid_star.witnesses


@given(st.integers(0, 2 ** 31))
def test_align_is_minimal_rotation(seed):
    rng = np.random.default_rng(seed)
    a, b = (v / np.linalg.norm(v) for v in rng.normal(size=(2, 3)))
    if a @ b < -0.99:
        return
    R = _align(a, b)
    np.testing.assert_allclose(R @ a, b, atol=1e-10)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-10)
    ax = np.cross(a, b)
    np.testing.assert_allclose(R @ ax, ax, atol=1e-10)


def test_global_symmetries(sphere3, ellipsoid3):
    rng = np.random.default_rng(0)
    gs = np.stack([random_rotation(rng) for _ in range(4)])
    assert global_symmetries(sphere3, gs, SYMMETRY_TOL * mean_edge_length(sphere3)).all()
    flip = np.diag([1.0, -1.0, -1.0])
    more = np.stack([flip] + [random_rotation(rng) for _ in range(50)])
    got = global_symmetries(ellipsoid3, more, SYMMETRY_TOL * mean_edge_length(ellipsoid3))
    assert got[0] and not got[1:].any()


def test_report_is_key_value(ellipsoid_star):
    text = format_report(ellipsoid_star)
    keys = [line.split(" = ")[0] for line in text.strip().splitlines()]
    assert keys[0] == "verdict" and len(keys) == len(set(keys))
