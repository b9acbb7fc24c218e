import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from se3inv.so3 import random_rotation
from se3inv.surface import (
    DegenerateFaceError,
    MeshParseError,
    NonOrientableError,
    UnderdeterminedNeighborhoodError,
    apply_rigid,
    build_mesh,
    chart_point,
    chart_points,
    estimate_shape_operator,
    format_off,
    lifted_face_areas,
    load_mesh,
    make_shape,
    mean_edge_length,
    merge,
    parse_obj,
    parse_off,
    sample_measure,
    surface_bounds,
    tangent_frames,
    triangle_rule,
    vertex_sample,
)

TET_V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
TET_F = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


def test_tetrahedron_normals_point_outward():
    m = build_mesh(TET_V, TET_F)
    c = TET_V.mean(0)
    assert np.all(np.einsum("ij,ij->i", m.normals, m.vertices - c) > 0)
    assert m.area == pytest.approx(1.5 + math.sqrt(3) / 2)


def test_off_round_trip(ellipsoid3):
    back = parse_off(format_off(ellipsoid3))
    np.testing.assert_array_equal(back.vertices, ellipsoid3.vertices)
    np.testing.assert_array_equal(back.faces, ellipsoid3.faces)


def test_off_quads_and_comments():
    text = "OFF # header comment\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    m = parse_off(text)
    assert len(m.faces) == 2
    assert m.area == pytest.approx(1.0)


def test_obj_negative_indices(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1 -2/2 -1/3\n"
    p = tmp_path / "t.obj"
    p.write_text(text)
    m = load_mesh(p)
    assert m.faces.tolist() == [[0, 1, 2]]
    assert parse_obj(text).area == pytest.approx(0.5)


@pytest.mark.parametrize("text", ["", "PLY\n", "OFF\n3 1 0\n0 0 0\n1 0 0\n", "OFF\n1 1 0\n0 0\n3 0 0 0\n"])
def test_bad_off(text):
    with pytest.raises(MeshParseError):
        parse_off(text)


def test_unknown_extension(tmp_path):
    p = tmp_path / "m.stl"
    p.write_text("solid")
    with pytest.raises(MeshParseError):
        load_mesh(p)


def test_degenerate_face_reported():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0.0]])
    with pytest.raises(DegenerateFaceError) as exc:
        build_mesh(v, [[0, 1, 2], [0, 1, 3]])
    assert exc.value.faces == [0]


def test_inconsistent_winding():
    with pytest.raises(NonOrientableError):
        build_mesh(TET_V, [[0, 1, 2], [0, 1, 3]])


def test_unused_vertices_dropped():
    v = np.vstack([TET_V, [[5, 5, 5.0]]])
    assert build_mesh(v, TET_F).n_vertices == 4


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_triangle_rule_exactness(order):
    bary, w = triangle_rule(order)
    # integral of x^i y^j over the unit simplex (area 1/2) is i! j! / (i+j+2)!, divided by the area
    for i in range(order + 1):
        for j in range(order + 1 - i):
            exact = math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2) * 2
            assert w @ (bary[:, 1] ** i * bary[:, 2] ** j) == pytest.approx(exact, abs=1e-13)


def test_triangle_rule_range():
    with pytest.raises(ValueError):
        triangle_rule(6)


def test_sample_weights_sum_to_area(ellipsoid3):
    s = sample_measure(ellipsoid3, 2)
    assert s.weights.sum() == pytest.approx(ellipsoid3.area)
    np.testing.assert_allclose(np.linalg.norm(s.normals, axis=1), 1.0)
    assert vertex_sample(ellipsoid3).weights.sum() == pytest.approx(ellipsoid3.area)


def test_sphere_area_converges():
    errs = [abs(make_shape("sphere", (1.0,), k).area - 4 * math.pi) for k in (2, 3, 4)]
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_shape_operator_sphere_is_identity(sphere3):
    sh = estimate_shape_operator(sphere3)
    assert sh.valid.all()
    np.testing.assert_allclose(sh.S, np.broadcast_to(np.eye(2), sh.S.shape), atol=1e-10)


def test_shape_operator_ellipsoid_axis_points():
    # principal curvatures at (a, 0, 0) are a / b^2 and a / c^2
    a, b, c = 1.0, 1.3, 1.7
    m = make_shape("ellipsoid", (a, b, c), 5)
    sh = estimate_shape_operator(m)
    i = int(np.argmax(m.vertices[:, 0]))
    np.testing.assert_allclose(np.sort(sh.principal_curvatures()[i]), np.sort([a / c ** 2, a / b ** 2]), rtol=5e-3)


def test_shape_operator_height_method_agrees(ellipsoid3):
    s1 = estimate_shape_operator(ellipsoid3, method="normals").principal_curvatures()
    s2 = estimate_shape_operator(ellipsoid3, method="height").principal_curvatures()
    assert np.median(np.abs(s1 - s2)) < 0.05


def test_disc_is_flat_and_boundary_skipped():
    m = make_shape("disc", (1.0,), 3)
    sh = estimate_shape_operator(m, strict=False)
    assert not sh.valid[m.boundary_vertices()].any()
    assert np.abs(sh.S[sh.valid]).max() < 1e-12


def test_underdetermined_neighbourhood():
    m = build_mesh(TET_V, TET_F)
    with pytest.raises(UnderdeterminedNeighborhoodError):
        estimate_shape_operator(m, rings=1)


def test_tangent_frames_right_handed():
    n = np.random.default_rng(0).normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1)[:, None]
    E = tangent_frames(n)
    np.testing.assert_allclose(np.cross(E[:, 0], E[:, 1]), n, atol=1e-14)


@given(st.integers(0, 2 ** 31))
def test_rigid_motion_preserves_shape_operator(seed):
    r = np.random.default_rng(seed)
    m = make_shape("ellipsoid", (1.0, 1.3, 1.7), 2)
    g = random_rotation(r)
    moved = apply_rigid(m, g, r.normal(size=3))
    k1 = estimate_shape_operator(m).principal_curvatures()
    k2 = estimate_shape_operator(moved).principal_curvatures()
    np.testing.assert_allclose(k1, k2, atol=1e-9)
    assert moved.area == pytest.approx(m.area)


def test_chart_vectorised_matches_scalar(ellipsoid3):
    sh = estimate_shape_operator(ellipsoid3)
    idx = np.array([0, 5, 17])
    uv = np.array([[0.01, -0.02], [0.0, 0.03], [-0.02, 0.01]])
    P, N = chart_points(ellipsoid3, sh, idx, uv)
    for k, i in enumerate(idx):
        p, n = chart_point(ellipsoid3, sh, i, uv[k])
        np.testing.assert_allclose(P[k], p, atol=1e-15)
        np.testing.assert_allclose(N[k], n, atol=1e-15)


def test_chart_on_sphere_is_second_order(sphere3):
    sh = estimate_shape_operator(sphere3)
    uv = np.array([0.05, 0.02])
    p, n = chart_point(sphere3, sh, 3, uv)
    # quadratic patch: radial error O(|uv|^4), normal error O(|uv|^2)
    assert abs(np.linalg.norm(p) - 1) < 1e-4
    assert np.linalg.norm(n - p / np.linalg.norm(p)) < 5e-3


def test_bounds(ellipsoid3):
    b = surface_bounds(ellipsoid3)
    assert b.R == pytest.approx(1.7, rel=1e-9)
    assert b.kappa_max == pytest.approx(1.7)


def test_merge_and_two_spheres():
    m = make_shape("two_spheres", (), 2)
    assert m.n_vertices == 2 * make_shape("sphere", (), 2).n_vertices
    assert merge(m).n_vertices == m.n_vertices


@pytest.mark.parametrize("kind,params", [("torus", (0.5, 2.0)), ("sphere", (-1.0,)), ("nope", ()), ("ellipsoid", (1, 2, 3, 4))])
def test_make_shape_rejects(kind, params):
    with pytest.raises(ValueError):
        make_shape(kind, params, 2)


def test_lifted_area_exceeds_flat_area(ellipsoid3):
    lifted = lifted_face_areas(ellipsoid3.vertices, ellipsoid3.normals, ellipsoid3.faces)
    assert np.all(lifted >= ellipsoid3.face_areas - 1e-15)


def test_mean_edge_length_halves(sphere3):
    finer = make_shape("sphere", (), 4)
    assert mean_edge_length(sphere3) / mean_edge_length(finer) == pytest.approx(2.0, rel=0.03)
