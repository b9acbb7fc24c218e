"""Triangle meshes, the discrete lift measure on R^3 x S^2, shape operators and test shapes.

Shape operators use the sign ``S = dN`` restricted to the tangent plane, so the unit
sphere with outward normals has ``S = I`` and a unit tangent step ``v`` moves the
normal by ``S v``.
"""
from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay

DEGENERATE_REL = 1e-12


class MeshError(ValueError):
    """Input mesh is unreadable or violates a structural requirement."""


class MeshParseError(MeshError):
    pass


class NonOrientableError(MeshError):
    pass


class DegenerateFaceError(MeshError):
    def __init__(self, faces):
        self.faces = list(map(int, faces))
        shown = self.faces[:20]
        super().__init__(f"{len(self.faces)} degenerate face(s): {shown}")


class UnderdeterminedNeighborhoodError(MeshError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(_face_cross(self.vertices, self.faces), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def scale(self) -> float:
        return float(np.ptp(self.vertices, axis=0).max()) or 1.0

    def vertex_areas(self) -> np.ndarray:
        """One third of the area of every incident face."""
        out = np.zeros(self.n_vertices)
        np.add.at(out, self.faces.ravel(), np.repeat(self.face_areas / 3.0, 3))
        return out

    def area_centroid(self) -> np.ndarray:
        a = self.face_areas
        c = self.vertices[self.faces].mean(axis=1)
        return (a[:, None] * c).sum(axis=0) / a.sum()

    def boundary_vertices(self) -> np.ndarray:
        e = _undirected_edges(self.faces)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[uniq[counts == 1].ravel()] = True
        return mask


@dataclass(frozen=True)
class SurfaceSample:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)

    def translated(self, t) -> "SurfaceSample":
        return SurfaceSample(self.points + np.asarray(t, dtype=float), self.normals, self.weights)

    def transformed(self, g, t=None) -> "SurfaceSample":
        g = np.asarray(g, dtype=float)
        pts = self.points @ g.T
        if t is not None:
            pts = pts + np.asarray(t, dtype=float)
        return SurfaceSample(pts, self.normals @ g.T, self.weights)

    def centroid(self) -> np.ndarray:
        return (self.weights[:, None] * self.points).sum(axis=0) / self.weights.sum()


@dataclass(frozen=True)
class ShapeOperatorField:
    """Per-vertex ``S`` in the tangent frame ``frames[i] = (e1, e2)``; NaN where not estimated."""

    frames: np.ndarray
    S: np.ndarray
    valid: np.ndarray

    def principal_curvatures(self) -> np.ndarray:
        out = np.full((len(self.S), 2), np.nan)
        out[self.valid] = np.linalg.eigvalsh(self.S[self.valid])
        return out

    def ambient(self) -> np.ndarray:
        """``S`` as a 3x3 map on R^3 (zero along the normal)."""
        return np.einsum("nai,nab,nbj->nij", self.frames, np.nan_to_num(self.S), self.frames)


@dataclass(frozen=True)
class SurfaceBounds:
    R: float
    kappa_max: float

    def __post_init__(self):
        if not (self.R > 0 and self.kappa_max > 0):
            raise ValueError("bounds must be positive")


# ---------------------------------------------------------------------------
# Construction and validation


def _face_cross(v, f):
    return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def _undirected_edges(f):
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    return np.sort(e, axis=1)


def vertex_normals(vertices, faces) -> np.ndarray:
    """Area-weighted average of face normals, renormalized."""
    cr = _face_cross(vertices, faces)
    n = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(n, faces[:, k], cr)
    norm = np.linalg.norm(n, axis=1)
    if np.any(norm == 0):
        raise MeshError("isolated vertex or cancelling normals; cannot define a vertex normal")
    return n / norm[:, None]


def build_mesh(vertices, faces, normals=None, meta=None) -> TriangleMesh:
    """Validate and assemble a mesh; normals are recomputed from winding if not given."""
    v = np.ascontiguousarray(vertices, dtype=float)
    f = np.ascontiguousarray(faces, dtype=np.int64)
    if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
        raise MeshParseError("vertices must be a nonempty (N, 3) array")
    if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
        raise MeshParseError("faces must be a nonempty (F, 3) array")
    if f.min() < 0 or f.max() >= len(v):
        raise MeshParseError("face index out of range")
    scale = float(np.ptp(v, axis=0).max()) or 1.0
    area = 0.5 * np.linalg.norm(_face_cross(v, f), axis=1)
    bad = np.nonzero(area <= DEGENERATE_REL * scale * scale)[0]
    if len(bad):
        raise DegenerateFaceError(bad)
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    _, counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise NonOrientableError("inconsistent winding: a directed edge is shared by two faces")
    _, ucounts = np.unique(_undirected_edges(f), axis=0, return_counts=True)
    if np.any(ucounts > 2):
        raise NonOrientableError("non-manifold edge shared by more than two faces")
    # drop vertices no face uses
    used = np.zeros(len(v), dtype=bool)
    used[f.ravel()] = True
    if not used.all():
        remap = -np.ones(len(v), dtype=np.int64)
        remap[used] = np.arange(used.sum())
        v, f = v[used], remap[f]
        if normals is not None:
            normals = np.asarray(normals)[used]
    if normals is None:
        n = vertex_normals(v, f)
    else:
        n = np.asarray(normals, dtype=float)
        n = n / np.linalg.norm(n, axis=1)[:, None]
    for arr in (v, f, n):
        arr.setflags(write=False)
    return TriangleMesh(v, f, n, dict(meta or {}))


def apply_rigid(mesh: TriangleMesh, g, t=(0.0, 0.0, 0.0)) -> TriangleMesh:
    g = np.asarray(g, dtype=float)
    v = mesh.vertices @ g.T + np.asarray(t, dtype=float)
    return build_mesh(v, mesh.faces, mesh.normals @ g.T, mesh.meta)


def merge(*meshes: TriangleMesh) -> TriangleMesh:
    vs, fs, ns, off = [], [], [], 0
    for m in meshes:
        vs.append(m.vertices)
        fs.append(m.faces + off)
        ns.append(m.normals)
        off += m.n_vertices
    kappa = max((m.meta.get("kappa_max", 0.0) for m in meshes), default=0.0)
    meta = {"kind": "merged"}
    if kappa:
        meta["kappa_max"] = kappa
    return build_mesh(np.vstack(vs), np.vstack(fs), np.vstack(ns), meta)


# ---------------------------------------------------------------------------
# IO


def _data_lines(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _fan(poly):
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def parse_off(text: str) -> TriangleMesh:
    lines = list(_data_lines(text))
    if not lines:
        raise MeshParseError("empty OFF file")
    head = lines[0].split()
    if head[0] != "OFF":
        raise MeshParseError("missing OFF header")
    rest = head[1:] if len(head) > 1 else None
    body = lines[1:]
    if rest is None:
        if not body:
            raise MeshParseError("missing OFF counts")
        rest, body = body[0].split(), body[1:]
    try:
        nv, nf = int(rest[0]), int(rest[1])
        verts = [[float(t) for t in body[k].split()[:3]] for k in range(nv)]
        faces = []
        for k in range(nv, nv + nf):
            tok = body[k].split()
            cnt = int(tok[0])
            faces.extend(_fan([int(t) for t in tok[1:1 + cnt]]))
    except (IndexError, ValueError) as exc:
        raise MeshParseError(f"malformed OFF data: {exc}") from exc
    if any(len(p) != 3 for p in verts):
        raise MeshParseError("vertex record with fewer than 3 coordinates")
    return build_mesh(np.array(verts), np.array(faces))


def parse_obj(text: str) -> TriangleMesh:
    verts, faces = [], []
    try:
        for line in _data_lines(text):
            tok = line.split()
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = []
                for t in tok[1:]:
                    i = int(t.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                faces.extend(_fan(idx))
    except ValueError as exc:
        raise MeshParseError(f"malformed OBJ record: {exc}") from exc
    if not verts or not faces:
        raise MeshParseError("OBJ file has no vertices or faces")
    return build_mesh(np.array(verts), np.array(faces))


def load_mesh(path, fmt: str | None = None) -> TriangleMesh:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    text = path.read_text()
    if fmt == "off":
        return parse_off(text)
    if fmt == "obj":
        return parse_obj(text)
    raise MeshParseError(f"unsupported mesh format: {fmt!r}")


def format_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {len(mesh.faces)} 0"]
    out += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    return "\n".join(out) + "\n"


def write_off(mesh: TriangleMesh, path) -> None:
    Path(path).write_text(format_off(mesh))


def write_point_off(points, path) -> None:
    pts = np.asarray(points, dtype=float)
    lines = ["OFF", f"{len(pts)} 0 0"] + [" ".join(repr(float(c)) for c in p) for p in pts]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Quadrature of the lift


def _sym3(a, w):
    b = 1 - 2 * a
    return [((a, a, b), w), ((a, b, a), w), ((b, a, a), w)]


# Symmetric triangle rules with positive weights; keys are the polynomial degree.
_RULES = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: _sym3(1 / 6, 1 / 3),
    4: _sym3(0.445948490915965, 0.223381589678011) + _sym3(0.091576213509771, 0.109951743655322),
    5: [((1 / 3, 1 / 3, 1 / 3), 0.225)]
    + _sym3(0.470142064105115, 0.132394152788506)
    + _sym3(0.101286507323456, 0.125939180544827),
}


def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric nodes and weights (summing to 1) exact for polynomials of degree ``order``."""
    if not 1 <= order <= 5:
        raise ValueError("triangle quadrature order must be in 1..5")
    key = min(k for k in _RULES if k >= order)
    nodes = np.array([n for n, _ in _RULES[key]])
    w = np.array([w for _, w in _RULES[key]])
    return nodes, w / w.sum()


def sample_measure(mesh: TriangleMesh, quadrature_order: int = 2) -> SurfaceSample:
    """Weighted points of the lift ``{(x, N_x)}``; weights sum to the mesh area."""
    bary, w = triangle_rule(quadrature_order)
    tri = mesh.vertices[mesh.faces]
    nrm = mesh.normals[mesh.faces]
    pts = np.einsum("qk,fkd->fqd", bary, tri).reshape(-1, 3)
    ns = np.einsum("qk,fkd->fqd", bary, nrm).reshape(-1, 3)
    ns /= np.linalg.norm(ns, axis=1)[:, None]
    wt = np.outer(mesh.face_areas, w).ravel()
    return SurfaceSample(pts, ns, wt)


def vertex_sample(mesh: TriangleMesh) -> SurfaceSample:
    """Lumped sample: one node per vertex weighted by its area share."""
    return SurfaceSample(mesh.vertices.copy(), mesh.normals.copy(), mesh.vertex_areas())


# ---------------------------------------------------------------------------
# Shape operator


def tangent_frames(normals) -> np.ndarray:
    """Orthonormal ``(e1, e2)`` per normal, shape (N, 2, 3); ``e1 x e2 = n``."""
    n = np.asarray(normals, dtype=float)
    helper = np.where(np.abs(n[:, [0]]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(n, e1)
    return np.stack([e1, e2], axis=1)


def ring_neighbors(mesh: TriangleMesh, rings: int = 2) -> list[np.ndarray]:
    f = mesh.faces
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
    a = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.n_vertices,) * 2)
    reach = a.copy()
    for _ in range(rings - 1):
        reach = reach + reach @ a
    reach = reach.tocsr()
    reach.setdiag(0)
    reach.eliminate_zeros()
    return [reach.indices[reach.indptr[i]:reach.indptr[i + 1]] for i in range(mesh.n_vertices)]


def estimate_shape_operator(mesh: TriangleMesh, rings: int = 2, strict: bool = True,
                            method: str = "normals") -> ShapeOperatorField:
    """Per-vertex shape operator ``S = dN`` in the tangent frame, fitted over the ``rings``-ring.

    ``method="normals"`` fits the symmetric S to ``N_j - N_i ~ S (x_j - x_i)`` (tangent parts);
    ``method="height"`` fits a quadratic height function instead.
    """
    if method not in ("normals", "height"):
        raise ValueError(f"unknown method {method!r}")
    frames = tangent_frames(mesh.normals)
    nbrs = ring_neighbors(mesh, rings)
    boundary = mesh.boundary_vertices()
    S = np.full((mesh.n_vertices, 2, 2), np.nan)
    valid = np.zeros(mesh.n_vertices, dtype=bool)
    for i in range(mesh.n_vertices):
        if boundary[i]:
            continue
        nb = nbrs[i]
        nb = nb[nb != i]
        if len(nb) < 5:
            if strict:
                raise UnderdeterminedNeighborhoodError(f"vertex {i} has only {len(nb)} neighbors within {rings} rings")
            continue
        d = mesh.vertices[nb] - mesh.vertices[i]
        u, w = d @ frames[i, 0], d @ frames[i, 1]
        if method == "height":
            h = d @ mesh.normals[i]
            design = np.column_stack([0.5 * u * u, u * w, 0.5 * w * w, u, w])
            coef = np.linalg.lstsq(design, h, rcond=None)[0]
            S[i] = -np.array([[coef[0], coef[1]], [coef[1], coef[2]]])
        else:
            dn = mesh.normals[nb] - mesh.normals[i]
            du, dw = dn @ frames[i, 0], dn @ frames[i, 1]
            z = np.zeros_like(u)
            # unknowns (s11, s12, s22): du = s11 u + s12 w, dw = s12 u + s22 w
            design = np.vstack([np.column_stack([u, w, z]), np.column_stack([z, u, w])])
            coef = np.linalg.lstsq(design, np.concatenate([du, dw]), rcond=None)[0]
            S[i] = np.array([[coef[0], coef[1]], [coef[1], coef[2]]])
        valid[i] = True
    return ShapeOperatorField(frames, S, valid)


def surface_bounds(mesh: TriangleMesh, shape: ShapeOperatorField | None = None) -> SurfaceBounds:
    """Bounding radius about the area centroid; curvature bound from metadata or estimate.

    The curvature bound never drops below ``1/R``: flat pieces would otherwise zero every
    curvature-relative tolerance.
    """
    c = mesh.area_centroid()
    R = float(np.linalg.norm(mesh.vertices - c, axis=1).max())
    kappa = mesh.meta.get("kappa_max")
    if kappa is None:
        shape = shape or estimate_shape_operator(mesh, strict=False)
        kappa = float(np.nanmax(np.abs(shape.principal_curvatures())))
    return SurfaceBounds(R, max(float(kappa), 1.0 / R))


# ---------------------------------------------------------------------------
# Generators

_PHI = (1 + math.sqrt(5)) / 2
_ICO_V = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
])
_ICO_F = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosphere_arrays(level: int) -> tuple[np.ndarray, np.ndarray]:
    v = _ICO_V / np.linalg.norm(_ICO_V, axis=1)[:, None]
    f = _ICO_F.copy()
    for _ in range(level):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        key = np.sort(e, axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1)[:, None]
        base = len(v)
        v = np.vstack([v, mid])
        nf = len(f)
        m01, m12, m20 = (base + inv[k * nf:(k + 1) * nf] for k in range(3))
        f = np.concatenate([
            np.column_stack([f[:, 0], m01, m20]),
            np.column_stack([f[:, 1], m12, m01]),
            np.column_stack([f[:, 2], m20, m12]),
            np.column_stack([m01, m12, m20]),
        ])
    return v, f


def _grid_faces(nu, nv, wrap_u, wrap_v):
    faces = []
    iu = range(nu if wrap_u else nu - 1)
    iv = range(nv if wrap_v else nv - 1)
    for i in iu:
        for j in iv:
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [(a, b, c), (a, c, d)]
    return np.array(faces)


def _orient_outward(v, f):
    vol = np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum()
    return f if vol >= 0 else f[:, ::-1].copy()


def make_sphere(radius: float = 1.0, level: int = 3) -> TriangleMesh:
    v, f = icosphere_arrays(level)
    return build_mesh(radius * v, f, v, meta={"kind": "sphere", "kappa_max": 1.0 / radius})


def make_ellipsoid(a: float, b: float, c: float, level: int = 3) -> TriangleMesh:
    v, f = icosphere_arrays(level)
    ax = np.array([a, b, c], dtype=float)
    kappa = ax.max() / ax.min() ** 2
    # exact normals: gradient of the implicit quadric
    return build_mesh(v * ax, f, v / ax, meta={"kind": "ellipsoid", "axes": ax.tolist(), "kappa_max": float(kappa)})


def perturbation_field(xyz) -> np.ndarray:
    """Fixed smooth asymmetric radial modulation used by ``perturbed_ellipsoid``."""
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return x * y + 0.7 * y * z * z - 0.5 * x * x * z + 0.3 * x


def make_perturbed_ellipsoid(a, b, c, amplitude=0.05, level=3) -> TriangleMesh:
    v, f = icosphere_arrays(level)
    v = v * (1.0 + amplitude * perturbation_field(v))[:, None]
    ax = np.array([a, b, c], dtype=float)
    # curvature bound: generous analytic envelope; refined by estimation when needed
    kappa = ax.max() / ax.min() ** 2 * (1 + 10 * amplitude)
    return build_mesh(v * ax, f, meta={"kind": "perturbed_ellipsoid", "kappa_max": float(kappa)})


def torus_point(R, r, theta, phi) -> np.ndarray:
    rho = R + r * np.cos(theta)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), r * np.sin(theta)], axis=-1)


def make_torus(R: float = 2.0, r: float = 0.5, level: int = 3) -> TriangleMesh:
    if not R > r > 0:
        raise ValueError("torus needs R > r > 0")
    nphi = 6 * 2 ** level
    ntheta = max(8, int(round(nphi * r / R * 2)))
    phi = 2 * math.pi * np.arange(nphi) / nphi
    theta = 2 * math.pi * np.arange(ntheta) / ntheta
    P, T = np.meshgrid(phi, theta, indexing="ij")
    v = torus_point(R, r, T, P).reshape(-1, 3)
    f = _orient_outward(v, _grid_faces(nphi, ntheta, True, True))
    n = np.stack([np.cos(T) * np.cos(P), np.cos(T) * np.sin(P), np.sin(T)], axis=-1).reshape(-1, 3)
    return build_mesh(v, f, n, meta={"kind": "torus", "kappa_max": 1.0 / r})


def make_cylinder_patch(radius: float = 1.0, height: float = 2.0, level: int = 3) -> TriangleMesh:
    if radius <= 0 or height <= 0:
        raise ValueError("cylinder needs positive radius and height")
    nphi = 6 * 2 ** level
    nz = max(3, int(round(nphi * height / (2 * math.pi * radius))) + 1)
    phi = 2 * math.pi * np.arange(nphi) / nphi
    z = np.linspace(-height / 2, height / 2, nz)
    P, Z = np.meshgrid(phi, z, indexing="ij")
    v = np.stack([radius * np.cos(P), radius * np.sin(P), Z], axis=-1).reshape(-1, 3)
    f = _grid_faces(nphi, nz, True, False)
    n = v.copy()
    n[:, 2] = 0
    if np.einsum("ij,ij->i", vertex_normals(v, f), n).sum() < 0:
        f = f[:, ::-1].copy()
    return build_mesh(v, f, n, meta={"kind": "cylinder_patch", "kappa_max": 1.0 / radius})


def make_disc(radius: float = 1.0, level: int = 3) -> TriangleMesh:
    """Flat disc in the xy-plane with normal +z."""
    if radius <= 0:
        raise ValueError("disc needs positive radius")
    rings = 2 ** level
    pts = [(0.0, 0.0)]
    for k in range(1, rings + 1):
        n = 6 * k
        ang = 2 * math.pi * np.arange(n) / n
        pts += list(zip(radius * k / rings * np.cos(ang), radius * k / rings * np.sin(ang)))
    p2 = np.array(pts)
    f = Delaunay(p2).simplices
    v = np.column_stack([p2, np.zeros(len(p2))])
    cr = _face_cross(v, f)
    f = np.where((cr[:, 2] < 0)[:, None], f[:, ::-1], f)
    return build_mesh(v, f, np.tile([0.0, 0.0, 1.0], (len(v), 1)), meta={"kind": "disc", "kappa_max": 1.0})


def make_two_spheres(offset=(3.0, 0.0, 0.0), level: int = 3) -> TriangleMesh:
    a = make_sphere(1.0, level)
    b = apply_rigid(a, np.eye(3), offset)
    return merge(a, b)


SHAPES = {
    "sphere": (make_sphere, ("radius",)),
    "ellipsoid": (make_ellipsoid, ("a", "b", "c")),
    "torus": (make_torus, ("R", "r")),
    "cylinder_patch": (make_cylinder_patch, ("radius", "height")),
    "perturbed_ellipsoid": (make_perturbed_ellipsoid, ("a", "b", "c", "amplitude")),
    "disc": (make_disc, ("radius",)),
    "two_spheres": (make_two_spheres, ("offset",)),
}


def make_shape(kind: str, params=(), resolution: int = 3) -> TriangleMesh:
    """Generate a named test shape; ``params`` is positional in the order of ``SHAPES[kind]``."""
    if kind not in SHAPES:
        raise ValueError(f"unknown shape kind {kind!r}; choose from {sorted(SHAPES)}")
    fn, names = SHAPES[kind]
    params = list(params)
    if kind == "two_spheres":
        if len(params) not in (0, 3):
            raise ValueError("two_spheres takes an offset of three numbers, or nothing")
        params = [tuple(params)] if params else []
    else:
        required = sum(p.default is inspect.Parameter.empty for p in inspect.signature(fn).parameters.values())
        if not required <= len(params) <= len(names):
            raise ValueError(f"{kind} takes {required} to {len(names)} parameters {names}")
        if any(not (isinstance(p, (int, float)) and p > 0) for p in params):
            raise ValueError(f"{kind} parameters must be positive numbers")
    if resolution < 0:
        raise ValueError("resolution must be non-negative")
    return fn(*params, level=resolution)


def chart_point(mesh: TriangleMesh, shape: ShapeOperatorField, i: int, uv) -> tuple[np.ndarray, np.ndarray]:
    """Point and unit normal of the local quadratic patch at vertex ``i``, tangent coords ``uv``."""
    uv = np.asarray(uv, dtype=float)
    e = shape.frames[i]
    n = mesh.normals[i]
    S = np.nan_to_num(shape.S[i])
    su = S @ uv
    p = mesh.vertices[i] + uv @ e - 0.5 * float(uv @ su) * n
    nn = n + su @ e
    return p, nn / np.linalg.norm(nn)


def chart_points(mesh: TriangleMesh, shape: ShapeOperatorField, idx, uv) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`chart_point` for index array ``idx`` and offsets ``uv`` of shape (N, 2)."""
    idx = np.asarray(idx)
    uv = np.asarray(uv, dtype=float)
    e = shape.frames[idx]
    n = mesh.normals[idx]
    su = np.einsum("nab,nb->na", np.nan_to_num(shape.S[idx]), uv)
    p = mesh.vertices[idx] + np.einsum("na,nad->nd", uv, e) - 0.5 * (uv * su).sum(1)[:, None] * n
    nn = n + np.einsum("na,nad->nd", su, e)
    return p, nn / np.linalg.norm(nn, axis=1, keepdims=True)


def lifted_face_areas(vertices, normals, faces) -> np.ndarray:
    """Area of each triangle of the lift ``x -> (x, N_x)`` in R^6, corners joined linearly."""
    lift = np.hstack([vertices, normals])
    a = lift[faces[:, 1]] - lift[faces[:, 0]]
    b = lift[faces[:, 2]] - lift[faces[:, 0]]
    aa, bb, ab = (a * a).sum(1), (b * b).sum(1), (a * b).sum(1)
    return 0.5 * np.sqrt(np.maximum(aa * bb - ab * ab, 0.0))


def mean_edge_length(mesh: TriangleMesh) -> float:
    e = np.unique(_undirected_edges(mesh.faces), axis=0)
    return float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean())
