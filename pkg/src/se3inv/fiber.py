"""Fiber geometry and fiber-selection reconstruction.

Coordinates
-----------
``iota3(p0, p1, p2) = (<p1,p2>, <p0,p2>, <p0,p1>, det[p0 p1 p2])``.  In this order the
degenerate set where ``p1 = alpha p0`` is ``D1 = {(alpha*beta, beta, alpha, 0)}``.

A pair element ``(a, b, c) = (m1 - m2, N_m1, N_m2)`` has ``iota4 = (|a|, iota3(a/|a|, b, c))``
and ``tau`` is the rotation carrying the canonical representative ``section(iota3)`` onto
``(a/|a|, b, c)``; ``psi(g, r, i) = (r g p0, g p1, g p2)`` inverts ``(tau, iota4)``.

Fibers
------
Over ``f = (s, r, i)`` the rotated pair-of-pairs set is a union of rigid copies of the lift,
``y -> (h (x - m2'), h N_x)`` with ``h = tau(m1bar)^{-1}`` for every pair element ``m1bar``
with ``iota4(m1bar) = (r, i)`` and every ``m2'`` with ``N_m2' = h^{-1} s``.  All copies pass
through ``(0, s)``.  Points of the fiber live in R^6 = R^3 x R^3 (the normal as a unit vector).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .surface import (
    ShapeOperatorField,
    SurfaceBounds,
    SurfaceSample,
    TriangleMesh,
    chart_point,
    chart_points,
    estimate_shape_operator,
    lifted_face_areas,
    mean_edge_length,
    surface_bounds,
)

DEFAULT_MARGIN_D1 = 0.05
DEFAULT_MARGIN_DELTA = 0.05
BUMP_POWER = 2
DEFAULT_COND_MIN = 0.05


class DegeneracyError(ArithmeticError):
    """Input lies in (or too close to) a degenerate locus."""


class D1ProximityError(DegeneracyError):
    pass


class DeltaProximityError(DegeneracyError):
    pass


class GramInconsistencyError(DegeneracyError):
    pass


class EmptyFiberError(DegeneracyError):
    pass


class IllConditionedFiberError(DegeneracyError):
    def __init__(self, msg: str, ill_fraction: float = 1.0):
        super().__init__(msg)
        self.ill_fraction = ill_fraction


class AllFibersDegenerateError(DegeneracyError):
    pass


class RankDeficientSurfaceError(DegeneracyError):
    """iota4 restricted to M2x2 loses rank almost everywhere (continuous symmetry)."""


# ---------------------------------------------------------------------------
# iota3, D1, section


@dataclass(frozen=True)
class I3Point:
    c12: float
    c02: float
    c01: float
    det: float

    def as_array(self) -> np.ndarray:
        return np.array([self.c12, self.c02, self.c01, self.det])

    @classmethod
    def from_array(cls, v) -> "I3Point":
        return cls(*map(float, v))

    def gram_det2(self) -> float:
        """``det^2`` implied by the inner products."""
        return gram_det2(self.as_array())

    def gram_residual(self) -> float:
        return abs(self.det ** 2 - self.gram_det2())


def gram_det2(i) -> np.ndarray:
    i = np.asarray(i, dtype=float)
    c12, c02, c01 = i[..., 0], i[..., 1], i[..., 2]
    return 1 + 2 * c01 * c02 * c12 - c01 ** 2 - c02 ** 2 - c12 ** 2


def iota3_array(p0, p1, p2) -> np.ndarray:
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    det = np.einsum("...i,...i->...", p0, np.cross(p1, p2))
    return np.stack([
        np.einsum("...i,...i->...", p1, p2),
        np.einsum("...i,...i->...", p0, p2),
        np.einsum("...i,...i->...", p0, p1),
        det,
    ], axis=-1)


def iota3(p0, p1, p2) -> I3Point:
    return I3Point.from_array(iota3_array(p0, p1, p2))


def distance_to_D1(i) -> np.ndarray:
    """Euclidean distance in R^4 from ``i`` to ``{(alpha*beta, beta, alpha, 0)}``."""
    i = np.asarray(i, dtype=float)
    c12, c02, c01, det = i[..., 0], i[..., 1], i[..., 2], i[..., 3]
    best = None
    for alpha in (1.0, -1.0):
        beta = np.clip((alpha * c12 + c02) / 2.0, -1.0, 1.0)
        d = np.sqrt((c12 - alpha * beta) ** 2 + (c02 - beta) ** 2 + (c01 - alpha) ** 2 + det ** 2)
        best = d if best is None else np.minimum(best, d)
    return best


def section(i, margin: float = DEFAULT_MARGIN_D1, gram_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical triple: ``p0 = e1``, ``p1`` in the xy half-plane y > 0, sign of z from det."""
    v = i.as_array() if isinstance(i, I3Point) else np.asarray(i, dtype=float)
    c12, c02, c01, det = v
    if distance_to_D1(v) < margin or 1 - abs(c01) < 1e-14:
        raise D1ProximityError(f"iota3 point {v} is within {margin} of D1")
    sn = math.sqrt(1 - c01 * c01)
    x = c02
    y = (c12 - c01 * c02) / sn
    z2 = 1 - x * x - y * y
    if z2 < -gram_tol:
        raise GramInconsistencyError(f"no real third vector for {v} (z^2 = {z2})")
    z = math.copysign(math.sqrt(max(z2, 0.0)), det) if det != 0 else 0.0 * z2
    if det == 0:
        z = 0.0
    return np.array([1.0, 0, 0]), np.array([c01, sn, 0.0]), np.array([x, y, z])


# ---------------------------------------------------------------------------
# tau, iota4, psi


def _frames(a_hat, b):
    """Columns (a_hat, f2, f3): the rotation taking the canonical frame to the pair frame."""
    f2 = b - np.einsum("...i,...i->...", b, a_hat)[..., None] * a_hat
    f2 = f2 / np.linalg.norm(f2, axis=-1, keepdims=True)
    f3 = np.cross(a_hat, f2)
    return np.stack([a_hat, f2, f3], axis=-1)


def _delta_distance(a_hat, b):
    return np.minimum(np.linalg.norm(a_hat - b, axis=-1), np.linalg.norm(a_hat + b, axis=-1))


def tau_array(a, b, c=None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return _frames(a / np.linalg.norm(a, axis=-1, keepdims=True), b)


def tau(a, b, c, margin: float = DEFAULT_MARGIN_DELTA) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    r = float(np.linalg.norm(a))
    if r == 0.0:
        raise DeltaProximityError("zero difference vector")
    a_hat = a / r
    if r < margin or _delta_distance(a_hat, np.asarray(b, dtype=float)) < margin:
        raise DeltaProximityError("difference direction is (anti)parallel to the first normal")
    return _frames(a_hat, np.asarray(b, dtype=float))


def iota4_array(a, b, c) -> np.ndarray:
    """``(r, c12, c02, c01, det)`` for arrays of pair elements."""
    a = np.asarray(a, dtype=float)
    r = np.linalg.norm(a, axis=-1)
    a_hat = a / np.maximum(r, 1e-300)[..., None]
    return np.concatenate([r[..., None], iota3_array(a_hat, b, c)], axis=-1)


def iota4(a, b, c) -> tuple[float, I3Point]:
    v = iota4_array(a, b, c)
    if v[0] == 0.0:
        raise DeltaProximityError("zero difference vector")
    return float(v[0]), I3Point.from_array(v[1:])


def psi(g, r: float, i, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p0, p1, p2 = section(i, margin=margin)
    g = np.asarray(g, dtype=float)
    return r * (g @ p0), g @ p1, g @ p2


# ---------------------------------------------------------------------------
# Fiber specs and pair samples


@dataclass(frozen=True)
class FiberSpec:
    s: np.ndarray
    r: float
    i: I3Point
    margin_d1: float = DEFAULT_MARGIN_D1

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        object.__setattr__(self, "s", s / np.linalg.norm(s))
        if self.r <= 0:
            raise ValueError("fiber radius must be positive")
        if distance_to_D1(self.i.as_array()) < self.margin_d1:
            raise D1ProximityError("fiber base point too close to D1")

    def describe(self) -> str:
        i = self.i
        return (f"s=({self.s[0]:.6f},{self.s[1]:.6f},{self.s[2]:.6f}) r={self.r:.6f} "
                f"i=({i.c12:.6f},{i.c02:.6f},{i.c01:.6f},{i.det:.6f})")


@dataclass(frozen=True)
class PairSample:
    diffs: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    weights: np.ndarray
    idx1: np.ndarray
    idx2: np.ndarray

    def __len__(self):
        return len(self.weights)

    def iota4(self) -> np.ndarray:
        return iota4_array(self.diffs, self.n1, self.n2)


def build_pair_sample(s: SurfaceSample, max_pairs: int | None = None, rng: np.random.Generator | None = None) -> PairSample:
    """All ordered pairs (including i == j), or a stratified subsample of ``max_pairs``.

    Stratification: the first index runs over all points evenly, the second is drawn at random.
    """
    n = len(s)
    if n == 0:
        raise ValueError("empty sample")
    if max_pairs is None or n * n <= max_pairs:
        i1, i2 = np.divmod(np.arange(n * n), n)
        scale = 1.0
    else:
        rng = rng or np.random.default_rng(0)
        i1 = np.repeat(np.arange(n), max(1, max_pairs // n))
        i2 = rng.integers(0, n, len(i1))
        scale = n * n / len(i1)
    w = s.weights[i1] * s.weights[i2] * scale
    return PairSample(s.points[i1] - s.points[i2], s.normals[i1], s.normals[i2], w, i1, i2)


# ---------------------------------------------------------------------------
# Oracle fiber


@dataclass(frozen=True)
class FiberCopy:
    h: np.ndarray          # rotation
    anchor: np.ndarray     # m2' in R^3
    pair: tuple            # (m1, m2, N1, N2) of the solving pair element

    def apply(self, points, normals):
        return (points - self.anchor) @ self.h.T, normals @ self.h.T


@dataclass
class FiberCloud:
    """Dense weighted sample of the fiber in R^6 with provenance for evaluation."""

    points: np.ndarray
    weights: np.ndarray
    copy_id: np.ndarray
    source: np.ndarray        # matching point of the reference lift (R^6)
    tangents: np.ndarray      # (N, 2, 6) orthonormal tangent of the sheet
    copies: list
    spacing: float

    def __len__(self):
        return len(self.weights)


@dataclass
class OracleContext:
    mesh: TriangleMesh
    shape: ShapeOperatorField
    h: float
    bounds: SurfaceBounds
    vtree: cKDTree
    ntree: cKDTree

    @classmethod
    def build(cls, mesh: TriangleMesh, shape: ShapeOperatorField | None = None) -> "OracleContext":
        shape = shape or estimate_shape_operator(mesh, strict=False)
        return cls(mesh, shape, mean_edge_length(mesh), surface_bounds(mesh, shape),
                   cKDTree(mesh.vertices), cKDTree(mesh.normals))

    def chart(self, i, uv):
        return chart_point(self.mesh, self.shape, i, uv)


def _scaled_iota4(v, R):
    v = np.array(v, dtype=float, copy=True)
    v[..., 0] = v[..., 0] / R
    return v


def _refine_normal(ctx: OracleContext, i: int, target: np.ndarray, iters: int = 4):
    for _ in range(iters):
        sol = least_squares(lambda u: ctx.chart(i, u)[1] - target, np.zeros(2), xtol=1e-14, ftol=1e-14, gtol=1e-14)
        p, n = ctx.chart(i, sol.x)
        j = int(ctx.vtree.query(p)[1])
        if j == i or np.linalg.norm(p - ctx.mesh.vertices[i]) <= ctx.h:
            return p, n, float(np.abs(sol.fun).max())
        i = j
    return p, n, math.inf


def _greedy_clusters(keys: np.ndarray, order: np.ndarray, radius: float) -> list[int]:
    """Pick representatives in ``order``; drop everything within ``radius`` of a pick."""
    tree = cKDTree(keys)
    taken = np.zeros(len(keys), dtype=bool)
    reps = []
    for k in order:
        if taken[k]:
            continue
        reps.append(int(k))
        taken[tree.query_ball_point(keys[k], radius)] = True
    return reps


def _padded_neighbors(mesh: TriangleMesh) -> np.ndarray:
    """One-ring neighbour table padded with the vertex itself."""
    f = mesh.faces
    e = np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.unique(np.vstack([e, e[:, ::-1]]), axis=0)
    n = mesh.n_vertices
    deg = np.bincount(e[:, 0], minlength=n)
    out = np.repeat(np.arange(n)[:, None], max(deg.max(), 1), axis=1)
    start = np.concatenate([[0], np.cumsum(deg)[:-1]])
    col = np.arange(len(e)) - start[e[:, 0]]
    out[e[:, 0], col] = e[:, 1]
    return out


def _local_minima(D: np.ndarray, nbr: np.ndarray) -> np.ndarray:
    """Mask of entries of the pair-indexed field ``D`` not exceeded by any neighbouring pair."""
    lo = np.full_like(D, np.inf)
    for k in range(nbr.shape[1]):
        lo = np.minimum(lo, D[nbr[:, k], :])
        lo = np.minimum(lo, D[:, nbr[:, k]])
    return D <= lo


def iota4_jacobian(ctx: OracleContext, i1, i2, uv=None, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``iota4`` (r scaled by R) in the four chart coordinates.

    Returns (N, 5, 4) for anchor arrays ``i1``, ``i2`` and offsets ``uv`` of shape (N, 4).
    """
    i1, i2 = np.asarray(i1), np.asarray(i2)
    uv = np.zeros((len(i1), 4)) if uv is None else np.asarray(uv, dtype=float)
    R = ctx.bounds.R
    cols = []
    for k in range(4):
        du = np.zeros(4)
        du[k] = step
        vals = []
        for sgn in (1.0, -1.0):
            u = uv + sgn * du
            p1, n1 = chart_points(ctx.mesh, ctx.shape, i1, u[:, :2])
            p2, n2 = chart_points(ctx.mesh, ctx.shape, i2, u[:, 2:])
            vals.append(_scaled_iota4(iota4_array(p1 - p2, n1, n2), R))
        cols.append((vals[0] - vals[1]) / (2 * step))
    return np.stack(cols, axis=-1)


def _pair_residual(ctx: OracleContext, i1, i2, u, tgt):
    p1, n1 = chart_points(ctx.mesh, ctx.shape, i1, u[:, :2])
    p2, n2 = chart_points(ctx.mesh, ctx.shape, i2, u[:, 2:])
    return _scaled_iota4(iota4_array(p1 - p2, n1, n2), ctx.bounds.R) - tgt, (p1, p2, n1, n2)


def _batch_refine(ctx: OracleContext, i1, i2, target, iters: int = 40, anchors: int = 4):
    """Damped Gauss-Newton on all seeds at once, with re-anchoring to the nearest vertices.

    Returns points, normals, max residual, final anchors and chart offsets per seed.  Seeds
    whose chart points do not settle within an edge of their anchors get residual inf.
    """
    tgt = _scaled_iota4(target, ctx.bounds.R)
    i1, i2 = np.array(i1), np.array(i2)
    m = len(i1)
    u = np.zeros((m, 4))
    res = np.full(m, np.inf)
    for _ in range(anchors):
        lam = np.full(m, 1e-3)
        f, _ = _pair_residual(ctx, i1, i2, u, tgt)
        cost = (f * f).sum(1)
        for _ in range(iters):
            J = iota4_jacobian(ctx, i1, i2, u)
            JtJ = np.einsum("nka,nkb->nab", J, J)
            g = np.einsum("nka,nk->na", J, f)
            A = JtJ + lam[:, None, None] * (np.eye(4) * (np.einsum("naa->na", JtJ)[:, :, None] + 1e-12))
            step = -np.linalg.solve(A, g[..., None])[..., 0]
            nrm = np.linalg.norm(step, axis=1, keepdims=True)
            step *= np.minimum(1.0, ctx.h / np.maximum(nrm, 1e-300))
            f_new, _ = _pair_residual(ctx, i1, i2, u + step, tgt)
            c_new = (f_new * f_new).sum(1)
            ok = c_new < cost
            u[ok] += step[ok]
            f[ok], cost[ok] = f_new[ok], c_new[ok]
            lam = np.where(ok, lam * 0.3, lam * 10.0)
            if np.all((cost < 1e-26) | (lam > 1e8)):
                break
        _, (p1, p2, n1, n2) = _pair_residual(ctx, i1, i2, u, tgt)
        j1 = ctx.vtree.query(p1)[1]
        j2 = ctx.vtree.query(p2)[1]
        V = ctx.mesh.vertices
        settled = ((j1 == i1) & (j2 == i2)) | ((np.linalg.norm(p1 - V[i1], axis=1) <= ctx.h)
                                               & (np.linalg.norm(p2 - V[i2], axis=1) <= ctx.h))
        res = np.where(settled, np.abs(f).max(1), np.inf)
        if settled.all():
            break
        move = ~settled
        i1, i2 = np.where(move, j1, i1), np.where(move, j2, i2)
        u[move] = 0.0
    return p1, p2, n1, n2, res, i1, i2, u


def solve_iota4_preimages(ctx: OracleContext, r: float, i: I3Point, tol_scale: float = 1.0,
                          solve_tol: float = 1e-8, margin_delta: float = DEFAULT_MARGIN_DELTA,
                          cond_min: float = DEFAULT_COND_MIN) -> list[tuple]:
    """All pair elements ``(m1, m2, N1, N2)`` with ``iota4 = (r, i)``.

    Seeds are discrete local minima of the mismatch over vertex pairs; each is refined on the
    local quadratic charts.  A solution where ``iota4`` is close to losing rank makes the count
    unstable under mesh noise, so the whole fiber is rejected.
    """
    mesh = ctx.mesh
    V, N = mesh.vertices, mesh.normals
    n = mesh.n_vertices
    R = ctx.bounds.R
    target = np.concatenate([[r], i.as_array()])
    vals = iota4_array(V[:, None, :] - V[None, :, :], N[:, None, :], N[None, :, :])
    D = np.linalg.norm(_scaled_iota4(vals, R) - _scaled_iota4(target, R), axis=-1)
    D[np.arange(n), np.arange(n)] = np.inf
    tol = tol_scale * ctx.h * (ctx.bounds.kappa_max + 1.0 / max(r, ctx.h))
    seeds = np.argwhere(_local_minima(D, _padded_neighbors(mesh)) & (D < tol))
    if len(seeds) == 0:
        return []
    p1, p2, n1, n2, res, j1, j2, u = _batch_refine(ctx, seeds[:, 0], seeds[:, 1], target)
    t = p1 - p2
    tn = np.linalg.norm(t, axis=1)
    ok = (res <= solve_tol) & (tn >= margin_delta)
    ok &= _delta_distance(t / np.maximum(tn, 1e-300)[:, None], n1) >= margin_delta
    # roots closer than an edge are one root seen through two slightly different charts
    sols, keep = [], []
    for k in np.nonzero(ok)[0][np.argsort(np.linalg.norm(u[ok], axis=1))]:
        if any(np.linalg.norm(p1[k] - q[0]) + np.linalg.norm(p2[k] - q[1]) < ctx.h for q in sols):
            continue
        sols.append((p1[k], p2[k], n1[k], n2[k]))
        keep.append(k)
    if keep:
        sv = np.linalg.svd(iota4_jacobian(ctx, j1[keep], j2[keep], u[keep]), compute_uv=False)
        ratio = sv[:, -1] / sv[:, 0]
        worst = float(ratio.min())
        if worst < cond_min:
            raise IllConditionedFiberError(f"iota4 is nearly singular at a fiber point (sigma ratio {worst:.2e})",
                                           float(np.mean(ratio < cond_min)))
    return sols


def gauss_preimages(ctx: OracleContext, target: np.ndarray, angle_tol: float | None = None, solve_tol: float = 1e-8):
    """Points whose normal equals ``target`` (closed-surface Gauss map preimages)."""
    angle_tol = angle_tol or 2 * ctx.h * ctx.bounds.kappa_max
    idx = ctx.ntree.query_ball_point(target, 2 * math.sin(min(angle_tol, math.pi) / 2))
    if not idx:
        return []
    idx = np.array(idx)
    ang = np.linalg.norm(ctx.mesh.normals[idx] - target, axis=1)
    reps = _greedy_clusters(ctx.mesh.vertices[idx], np.argsort(ang), 3 * ctx.h)
    out = []
    for k in reps:
        p, n, res = _refine_normal(ctx, int(idx[k]), target)
        if res > solve_tol:
            continue
        if any(np.linalg.norm(p - q) < 0.5 * ctx.h for q, _ in out):
            continue
        out.append((p, n))
    return out


def fiber_copies(ctx: OracleContext, f: FiberSpec, **kw) -> list[FiberCopy]:
    copies = []
    for p1, p2, n1, n2 in solve_iota4_preimages(ctx, f.r, f.i, **kw):
        h = tau(p1 - p2, n1, n2, margin=0.0).T
        for anchor, _ in gauss_preimages(ctx, h.T @ f.s):
            copies.append(FiberCopy(h, anchor, (p1, p2, n1, n2)))
    return copies


def _lift(ctx: OracleContext):
    return np.hstack([ctx.mesh.vertices, ctx.mesh.normals])


def dedupe_copies(ctx: OracleContext, copies: list[FiberCopy], tol: float | None = None) -> list[FiberCopy]:
    """Merge copies whose vertex lifts coincide (symmetric solutions of the same sheet)."""
    tol = tol if tol is not None else 0.25 * ctx.h
    out, clouds = [], []
    for c in copies:
        x, nrm = c.apply(ctx.mesh.vertices, ctx.mesh.normals)
        cloud = np.hstack([x, nrm])
        if any(np.median(cKDTree(o).query(cloud)[0]) < tol for o in clouds):
            continue
        out.append(c)
        clouds.append(cloud)
    return out


def _subdivision_bary(n: int) -> np.ndarray:
    """Barycentric centroids of the n^2 sub-triangles of a uniformly split triangle."""
    pts = []
    for i in range(n):
        for j in range(n - i):
            pts.append(((i + 1 / 3) / n, (j + 1 / 3) / n))
            if i + j < n - 1:
                pts.append(((i + 2 / 3) / n, (j + 2 / 3) / n))
    uv = np.array(pts)
    return np.column_stack([1 - uv.sum(1), uv[:, 0], uv[:, 1]])


def dense_lift(mesh: TriangleMesh, spacing: float):
    """Sub-triangle centroids of the lift with lifted-area weights and sheet tangents."""
    lift = np.hstack([mesh.vertices, mesh.normals])
    f = mesh.faces
    L = np.max([np.linalg.norm(lift[f[:, a]] - lift[f[:, b]], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))], axis=0)
    nsub = np.maximum(1, np.ceil(L / spacing)).astype(int)
    area = lifted_face_areas(mesh.vertices, mesh.normals, f)
    pts, wts, tans, fid = [], [], [], []
    e1 = lift[f[:, 1]] - lift[f[:, 0]]
    e2 = lift[f[:, 2]] - lift[f[:, 0]]
    q1 = e1 / np.linalg.norm(e1, axis=1)[:, None]
    q2 = e2 - (e2 * q1).sum(1)[:, None] * q1
    q2 /= np.linalg.norm(q2, axis=1)[:, None]
    for k in np.unique(nsub):
        sel = np.nonzero(nsub == k)[0]
        bary = _subdivision_bary(int(k))
        corners = lift[f[sel]]  # (F, 3, 6)
        p = np.einsum("qk,fkd->fqd", bary, corners)
        nn = p[..., 3:]
        p[..., 3:] = nn / np.linalg.norm(nn, axis=-1, keepdims=True)
        pts.append(p.reshape(-1, 6))
        wts.append(np.repeat(area[sel] / (k * k), len(bary)))
        tans.append(np.repeat(np.stack([q1[sel], q2[sel]], axis=1), len(bary), axis=0))
        fid.append(np.repeat(sel, len(bary)))
    return np.vstack(pts), np.concatenate(wts), np.vstack(tans), np.concatenate(fid)


def eps_policy(bounds: SurfaceBounds, grid: float) -> float:
    return min(0.1 / bounds.kappa_max, grid / 3.0)


def rho_star(eps: float, k: int = BUMP_POWER) -> float:
    """Distance at which a transverse second sheet lifts the ball integral to 1.5x reference."""
    return eps * math.sqrt(1 - 0.5 ** (1.0 / (k + 1)))


def oracle_fiber(mesh: TriangleMesh, f: FiberSpec, eps: float, ctx: OracleContext | None = None,
                 spacing: float | None = None, require_distinct: int = 1) -> FiberCloud:
    """Brute-force geometric fiber: every rigid copy of the lift lying over ``f``."""
    ctx = ctx or OracleContext.build(mesh)
    if f.r > 2 * ctx.bounds.R:
        raise EmptyFiberError(f"r = {f.r} exceeds the diameter bound {2 * ctx.bounds.R}")
    copies = dedupe_copies(ctx, fiber_copies(ctx, f))
    if len(copies) < require_distinct:
        raise EmptyFiberError(f"fiber has {len(copies)} distinct copies (< {require_distinct})")
    spacing = spacing or eps / 3.0
    base, w, tan, _ = dense_lift(mesh, spacing)
    pts, wts, cid, src, tns = [], [], [], [], []
    for k, c in enumerate(copies):
        x, nrm = c.apply(base[:, :3], base[:, 3:])
        pts.append(np.hstack([x, nrm]))
        wts.append(w)
        cid.append(np.full(len(w), k))
        src.append(base)
        rot = np.zeros((6, 6))
        rot[:3, :3] = c.h
        rot[3:, 3:] = c.h
        tns.append(tan @ rot.T)
    return FiberCloud(np.vstack(pts), np.concatenate(wts), np.concatenate(cid), np.vstack(src), np.vstack(tns),
                      copies, spacing)


# ---------------------------------------------------------------------------
# Ball classification


EMPTY, SINGLE, DOUBLE = 0, 1, 2
LABEL_NAMES = {EMPTY: "empty", SINGLE: "single", DOUBLE: "double+"}


@dataclass
class BallClassification:
    centers: np.ndarray
    eps: float
    integrals: np.ndarray
    reference: float
    labels: np.ndarray
    warnings: list = field(default_factory=list)

    def counts(self) -> dict:
        return {LABEL_NAMES[k]: int((self.labels == k).sum()) for k in LABEL_NAMES}


def single_sheet_reference(eps: float, k: int = BUMP_POWER) -> float:
    """Integral of ``(1 - rho^2/eps^2)^k`` over a flat 2-disc of radius eps."""
    return math.pi * eps * eps / (k + 1)


def label_integrals(values, reference, lo: float = 0.5, hi: float = 1.5) -> np.ndarray:
    ratio = np.asarray(values) / reference
    return np.where(ratio < lo, EMPTY, np.where(ratio < hi, SINGLE, DOUBLE))


def cloud_ball_integrals(points, weights, centers, eps: float, k: int = BUMP_POWER, chunk: int = 20000,
                         tree: cKDTree | None = None) -> np.ndarray:
    tree = tree or cKDTree(points)
    centers = np.atleast_2d(centers)
    out = np.zeros(len(centers))
    todo, nk = np.arange(len(centers)), 64
    # k-nearest queries capped at eps; rows that fill all k slots are redone with twice the k
    while len(todo):
        nk = min(nk, len(points))
        full = []
        for s in range(0, len(todo), chunk):
            rows = todo[s:s + chunk]
            d, j = tree.query(centers[rows], k=nk, distance_upper_bound=eps, workers=-1)
            d, j = d.reshape(len(rows), -1), j.reshape(len(rows), -1)
            hit = np.isfinite(d)
            val = np.zeros_like(d)
            val[hit] = weights[j[hit]] * (1.0 - (d[hit] / eps) ** 2) ** k
            out[rows] = val.sum(1)
            if nk < len(points):
                full.append(rows[hit[:, -1]])
        todo = np.concatenate(full) if full else np.zeros(0, dtype=int)
        nk *= 2
    return out


def subsample_centers(points, spacing: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices of a greedy Poisson-disc-like subsample with minimum spacing (deterministic order)."""
    order = np.arange(len(points)) if rng is None else rng.permutation(len(points))
    grid = np.floor(points / spacing).astype(np.int64)
    _, first = np.unique(grid[order], axis=0, return_index=True)
    return np.sort(order[first])


def estimate_ball_integrals(source, f: FiberSpec | None, grid, eps: float, k: int = BUMP_POWER,
                            **kw) -> BallClassification:
    """Integrals of a ball bump against the fiber, labelled at 0.5x / 1.5x the one-sheet reference.

    ``source`` is a :class:`FiberCloud` (oracle path) or an :class:`InvariantDescriptor`
    (approximate descriptor path, see :func:`descriptor_ball_integrals`).  ``grid`` holds the
    ball centres in R^6.
    """
    centers = np.atleast_2d(np.asarray(grid, dtype=float))
    ref = single_sheet_reference(eps, k)
    if isinstance(source, FiberCloud):
        vals = cloud_ball_integrals(source.points, source.weights, centers, eps, k)
        return BallClassification(centers, eps, vals, ref, label_integrals(vals, ref))
    if f is None:
        raise ValueError("descriptor path needs a fiber spec")
    vals, ref_d, warn = descriptor_ball_integrals(source, f, centers, eps, k=k, **kw)
    return BallClassification(centers, eps, vals, ref_d, label_integrals(vals, ref_d), warn)


def true_double(cloud: FiberCloud, centers_idx: np.ndarray, eps: float, k: int = BUMP_POWER) -> np.ndarray:
    """Oracle: centre lies within ``rho_star`` of a different copy (distance to its sheet)."""
    rs = rho_star(eps, k)
    out = np.zeros(len(centers_idx), dtype=bool)
    c = cloud.points[centers_idx]
    own = cloud.copy_id[centers_idx]
    for kk in np.unique(cloud.copy_id):
        sel = np.nonzero(cloud.copy_id == kk)[0]
        tree = cKDTree(cloud.points[sel])
        q = np.nonzero(own != kk)[0]
        if len(q) == 0:
            continue
        d, j = tree.query(c[q], distance_upper_bound=2 * eps)
        ok = np.isfinite(d)
        jj = sel[j[ok]]
        diff = c[q[ok]] - cloud.points[jj]
        t = cloud.tangents[jj]
        proj = np.einsum("nad,nd->na", t, diff)
        dist = np.sqrt(np.maximum((diff * diff).sum(1) - (proj * proj).sum(1), 0.0))
        out[q[ok]] |= dist < rs
    return out


# ---------------------------------------------------------------------------
# Reconstruction


@dataclass
class Candidate:
    points: np.ndarray          # single centres of the component plus re-attached double+ centres
    source: np.ndarray | None
    rotation: np.ndarray | None
    translation: np.ndarray | None
    residual: float


@dataclass
class FiberResult:
    spec: FiberSpec
    n_copies: int
    classification: BallClassification
    candidates: list
    stats: dict


@dataclass
class FiberReconstruction:
    fibers: list
    eps: float
    seed: int | None = None

    def best(self) -> Candidate | None:
        cands = [c for fr in self.fibers for c in fr.candidates]
        return min(cands, key=lambda c: c.residual) if cands else None


def procrustes(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R (det +1) and translation t minimising ``|R src + t - dst|``."""
    cs, cd = src.mean(0), dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def fit_lift_motion(src6, dst6) -> tuple[np.ndarray, np.ndarray, float]:
    """Rigid motion of R^3 acting on lifts; normals enter as directions anchored at the points."""
    src = np.vstack([src6[:, :3], src6[:, :3] + src6[:, 3:]])
    dst = np.vstack([dst6[:, :3], dst6[:, :3] + dst6[:, 3:]])
    R, t = procrustes(src, dst)
    moved = np.hstack([src6[:, :3] @ R.T + t, src6[:, 3:] @ R.T])
    return R, t, float(np.sqrt(((moved - dst6) ** 2).sum(1).mean()))


def hausdorff(a, b, bound: float = np.inf) -> float:
    """Symmetric Hausdorff distance; anything beyond ``bound`` is reported as inf (fast reject)."""
    da = cKDTree(b).query(a, distance_upper_bound=bound)[0].max() if len(a) else 0.0
    db = cKDTree(a).query(b, distance_upper_bound=bound)[0].max() if len(b) else 0.0
    return float(max(da, db))


def extract_components(centers, labels, eps: float, k: int = BUMP_POWER, min_fraction: float = 0.02,
                       link: float | None = None) -> list[np.ndarray]:
    """Connected components of single-labelled centres linked closer than ``rho_star``."""
    single = np.nonzero(labels == SINGLE)[0]
    if len(single) == 0:
        return []
    link = link or 0.95 * rho_star(eps, k)
    pairs = cKDTree(centers[single]).query_pairs(link, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(single),) * 2)
    ncomp, lab = connected_components(g, directed=False)
    sizes = np.bincount(lab, minlength=ncomp)
    keep = np.nonzero(sizes >= min_fraction * sizes.max())[0]
    return [single[lab == c] for c in keep[np.argsort(-sizes[keep])]]


def fill_holes(centers, labels, comp: np.ndarray, eps: float, k: int = BUMP_POWER, fit_radius: float | None = None,
               plane_tol: float | None = None, max_rounds: int = 50, tree: cKDTree | None = None) -> np.ndarray:
    """Grow a component into adjacent double+ centres that continue its local tangent plane.

    Removing double+ balls cuts a hole around every crossing whose radius grows like
    ``rho_star / sin(angle)``; re-attaching the double+ centres that lie on this sheet closes it.
    """
    rs = rho_star(eps, k)
    fit_radius = fit_radius or 3 * rs
    plane_tol = plane_tol or 0.25 * rs
    link = 0.95 * rs
    dbl = np.nonzero(labels == DOUBLE)[0]
    if len(dbl) == 0:
        return comp
    tree = tree or cKDTree(centers)
    member = np.zeros(len(centers), dtype=bool)
    member[comp] = True
    is_dbl = np.zeros(len(centers), dtype=bool)
    is_dbl[dbl] = True
    # only double+ centres near the component can ever join; restrict the frontier search to them
    frontier = dbl[cKDTree(centers[comp]).query(centers[dbl], distance_upper_bound=link)[0] < link]
    for _ in range(max_rounds):
        added = []
        for c in frontier:
            nb = np.asarray(tree.query_ball_point(centers[c], fit_radius), dtype=int)
            nb = nb[member[nb]]
            if len(nb) < 6:
                continue
            P = centers[nb]
            mu = P.mean(0)
            _, _, Vt = np.linalg.svd(P - mu, full_matrices=False)
            off = centers[c] - mu
            if np.linalg.norm(off - Vt[:2].T @ (Vt[:2] @ off)) < plane_tol:
                added.append(c)
        if not added:
            break
        member[added] = True
        nxt = np.unique(np.concatenate([np.asarray(x, dtype=int) for x in tree.query_ball_point(centers[added], link)]))
        frontier = nxt[is_dbl[nxt] & ~member[nxt]]
        if len(frontier) == 0:
            break
    return np.nonzero(member)[0]


def reconstruct_fiber(cloud: FiberCloud, f: FiberSpec, eps: float, k: int = BUMP_POWER,
                      center_spacing: float | None = None, fill: bool = True) -> FiberResult:
    centers_idx = subsample_centers(cloud.points, center_spacing or 0.45 * rho_star(eps, k))
    centers = cloud.points[centers_idx]
    cls = estimate_ball_integrals(cloud, f, centers, eps, k)
    comps = extract_components(centers, cls.labels, eps, k)
    tree = cKDTree(centers) if fill and comps else None
    cands = []
    for comp in comps:
        # the motion is fitted on single balls only; double+ balls re-attached afterwards
        src = cloud.source[centers_idx[comp]]
        R, t, res = fit_lift_motion(src, centers[comp])
        pts = centers[fill_holes(centers, cls.labels, comp, eps, k, tree=tree)] if fill else centers[comp]
        cands.append(Candidate(pts, src, R, t, res))
    stats = {"centers": len(centers), **cls.counts(), "components": len(comps)}
    res = FiberResult(f, len(cloud.copies), cls, cands, stats)
    res.centers_idx = centers_idx
    return res


@dataclass(frozen=True)
class OracleEvaluation:
    precision: float
    recall: float
    n_true_double: int
    n_pred_double: int
    hausdorff: list          # per candidate, symmetric, against the copy it matches
    matched_copies: list     # per candidate, copies within eps (one-sided candidate -> copy)
    monotone: bool

    @property
    def best_hausdorff(self) -> float:
        return min(self.hausdorff) if self.hausdorff else math.inf


def evaluate_oracle(fr: FiberResult, eps: float, k: int = BUMP_POWER, grow: float = 1.25,
                    monotone_samples: int = 20000) -> OracleEvaluation:
    """Compare a reconstruction against the oracle ground truth carried by its cloud."""
    cloud = fr.cloud
    idx = fr.centers_idx
    truth = true_double(cloud, idx, eps, k)
    pred = fr.classification.labels == DOUBLE
    tp = int((truth & pred).sum())
    prec = tp / pred.sum() if pred.any() else 1.0
    rec = tp / truth.sum() if truth.any() else 1.0
    trees = {c: cKDTree(cloud.points[cloud.copy_id == c]) for c in np.unique(cloud.copy_id)}
    haus, matched = [], []
    for cand in fr.candidates:
        one_sided = {c: float(t.query(cand.points, distance_upper_bound=2 * eps)[0].max()) for c, t in trees.items()}
        near = [c for c, v in one_sided.items() if v <= eps]
        matched.append(near)
        best = min(one_sided, key=one_sided.get)
        haus.append(hausdorff(cand.points, cloud.points[cloud.copy_id == best], bound=10 * eps))
    sub = np.arange(0, len(idx), max(1, len(idx) // monotone_samples))
    wide = cloud_ball_integrals(cloud.points, cloud.weights, cloud.points[idx[sub]], grow * eps, k)
    wide_labels = label_integrals(wide, single_sheet_reference(grow * eps, k))
    monotone = not np.any((fr.classification.labels[sub] == SINGLE) & (wide_labels == EMPTY))
    return OracleEvaluation(float(prec), float(rec), int(truth.sum()), int(pred.sum()), haus, matched, bool(monotone))


def screen_rank(ctx: "OracleContext", rng: np.random.Generator, n: int = 256,
                floor: float = 1e-6, max_bad: float = 0.5) -> float:
    """Fraction of random vertex pairs where ``d iota4`` is numerically rank deficient; raise when most are.

    The floor is far below the per-root conditioning test: it only separates a continuous
    stabiliser (ratios at round-off level) from ordinary folds.
    """
    nv = ctx.mesh.n_vertices
    i1, i2 = rng.integers(nv, size=n), rng.integers(nv, size=n)
    keep = np.linalg.norm(ctx.mesh.vertices[i1] - ctx.mesh.vertices[i2], axis=1) > ctx.h
    s = np.linalg.svd(iota4_jacobian(ctx, i1[keep], i2[keep]), compute_uv=False)
    bad = float(np.mean(s[:, -1] < floor * s[:, 0]))
    if bad > max_bad:
        raise RankDeficientSurfaceError(
            f"d iota4 is ill-conditioned on {bad:.0%} of sampled pairs; fibers are not finite unions of copies")
    return bad


def select_fiber(mesh: TriangleMesh, rng: np.random.Generator, margin_d1: float = DEFAULT_MARGIN_D1,
                 margin_delta: float = DEFAULT_MARGIN_DELTA, max_tries: int = 1000) -> FiberSpec:
    """Random fiber over an actual vertex pair (hence non-empty) away from D1 and Delta."""
    n = mesh.n_vertices
    for _ in range(max_tries):
        a, b = rng.integers(0, n, 2)
        if a == b:
            continue
        t = mesh.vertices[a] - mesh.vertices[b]
        r = float(np.linalg.norm(t))
        if r < margin_delta or _delta_distance(t / r, mesh.normals[a]) < margin_delta:
            continue
        i = iota3_array(t / r, mesh.normals[a], mesh.normals[b])
        if distance_to_D1(i) < margin_d1:
            continue
        s = rng.normal(size=3)
        return FiberSpec(s / np.linalg.norm(s), r, I3Point.from_array(i), margin_d1)
    raise AllFibersDegenerateError("no admissible fiber found")


def reconstruct(mesh: TriangleMesh, bounds: SurfaceBounds | None = None, n_fibers: int = 1, seed: int = 0,
                eps: float | None = None, margin_d1: float = DEFAULT_MARGIN_D1,
                margin_delta: float = DEFAULT_MARGIN_DELTA, min_copies: int = 2, max_tries: int = 25,
                spacing: float | None = None, max_ill: int = 8) -> FiberReconstruction:
    """Oracle-path reconstruction on ``n_fibers`` randomly selected admissible fibers."""
    rng = np.random.default_rng(seed)
    ctx = OracleContext.build(mesh)
    bounds = bounds or ctx.bounds
    ctx.bounds = bounds
    eps = eps or eps_policy(bounds, mean_edge_length(mesh))
    screen_rank(ctx, np.random.default_rng([seed, 1]))
    out = []
    tries = ill = 0
    while len(out) < n_fibers:
        tries += 1
        if tries > max_tries * n_fibers:
            raise AllFibersDegenerateError(f"no fiber with >= {min_copies} distinct copies after {tries - 1} tries")
        f = select_fiber(mesh, rng, margin_d1, margin_delta)
        try:
            cloud = oracle_fiber(mesh, f, eps, ctx=ctx, spacing=spacing, require_distinct=min_copies)
        except IllConditionedFiberError as exc:
            # a surface with a continuous stabiliser makes every root singular, not just a few
            ill = ill + 1 if exc.ill_fraction >= 0.9 else 0
            if not out and ill >= max_ill:
                raise RankDeficientSurfaceError(f"first {ill} fibers all had ill-conditioned roots") from None
            continue
        except EmptyFiberError:
            ill = 0
            continue
        ill = 0
        fr = reconstruct_fiber(cloud, f, eps)
        fr.cloud = cloud
        out.append(fr)
    return FiberReconstruction(out, eps, seed)


# ---------------------------------------------------------------------------
# Descriptor path (approximate)


def pair_feature_tensor(d: int, dp: int, t, n1, n2) -> np.ndarray:
    """Translational-tensor contribution of unit point masses at pair elements, (N, E, H, H)."""
    from .moments import _factorials
    from .sphharm import monomial_to_solid_matrix, monomial_values, real_sh

    t = np.atleast_2d(t)
    coef = monomial_values(d, t) / _factorials(d)[None, :]
    solid = coef @ monomial_to_solid_matrix(d)
    y1, y2 = real_sh(dp, np.atleast_2d(n1)), real_sh(dp, np.atleast_2d(n2))
    return np.einsum("ne,nh,nl->nehl", solid, y1, y2)


def invariant_kernels(d: int, dp: int, m1, m2) -> np.ndarray:
    """Symmetrised kernels ``Phi_k(m1bar, m2bar)`` with ``F_k = sum Phi_k`` over pairs of pair elements.

    ``m1``, ``m2`` are tuples ``(t, n1, n2)`` of arrays; output is (N, n_entries) in descriptor order.
    """
    from .invariants import channels_by_J, coupling_tensor, normalization_table, _block_slices

    T1 = pair_feature_tensor(d, dp, *m1)
    T2 = pair_feature_tensor(d, dp, *m2)
    spat, harm = _block_slices(d, dp)
    norm = normalization_table(d, dp)
    cols = []
    for J, chs in sorted(channels_by_J(d, dp).items()):
        Z1 = np.empty((len(T1), len(chs), 2 * J + 1))
        Z2 = np.empty_like(Z1)
        for a, ch in enumerate(chs):
            P = coupling_tensor(ch)
            sl = (slice(None), spat[(ch.a, ch.b)], harm[ch.n], harm[ch.n2])
            Z1[:, a] = np.einsum("Mcab,ncab->nM", P, T1[sl])
            Z2[:, a] = np.einsum("Mcab,ncab->nM", P, T2[sl])
        G = 0.5 * (np.einsum("naM,nbM->nab", Z1, Z2) + np.einsum("naM,nbM->nab", Z2, Z1)) * norm[J]
        iu = np.triu_indices(len(chs))
        cols.append(G[:, iu[0], iu[1]])
    return np.concatenate(cols, axis=1)


def descriptor_ball_integrals(desc, f: FiberSpec, centers, eps: float, k: int = BUMP_POWER,
                              bounds: SurfaceBounds | None = None, n_fit: int = 4000, fit_tol: float = 0.1,
                              rng: np.random.Generator | None = None):
    """Approximate ball integrals from invariants alone.

    The bump in fiber coordinates (a ball in R^6 times a slab of width eps around f) is fitted by
    least squares onto the invariant kernels; the estimate is ``sum c_k F_k``.  At desk-scale caps
    the fit is poor, which is reported as an insufficient-caps warning.
    """
    rng = rng or np.random.default_rng(0)
    R = bounds.R if bounds else 1.0
    base = np.concatenate([[f.r], f.i.as_array()])
    p0, p1, p2 = psi(np.eye(3), f.r, f.i)
    vals, warn = [], []
    ref = single_sheet_reference(eps, k)
    for c in np.atleast_2d(centers):
        # training points: half concentrated near the ball, half spread over the support
        m = n_fit // 2
        near_t = c[:3] + rng.normal(scale=eps, size=(m, 3))
        near_n = c[3:] + rng.normal(scale=eps, size=(m, 3))
        far_t = rng.uniform(-2 * R, 2 * R, size=(n_fit - m, 3))
        far_n = rng.normal(size=(n_fit - m, 3))
        t = np.vstack([near_t, far_t])
        nn = np.vstack([near_n, far_n])
        nn /= np.linalg.norm(nn, axis=1)[:, None]
        s_pert = f.s + rng.normal(scale=0.5 * eps, size=(n_fit, 3))
        s_pert /= np.linalg.norm(s_pert, axis=1)[:, None]
        y = np.hstack([t, nn])
        rho2 = ((y - c) ** 2).sum(1) / eps ** 2 + ((s_pert - f.s) ** 2).sum(1) / eps ** 2
        target = np.where(rho2 < 1, (1 - np.minimum(rho2, 1)) ** k, 0.0)
        m1 = (np.tile(p0, (n_fit, 1)), np.tile(p1, (n_fit, 1)), np.tile(p2, (n_fit, 1)))
        m2 = (t, nn, s_pert)
        K = invariant_kernels(desc.d, desc.dp, m1, m2)
        coef, *_ = np.linalg.lstsq(K, target, rcond=None)
        rel = float(np.linalg.norm(K @ coef - target) / max(np.linalg.norm(target), 1e-300))
        if rel > fit_tol:
            warn.append(f"insufficient caps (d={desc.d}, d'={desc.dp}): bump fit residual {rel:.2f}")
        vals.append(float(coef @ desc.values))
    if warn:
        warnings.warn(warn[0])
    return np.array(vals), ref, sorted(set(warn))
