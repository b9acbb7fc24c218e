"""Numerical audit of the genericity properties star and star-star on meshes.

Conventions
-----------
* Rank tests compare singular values against ``rank_tol * kappa_scale`` where ``kappa_scale``
  is the curvature bound of the mesh.  Raising ``rank_tol`` makes more witnesses count as rank
  deficient, so a verdict can only move from pass towards fail as it grows.
* X2 always contains the diagonal ``{0} x M`` where the second star requirement degenerates
  trivially.  A candidate pair whose separation is explained by the local Gauss map
  (``|m - m'| <= angle_tol / sigma_min(S) + 2h``) is attributed to the diagonal.  In the same way X4 always contains ``{id} x M2x2`` and, for a surface
  with a finite symmetry group, ``{g} x M2x2`` for every symmetry ``g``; such witnesses are
  excluded from the second star-star requirement.
* Bad fractions are area fractions of the first surface point of a witness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .fiber import (
    DEFAULT_MARGIN_D1,
    DEFAULT_MARGIN_DELTA,
    OracleContext,
    _batch_refine,
    _delta_distance,
    _padded_neighbors,
    _scaled_iota4,
    distance_to_D1,
    iota3_array,
    iota4_array,
    iota4_jacobian,
    tau_array,
)
from .surface import TriangleMesh, chart_points, tangent_frames

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
SYMMETRY_TOL = 0.05     # median point-to-plane residual, in edge lengths


@dataclass(frozen=True)
class Tolerances:
    rank_tol: float = 1e-3
    angle_tol: float | None = None     # X2 normal matching; default: largest normal turn across an edge
    bad_fraction: float = 0.01
    margin_d1: float = DEFAULT_MARGIN_D1
    margin_delta: float = DEFAULT_MARGIN_DELTA
    pair_budget: int = 20000           # pairs for the rank-4 test
    witness_budget: int = 200000       # pairs indexed when searching X4 witnesses
    max_witnesses: int = 20000
    seed: int = 0


# ---------------------------------------------------------------------------
# star


@dataclass(frozen=True)
class StarWitness:
    i: int
    j: int
    normal: tuple
    sv_m: tuple
    sv_mp: tuple
    sv_diff: tuple | None      # None on the diagonal
    diagonal: bool


@dataclass
class StarReport:
    witnesses: list
    weights: np.ndarray        # vertex areas
    kappa_scale: float
    tolerances: Tolerances
    valid_fraction: float
    projection_rank: dict = field(default_factory=dict)   # off-diagonal family -> median local rank of g
    verdict: str = INCONCLUSIVE
    bad_fraction: float = float("nan")
    bad_fraction_req1: float = float("nan")
    bad_fraction_req2: float = float("nan")

    def threshold(self, rank_tol: float | None = None) -> float:
        return (self.tolerances.rank_tol if rank_tol is None else rank_tol) * self.kappa_scale

    def evaluate(self, rank_tol: float | None = None) -> "StarReport":
        """Recompute fractions and verdict from the stored singular values."""
        thr = self.threshold(rank_tol)
        n = len(self.weights)
        bad1 = np.zeros(n, dtype=bool)
        bad2 = np.zeros(n, dtype=bool)
        for w in self.witnesses:
            if min(w.sv_m) <= thr or min(w.sv_mp) <= thr:
                bad1[w.i] = True
            if w.sv_diff is not None and min(w.sv_diff) <= thr:
                bad2[w.i] = bad2[w.j] = True
        total = self.weights.sum()
        f1 = float(self.weights[bad1].sum() / total)
        f2 = float(self.weights[bad2].sum() / total)
        f = float(self.weights[bad1 | bad2].sum() / total)
        tol = self.tolerances if rank_tol is None else replace(self.tolerances, rank_tol=rank_tol)
        if self.valid_fraction < 0.5:
            verdict = INCONCLUSIVE
        else:
            verdict = FAIL if f > self.tolerances.bad_fraction else PASS
        return replace(self, tolerances=tol, verdict=verdict, bad_fraction=f, bad_fraction_req1=f1, bad_fraction_req2=f2)

    def failed_requirements(self) -> list[int]:
        out = []
        if self.bad_fraction_req1 > self.tolerances.bad_fraction:
            out.append(1)
        if self.bad_fraction_req2 > self.tolerances.bad_fraction:
            out.append(2)
        return out


def default_angle_tol(mesh: TriangleMesh) -> float:
    f = mesh.faces
    e = np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    c = np.clip((mesh.normals[e[:, 0]] * mesh.normals[e[:, 1]]).sum(1), -1, 1)
    return max(float(np.arccos(c).max()), 1e-6)


def find_x2_candidates(mesh: TriangleMesh, angle_tol: float | None = None) -> np.ndarray:
    """Vertex pairs ``(i, j)``, ``i <= j``, whose normals agree within ``angle_tol`` (diagonal included)."""
    angle_tol = angle_tol if angle_tol is not None else default_angle_tol(mesh)
    chord = 2 * math.sin(min(angle_tol, math.pi) / 2)
    pairs = cKDTree(mesh.normals).query_pairs(chord, output_type="ndarray")
    diag = np.repeat(np.arange(mesh.n_vertices)[:, None], 2, axis=1)
    out = np.vstack([diag, np.sort(pairs, axis=1)]) if len(pairs) else diag
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def pair_families(mesh: TriangleMesh, pairs: np.ndarray) -> np.ndarray:
    """Connected-component labels of candidate pairs under the product vertex graph."""
    n = mesh.n_vertices
    if len(pairs) == 0:
        return np.zeros(0, dtype=int)
    key = pairs[:, 0] * n + pairs[:, 1]
    order = np.argsort(key)
    skey = key[order]
    nbr = _padded_neighbors(mesh)
    rows, cols = [], []
    for a in range(nbr.shape[1]):
        for b in range(nbr.shape[1]):
            i2 = nbr[pairs[:, 0], a]
            j2 = nbr[pairs[:, 1], b]
            k2 = np.minimum(i2, j2) * n + np.maximum(i2, j2)
            pos = np.clip(np.searchsorted(skey, k2), 0, len(skey) - 1)
            hit = skey[pos] == k2
            rows.append(np.nonzero(hit)[0])
            cols.append(order[pos[hit]])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(pairs),) * 2)
    return connected_components(g, directed=False)[1]


def diagonal_explained(mesh: TriangleMesh, shape, pairs: np.ndarray, angle_tol: float, h: float) -> np.ndarray:
    """Pairs close enough that matching normals follow from the Gauss map being a local diffeo."""
    sv = np.full(mesh.n_vertices, 0.0)
    ok = shape.valid
    sv[ok] = np.linalg.svd(shape.S[ok], compute_uv=False)[:, -1]
    smin = np.minimum(sv[pairs[:, 0]], sv[pairs[:, 1]])
    radius = angle_tol / np.maximum(smin, 1e-12) + 2 * h
    d = np.linalg.norm(mesh.vertices[pairs[:, 0]] - mesh.vertices[pairs[:, 1]], axis=1)
    return (pairs[:, 0] == pairs[:, 1]) | (d <= radius)


def _align(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` to ``b``."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1 + 1e-12:
        raise ValueError("antipodal normals cannot be aligned")
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1 + c)


def _sv2(M) -> np.ndarray:
    return np.linalg.svd(M, compute_uv=False)


def _projection_rank(mesh, pairs, labels, rel: float = 0.1) -> dict:
    """Median local rank of the translation ``g = m - m'`` along each off-diagonal family."""
    out = {}
    V = mesh.vertices
    nbr = _padded_neighbors(mesh)
    for lab in np.unique(labels):
        sel = np.nonzero(labels == lab)[0]
        if len(sel) < 4:
            continue
        P = pairs[sel]
        g = V[P[:, 0]] - V[P[:, 1]]
        index = {(int(a), int(b)): k for k, (a, b) in enumerate(P)}
        ranks = []
        for k, (a, b) in enumerate(P):
            near = [index[(min(x, y), max(x, y))] for x in nbr[a] for y in nbr[b]
                    if (min(x, y), max(x, y)) in index]
            if len(near) < 3:
                continue
            d = g[near] - g[k]
            x = V[P[near, 0]] - V[a]
            if np.linalg.norm(x) == 0:
                continue
            s = _sv2(d)
            ranks.append(int((s > rel * np.linalg.norm(x, axis=1).max()).sum()))
        if ranks:
            out[int(lab)] = int(np.median(ranks))
    return out


def check_star(mesh: TriangleMesh, tolerances: Tolerances | None = None, ctx: OracleContext | None = None) -> StarReport:
    """Requirement 1: both shape operators of full rank.  Requirement 2: on off-diagonal X2
    pairs the difference of the two Gauss-map differentials (in the frame at m) is of full rank."""
    tol = tolerances or Tolerances()
    ctx = ctx or OracleContext.build(mesh)
    shape = ctx.shape
    angle_tol = tol.angle_tol if tol.angle_tol is not None else default_angle_tol(mesh)
    pairs = find_x2_candidates(mesh, angle_tol)
    diag = diagonal_explained(mesh, shape, pairs, angle_tol, ctx.h)
    off = pairs[~diag]
    labels = pair_families(mesh, off)
    Samb = shape.ambient()
    sv = np.full((mesh.n_vertices, 2), np.nan)
    sv[shape.valid] = np.stack([_sv2(S) for S in shape.S[shape.valid]])
    witnesses = []
    for (i, j), is_diag in zip(pairs, diag):
        if not (shape.valid[i] and shape.valid[j]):
            continue
        sd = None
        if not is_diag:
            # keep only genuine X2 pairs: j's chart must reach the normal of i within about h
            dn = shape.frames[j] @ (mesh.normals[i] - mesh.normals[j])
            try:
                uv = np.linalg.solve(shape.S[j], dn)
            except np.linalg.LinAlgError:
                uv = np.zeros(2)
            if np.linalg.norm(uv) > ctx.h:
                continue
            E = shape.frames[i]
            Rj = _align(mesh.normals[j], mesh.normals[i])
            D = shape.S[i] - E @ (Rj @ Samb[j] @ Rj.T) @ E.T
            sd = tuple(float(x) for x in _sv2(D))
        witnesses.append(StarWitness(int(i), int(j), tuple(mesh.normals[i].tolist()),
                                     tuple(sv[i].tolist()), tuple(sv[j].tolist()), sd, bool(is_diag)))
    rep = StarReport(witnesses, mesh.vertex_areas(), ctx.bounds.kappa_max, tol, float(shape.valid.mean()),
                     _projection_rank(mesh, off, labels))
    return rep.evaluate()


# ---------------------------------------------------------------------------
# star-star


@dataclass(frozen=True)
class X4Witness:
    pair: tuple            # (i1, i2) first pair element (vertex indices)
    partner: tuple         # (j1, j2) with pair = g * partner
    g: np.ndarray
    sv_slot1: tuple
    sv_slot2: tuple


@dataclass
class StarStarReport:
    iota_sv: np.ndarray        # (P, 4) singular values of d iota4 on sampled pairs
    iota_weights: np.ndarray
    iota_pairs: np.ndarray
    witnesses: list            # non-trivial X4 witnesses
    n_trivial: int
    kappa_scale: float
    tolerances: Tolerances
    verdict: str = INCONCLUSIVE
    bad_fraction: float = float("nan")
    bad_fraction_req1: float = float("nan")
    bad_fraction_req2: float = float("nan")
    notes: list = field(default_factory=list)

    def threshold(self, rank_tol: float | None = None) -> float:
        return (self.tolerances.rank_tol if rank_tol is None else rank_tol) * self.kappa_scale

    def evaluate(self, rank_tol: float | None = None) -> "StarStarReport":
        thr = self.threshold(rank_tol)
        w = self.iota_weights
        bad1 = self.iota_sv[:, -1] <= thr
        f1 = float(w[bad1].sum() / w.sum()) if len(w) else float("nan")
        if self.witnesses:
            bad2 = np.array([min(x.sv_slot1) <= thr or min(x.sv_slot2) <= thr for x in self.witnesses])
            f2 = float(bad2.mean())
        else:
            f2 = 0.0
        tol = self.tolerances if rank_tol is None else replace(self.tolerances, rank_tol=rank_tol)
        if not len(w):
            verdict, f = INCONCLUSIVE, float("nan")
        else:
            f = max(f1, f2)
            verdict = FAIL if f > self.tolerances.bad_fraction else PASS
        return replace(self, tolerances=tol, verdict=verdict, bad_fraction=f, bad_fraction_req1=f1, bad_fraction_req2=f2)

    def failed_requirements(self) -> list[int]:
        out = []
        if self.bad_fraction_req1 > self.tolerances.bad_fraction:
            out.append(1)
        if self.bad_fraction_req2 > self.tolerances.bad_fraction:
            out.append(2)
        return out


def _sample_pairs(mesh: TriangleMesh, n: int, rng: np.random.Generator, h: float):
    """Area-weighted ordered pairs of chart points: anchor vertices plus uniform offsets of radius h/2."""
    a = mesh.vertex_areas()
    p = a / a.sum()
    i1 = rng.choice(len(a), size=n, p=p)
    i2 = rng.choice(len(a), size=n, p=p)
    rad = 0.5 * h * np.sqrt(rng.uniform(size=(n, 2)))
    ang = rng.uniform(0, 2 * np.pi, size=(n, 2))
    uv = np.column_stack([rad[:, 0] * np.cos(ang[:, 0]), rad[:, 0] * np.sin(ang[:, 0]),
                          rad[:, 1] * np.cos(ang[:, 1]), rad[:, 1] * np.sin(ang[:, 1])])
    keep = i1 != i2
    return np.column_stack([i1[keep], i2[keep]]), uv[keep]


def _pair_points(ctx: OracleContext, pairs, uv):
    p1, n1 = chart_points(ctx.mesh, ctx.shape, pairs[:, 0], uv[:, :2])
    p2, n2 = chart_points(ctx.mesh, ctx.shape, pairs[:, 1], uv[:, 2:])
    return p1, p2, n1, n2


def _admissible(p1, p2, n1, n2, tol: Tolerances) -> np.ndarray:
    t = p1 - p2
    r = np.linalg.norm(t, axis=1)
    ok = r >= tol.margin_delta
    ok &= _delta_distance(t / np.maximum(r, 1e-300)[:, None], n1) >= tol.margin_delta
    ok &= distance_to_D1(iota3_array(t / np.maximum(r, 1e-300)[:, None], n1, n2)) >= tol.margin_d1
    return ok


def global_symmetries(mesh: TriangleMesh, gs: np.ndarray, tol: float, n_probe: int = 64,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Mask of rotations ``g`` with ``g (M - c) + c = M``.

    Probe vertices are moved by ``g`` and measured against the tangent plane of the nearest
    vertex; the median distance must fall below ``tol``.  Plain nearest-vertex distance cannot
    tell a symmetry from an off-surface point once ``tol`` approaches the edge length.
    """
    rng = rng or np.random.default_rng(0)
    c = mesh.area_centroid()
    V = mesh.vertices - c
    probe = V[rng.choice(mesh.n_vertices, size=min(n_probe, mesh.n_vertices), replace=False)]
    moved = np.einsum("wij,pj->wpi", gs, probe).reshape(-1, 3)
    j = cKDTree(V).query(moved)[1]
    d = np.abs(np.einsum("ni,ni->n", moved - V[j], mesh.normals[j])).reshape(len(gs), -1)
    return np.median(d, axis=1) < tol


def _tangent_restrict(S3, n):
    """Restrict ambient 3x3 maps to the plane orthogonal to ``n`` (frames from ``tangent_frames``)."""
    E = tangent_frames(n)
    return np.einsum("nai,nij,nbj->nab", E, S3, E)


def check_star_star(mesh: TriangleMesh, tolerances: Tolerances | None = None,
                    ctx: OracleContext | None = None) -> StarStarReport:
    """Requirement 1: ``iota4`` restricted to M2x2 has rank 4 (finite differences on charts).
    Requirement 2: at non-trivial X4 witnesses ``g_* S_{m'} - S_m`` has rank 2 at both slots."""
    tol = tolerances or Tolerances()
    ctx = ctx or OracleContext.build(mesh)
    rng = np.random.default_rng(tol.seed)
    notes = []

    pairs, uv = _sample_pairs(mesh, tol.pair_budget, rng, ctx.h)
    ok = _admissible(*_pair_points(ctx, pairs, uv), tol)
    pairs, uv = pairs[ok], uv[ok]
    iota_sv = np.linalg.svd(iota4_jacobian(ctx, pairs[:, 0], pairs[:, 1], uv), compute_uv=False)
    w = np.ones(len(pairs))

    # witness search: index many pairs by iota4, match neighbours, then solve the match exactly
    wp, wuv = _sample_pairs(mesh, tol.witness_budget, rng, ctx.h)
    P = _pair_points(ctx, wp, wuv)
    keep = _admissible(*P, tol)
    wp, wuv = wp[keep], wuv[keep]
    p1, p2, n1, n2 = (x[keep] for x in P)
    R = ctx.bounds.R
    raw = iota4_array(p1 - p2, n1, n2)
    vals = _scaled_iota4(raw, R)
    match_r = 0.25 * ctx.h * (ctx.bounds.kappa_max + 1.0 / R)
    dist, nb = cKDTree(vals).query(vals, k=9, distance_upper_bound=match_r)
    src = np.repeat(np.arange(len(vals)), 8)
    dist, nb = dist[:, 1:].ravel(), nb[:, 1:].ravel()
    hit = np.isfinite(dist) & (nb > src)
    near = np.column_stack([src[hit], nb[hit]])
    if len(near) > tol.max_witnesses:
        near = near[np.sort(rng.choice(len(near), tol.max_witnesses, replace=False))]
    witnesses, n_trivial = [], 0
    if len(near):
        a, b = near[:, 0], near[:, 1]
        q1, q2, m1, m2, res, *_ = _batch_refine(ctx, wp[b, 0], wp[b, 1], raw[a])
        solved = np.isfinite(res) & (res < 1e-8)
        a, q1, q2, m1, m2 = a[solved], q1[solved], q2[solved], m1[solved], m2[solved]
        TA = tau_array(p1[a] - p2[a], n1[a])
        TB = tau_array(q1 - q2, m1)
        G = np.einsum("nij,nkj->nik", TA, TB)           # A = g B
        ident = np.linalg.norm(G - np.eye(3), axis=(1, 2)) < 0.5
        sym = np.zeros(len(G), dtype=bool)
        if (~ident).any():
            sym[~ident] = global_symmetries(mesh, G[~ident], SYMMETRY_TOL * ctx.h, rng=rng)
        trivial = ident | sym
        n_trivial = int(trivial.sum()) + int((~solved).sum())
        Samb = ctx.shape.ambient()
        anchorB1 = ctx.vtree.query(q1)[1]
        anchorB2 = ctx.vtree.query(q2)[1]
        for k in np.nonzero(~trivial)[0]:
            g = G[k]
            svs = []
            for mA, nA, jB in ((wp[a[k], 0], n1[a[k]], anchorB1[k]), (wp[a[k], 1], n2[a[k]], anchorB2[k])):
                D = _tangent_restrict((g @ Samb[jB] @ g.T - Samb[mA])[None], nA[None])[0]
                svs.append(tuple(float(x) for x in _sv2(D)))
            witnesses.append(X4Witness((int(wp[a[k], 0]), int(wp[a[k], 1])), (int(anchorB1[k]), int(anchorB2[k])),
                                       g, svs[0], svs[1]))
    if not witnesses:
        notes.append("no non-trivial X4 witnesses found; requirement 2 vacuous on this sample")
    rep = StarStarReport(iota_sv, w, pairs, witnesses, n_trivial, ctx.bounds.kappa_max, tol, notes=notes)
    return rep.evaluate()


def format_report(rep) -> str:
    """Plain key = value lines (machine readable, one per field)."""
    lines = [f"verdict = {rep.verdict}", f"bad_fraction = {rep.bad_fraction:.6g}",
             f"bad_fraction_req1 = {rep.bad_fraction_req1:.6g}", f"bad_fraction_req2 = {rep.bad_fraction_req2:.6g}",
             f"rank_tol = {rep.tolerances.rank_tol:.6g}", f"kappa_scale = {rep.kappa_scale:.6g}",
             f"threshold = {rep.threshold():.6g}", f"failed_requirements = {','.join(map(str, rep.failed_requirements())) or 'none'}"]
    if isinstance(rep, StarReport):
        off = [w for w in rep.witnesses if not w.diagonal]
        lines += [f"witnesses = {len(rep.witnesses)}", f"off_diagonal_witnesses = {len(off)}",
                  f"valid_fraction = {rep.valid_fraction:.6g}"]
        for lab, r in sorted(rep.projection_rank.items()):
            lines.append(f"projection_rank[{lab}] = {r}")
    else:
        lines += [f"sampled_pairs = {len(rep.iota_weights)}", f"witnesses = {len(rep.witnesses)}",
                  f"trivial_witnesses = {rep.n_trivial}"]
        if len(rep.iota_sv):
            q = np.percentile(rep.iota_sv[:, -1], [1, 50])
            lines += [f"iota_sigma4_p01 = {q[0]:.6g}", f"iota_sigma4_median = {q[1]:.6g}"]
        lines += [f"note = {n}" for n in rep.notes]
    return "\n".join(lines) + "\n"
