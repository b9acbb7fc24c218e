"""Moments of the harmonic channels of the lift measure and their translational self-convolution.

``RhoMomentTensor.data[e, h]`` is ``sum_i w_i p_e(x_i) Y^R_h(s_i)`` with ``p_e = r^a Y^R_bc``
ordered by :func:`sphharm.solid_basis` and ``h`` the flat harmonic index.

``TranslationalTensor.data[e, h, h2]`` holds the solid-basis coefficients of the
truncated moment generating function of ``(rho_h2 o (x -> -x)) * rho_h``.  The spatial
moments it encodes are ``sum_ij w_i w_j Y_h(s_i) Y_h2(s_j) (x_i - x_j)^alpha``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sphharm import (
    DEGREE_CAP,
    monomial_to_solid_matrix,
    monomial_values,
    monomials,
    n_harmonics,
    real_sh,
    solid_basis,
    solid_to_monomial_matrix,
)
from .surface import SurfaceSample


@dataclass(frozen=True)
class RhoMomentTensor:
    d: int
    dp: int
    data: np.ndarray  # (n_solid(d), (dp+1)^2)
    centered: bool = True

    def entry(self, a, b, c, n, m) -> float:
        k = _solid_pos(self.d)[(a, b, c)]
        return float(self.data[k, n * n + n + m])

    def monomial_moments(self) -> np.ndarray:
        """Moments against ``x^i y^j z^k`` in the order of :func:`sphharm.monomials`."""
        return monomial_to_solid_matrix(self.d) @ self.data

    def scaled(self, lam: float) -> "RhoMomentTensor":
        return RhoMomentTensor(self.d, self.dp, lam * self.data, self.centered)


@dataclass(frozen=True)
class TranslationalTensor:
    d: int
    dp: int
    data: np.ndarray  # (n_solid(d), H, H)

    def mgf_coefficients(self) -> np.ndarray:
        """Monomial coefficients of the truncated MGF (moments divided by alpha!)."""
        return np.einsum("ek,ehl->khl", solid_to_monomial_matrix(self.d), self.data)

    def spatial_moments(self) -> np.ndarray:
        """Plain monomial moments ``alpha! * coefficient``."""
        return _factorials(self.d)[:, None, None] * self.mgf_coefficients()


def _solid_pos(d):
    return {(el.a, el.b, el.c): k for k, el in enumerate(solid_basis(d))}


def _factorials(d) -> np.ndarray:
    return np.array([math.factorial(i) * math.factorial(j) * math.factorial(k) for i, j, k in monomials(d)], dtype=float)


def _check_caps(d, dp):
    if not (0 <= d <= DEGREE_CAP and 0 <= dp <= DEGREE_CAP):
        raise ValueError(f"degree caps (d={d}, d'={dp}) exceed the limit {DEGREE_CAP}")


def compute_rho_moments(sample: SurfaceSample, d: int, dp: int, center: bool = True, chunk: int = 20000) -> RhoMomentTensor:
    """Accumulate monomial moments per sample point, then change to the solid basis once."""
    _check_caps(d, dp)
    if len(sample) == 0:
        raise ValueError("empty surface sample")
    pts = sample.points - sample.centroid() if center else sample.points
    acc = np.zeros((len(monomials(d)), n_harmonics(dp)))
    for s in range(0, len(sample), chunk):
        sl = slice(s, s + chunk)
        pv = monomial_values(d, pts[sl])
        yv = real_sh(dp, sample.normals[sl])
        acc += pv.T @ (sample.weights[sl, None] * yv)
    return RhoMomentTensor(d, dp, solid_to_monomial_matrix(d) @ acc, center)


def reflect_moments(t: RhoMomentTensor) -> RhoMomentTensor:
    sign = np.array([(-1.0) ** el.a for el in solid_basis(t.d)])
    return RhoMomentTensor(t.d, t.dp, sign[:, None] * t.data, t.centered)


def _to_grid(d, coef):
    """Scatter monomial-indexed rows into a dense (d+1)^3 grid."""
    grid = np.zeros((d + 1,) * 3 + coef.shape[1:])
    e = np.array(monomials(d))
    grid[e[:, 0], e[:, 1], e[:, 2]] = coef
    return grid


def _from_grid(d, grid):
    e = np.array(monomials(d))
    return grid[e[:, 0], e[:, 1], e[:, 2]]


def convolve_translational(t: RhoMomentTensor) -> TranslationalTensor:
    """Cauchy product of truncated exponential series for every channel pair."""
    d = t.d
    fact = _factorials(d)
    ref = reflect_moments(t)
    e_pos = _to_grid(d, t.monomial_moments() / fact[:, None])
    e_ref = _to_grid(d, ref.monomial_moments() / fact[:, None])
    H = t.data.shape[1]
    out = np.zeros((d + 1,) * 3 + (H, H))
    for p, q, r in monomials(d):
        lo = e_ref[p, q, r]
        if not np.any(lo):
            continue
        hi = e_pos[: d + 1 - p, : d + 1 - q, : d + 1 - r]
        out[p:, q:, r:] += hi[..., :, None] * lo[None, None, None, None, :]
    coef = _from_grid(d, out)  # monomial MGF coefficients, entries above degree d discarded
    solid = np.einsum("ke,khl->ehl", monomial_to_solid_matrix(d), coef)
    return TranslationalTensor(d, t.dp, solid)


@dataclass(frozen=True)
class QuadraticFormReport:
    max_abs_error: float
    scale: float
    passed: bool


def bilinear_tensor(d: int) -> np.ndarray:
    """``B[e, e1, e2]`` with ``f[e, h, h2] = sum B[e, e1, e2] rho[e1, h] rho[e2, h2]``.

    Built entry by entry from monomial index arithmetic, independently of the
    grid-slicing product in :func:`convolve_translational`.
    """
    mons = monomials(d)
    pos = {m: k for k, m in enumerate(mons)}
    fact = _factorials(d)
    T = monomial_to_solid_matrix(d)
    pos_side = T / fact[:, None]
    ref_side = np.array([(-1.0) ** sum(m) for m in mons])[:, None] * pos_side
    out = np.zeros((len(mons),) * 3)
    for ia, a in enumerate(mons):
        for ib, b in enumerate(mons):
            g = (a[0] + b[0], a[1] + b[1], a[2] + b[2])
            if sum(g) > d:
                continue
            out += T[pos[g]][:, None, None] * np.outer(pos_side[ia], ref_side[ib])[None]
    return out


def quadratic_form_check(t_in: RhoMomentTensor, t_out: TranslationalTensor, tol: float = 1e-10) -> QuadraticFormReport:
    """Audit that every output entry equals the explicit bilinear contraction of input entries."""
    B = bilinear_tensor(t_in.d)
    expect = np.einsum("eab,ah,bl->ehl", B, t_in.data, t_in.data)
    err = float(np.abs(expect - t_out.data).max(initial=0.0))
    scale = float(np.abs(expect).max(initial=0.0))
    return QuadraticFormReport(err, scale, err <= tol * max(scale, 1.0))


def pairwise_difference_moments(points, weights, normals, d: int, dp: int) -> np.ndarray:
    """Brute force ``sum_ij w_i w_j Y_h(s_i) Y_h2(s_j) (x_i - x_j)^alpha`` for small point sets."""
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    y = real_sh(dp, np.asarray(normals, dtype=float))
    diff = (pts[:, None, :] - pts[None, :, :]).reshape(-1, 3)
    mv = monomial_values(d, diff).reshape(len(pts), len(pts), -1)
    return np.einsum("ijk,i,j,ih,jl->khl", mv, w, w, y, y)


def sphere_pattern(d: int, dp: int) -> np.ndarray:
    """Exact moments of the unit sphere's lift: 1 where ``(b, c) = (n, m)``, else 0.

    On the sphere ``x = N`` and ``r = 1``, so the entry is the orthonormal overlap of two real harmonics.
    """
    out = np.zeros((len(solid_basis(d)), n_harmonics(dp)))
    for k, el in enumerate(solid_basis(d)):
        if el.b <= dp:
            out[k, el.b * el.b + el.b + el.c] = 1.0
    return out


def to_racah(t: RhoMomentTensor) -> np.ndarray:
    """Rescale both harmonic factors to ``sqrt(4 pi / (2n+1)) Y``; the sphere entries become ``4 pi / (2n+1)``."""
    sb = np.array([math.sqrt(4 * math.pi / (2 * el.b + 1)) for el in solid_basis(t.d)])
    sh = np.array([math.sqrt(4 * math.pi / (2 * n + 1)) for n in range(t.dp + 1) for _ in range(2 * n + 1)])
    return sb[:, None] * t.data * sh[None, :]


def pattern_error(t: RhoMomentTensor) -> float:
    """Largest deviation from :func:`sphere_pattern`, relative to the pattern magnitude."""
    return float(np.abs(t.data - sphere_pattern(t.d, t.dp)).max())
