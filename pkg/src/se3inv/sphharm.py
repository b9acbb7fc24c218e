"""Spherical harmonics, associated Legendre functions and solid-harmonic bases.

Conventions
-----------
``P^m_n`` carries the Condon-Shortley factor ``(-1)^m`` and the complex
harmonic is ``Y_nm = (-1)^m N_nm P^m_n(cos theta) e^{i m phi}`` with
``N_nm = sqrt((2n+1)(n-m)! / (4 pi (n+m)!))``.  The two signs cancel for
``m >= 0``, so the real harmonics built from ``Re``/``Im`` of ``Y_n|m|`` carry
no phase at all.

Real harmonics of degree ``n`` are stored in the flat index ``n*n + n + m``.
The solid basis ``r^a Y^R_bc`` (``a >= b``, ``a - b`` even) spans polynomials
of degree ``<= d``; it is enumerated by :func:`solid_basis`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly

DEGREE_CAP = 12
POLE_EPS = 1e-14


@dataclass(frozen=True)
class SHIndex:
    n: int
    m: int

    def __post_init__(self):
        if self.n < 0 or abs(self.m) > self.n:
            raise ValueError(f"invalid harmonic index (n={self.n}, m={self.m})")

    @property
    def flat(self) -> int:
        return self.n * self.n + self.n + self.m


@dataclass(frozen=True)
class SphericalDirection:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"colatitude out of range: {self.theta}")
        if not 0.0 <= self.phi < 2 * math.pi:
            raise ValueError(f"longitude out of range: {self.phi}")

    @classmethod
    def from_vector(cls, v) -> "SphericalDirection":
        x, y, z = np.asarray(v, dtype=float) / np.linalg.norm(v)
        theta = math.acos(min(1.0, max(-1.0, z)))
        if math.hypot(x, y) < POLE_EPS:
            return cls(theta, 0.0)
        phi = math.atan2(y, x) % (2 * math.pi)
        if phi >= 2 * math.pi:
            phi = 0.0
        return cls(theta, phi)

    def to_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


@dataclass(frozen=True)
class SolidHarmonicBasisElement:
    """``r^a Y^R_bc``."""

    a: int
    b: int
    c: int

    def __post_init__(self):
        if self.a < self.b or (self.a - self.b) % 2 or abs(self.c) > self.b or self.b < 0:
            raise ValueError(f"invalid solid harmonic (a={self.a}, b={self.b}, c={self.c})")


def n_harmonics(nmax: int) -> int:
    return (nmax + 1) ** 2


def harmonic_indices(nmax: int) -> list[tuple[int, int]]:
    return [(n, m) for n in range(nmax + 1) for m in range(-n, n + 1)]


# ---------------------------------------------------------------------------
# Legendre functions and point evaluation


def assoc_legendre(n: int, m: int, x: float) -> float:
    """``P^m_n(x)`` with the Condon-Shortley phase, by upward recurrence in n."""
    if m < 0 or m > n:
        raise ValueError(f"need 0 <= m <= n, got n={n}, m={m}")
    if abs(x) > 1.0:
        raise ValueError(f"|x| > 1: {x}")
    pmm = 1.0
    if m > 0:
        s = math.sqrt((1.0 - x) * (1.0 + x))
        fact = 1.0
        for _ in range(m):
            pmm *= -fact * s
            fact += 2.0
    if n == m:
        return pmm
    pm1 = x * (2 * m + 1) * pmm
    if n == m + 1:
        return pm1
    p2, p1 = pmm, pm1
    for k in range(m + 2, n + 1):
        p2, p1 = p1, (x * (2 * k - 1) * p1 - (k + m - 1) * p2) / (k - m)
    return p1


def _norm(n: int, m: int) -> float:
    return math.sqrt((2 * n + 1) / (4 * math.pi) * math.exp(math.lgamma(n - m + 1) - math.lgamma(n + m + 1)))


def eval_Y(idx: SHIndex, direction: SphericalDirection) -> complex:
    n, m = idx.n, idx.m
    if m < 0:
        return (-1) ** m * eval_Y(SHIndex(n, -m), direction).conjugate()
    p = assoc_legendre(n, m, math.cos(direction.theta))
    return (-1) ** m * _norm(n, m) * p * complex(math.cos(m * direction.phi), math.sin(m * direction.phi))


def eval_Y_real(idx: SHIndex, direction: SphericalDirection) -> float:
    m = idx.m
    if m == 0:
        return eval_Y(idx, direction).real
    y = eval_Y(SHIndex(idx.n, abs(m)), direction)
    return math.sqrt(2) * (y.imag if m < 0 else y.real)


@lru_cache(maxsize=None)
def _recurrence_tables(nmax: int):
    a = np.zeros((nmax + 1, nmax + 1))
    b = np.zeros((nmax + 1, nmax + 1))
    seed = np.zeros(nmax + 1)
    for m in range(nmax + 1):
        prod = 1.0
        for k in range(1, m + 1):
            prod *= (2 * k - 1) / (2 * k)
        seed[m] = math.sqrt((2 * m + 1) / (4 * math.pi) * prod)
        for n in range(m + 1, nmax + 1):
            a[n, m] = math.sqrt((4 * n * n - 1) / (n * n - m * m))
            b[n, m] = math.sqrt((2 * n + 1) * ((n - 1) ** 2 - m * m) / ((2 * n - 3) * (n * n - m * m)))
    return a, b, seed


def real_sh(nmax: int, xyz) -> np.ndarray:
    """Real harmonics at unit vectors ``xyz`` (shape (N, 3)); returns (N, (nmax+1)^2).

    Uses the normalized recurrence on ``Q^m_n = N P^m_n / sin^m theta`` and
    ``(x + i y)^m`` for the azimuthal part, so poles need no special casing.
    """
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    a, b, seed = _recurrence_tables(nmax)
    out = np.empty((xyz.shape[0], n_harmonics(nmax)))
    w = np.ones(xyz.shape[0], dtype=complex)
    xy = x + 1j * y
    r2 = math.sqrt(2)
    for m in range(nmax + 1):
        if m > 0:
            w = w * xy
        prev, cur = None, np.full_like(z, seed[m])
        for n in range(m, nmax + 1):
            if n == m + 1:
                prev, cur = cur, a[n, m] * z * cur
            elif n > m + 1:
                prev, cur = cur, a[n, m] * z * cur - b[n, m] * prev
            base = n * n + n
            if m == 0:
                out[:, base] = cur
            else:
                out[:, base + m] = r2 * cur * w.real
                out[:, base - m] = r2 * cur * w.imag
    return out


# ---------------------------------------------------------------------------
# Real <-> complex basis change


@lru_cache(maxsize=None)
def real_to_complex(n: int) -> np.ndarray:
    """Unitary ``U`` with ``Y^R = U Y`` on degree n (rows/cols indexed by m + n)."""
    u = np.zeros((2 * n + 1, 2 * n + 1), dtype=complex)
    r2 = 1 / math.sqrt(2)
    u[n, n] = 1.0
    for m in range(1, n + 1):
        # sqrt2 Re Y_nm = (Y_nm + (-1)^m Y_n,-m) / sqrt2
        u[n + m, n + m] = r2
        u[n + m, n - m] = (-1) ** m * r2
        # sqrt2 Im Y_nm = (Y_nm - (-1)^m Y_n,-m) / (i sqrt2)
        u[n - m, n + m] = -1j * r2
        u[n - m, n - m] = 1j * (-1) ** m * r2
    u.setflags(write=False)
    return u


# ---------------------------------------------------------------------------
# Polynomials and solid harmonics


@lru_cache(maxsize=None)
def monomials(d: int) -> tuple[tuple[int, int, int], ...]:
    """Exponent triples with total degree <= d, graded then lexicographic."""
    out = []
    for t in range(d + 1):
        for i in range(t, -1, -1):
            for j in range(t - i, -1, -1):
                out.append((i, j, t - i - j))
    return tuple(out)


@lru_cache(maxsize=None)
def monomial_index(d: int) -> dict:
    return {e: k for k, e in enumerate(monomials(d))}


@lru_cache(maxsize=None)
def solid_basis(d: int) -> tuple[SolidHarmonicBasisElement, ...]:
    """Solid basis of degree <= d, ordered by (a, b, c)."""
    out = []
    for a in range(d + 1):
        for b in range(a % 2, a + 1, 2):
            for c in range(-b, b + 1):
                out.append(SolidHarmonicBasisElement(a, b, c))
    return tuple(out)


@dataclass
class PolynomialCoefficients:
    """Dense coefficients over :func:`monomials` of degree bound ``d``."""

    d: int
    coef: np.ndarray

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        if self.coef.shape != (len(monomials(self.d)),):
            raise ValueError("coefficient vector does not match the degree bound")

    @classmethod
    def from_dict(cls, d: int, terms: dict) -> "PolynomialCoefficients":
        idx = monomial_index(d)
        coef = np.zeros(len(idx))
        for e, v in terms.items():
            if sum(e) > d:
                raise ValueError(f"monomial {e} exceeds degree bound {d}")
            coef[idx[tuple(e)]] += v
        return cls(d, coef)

    def __call__(self, xyz) -> np.ndarray:
        return monomial_values(self.d, xyz) @ self.coef


def monomial_values(d: int, xyz) -> np.ndarray:
    """All monomials of degree <= d at points ``xyz`` (N, 3) -> (N, n_monomials)."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    pw = np.ones((d + 1,) + xyz.shape)
    for k in range(1, d + 1):
        pw[k] = pw[k - 1] * xyz
    exps = np.array(monomials(d))
    return pw[exps[:, 0], :, 0].T * pw[exps[:, 1], :, 1].T * pw[exps[:, 2], :, 2].T


def _poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            e = (e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2])
            out[e] = out.get(e, 0.0) + c1 * c2
    return out


def _poly_pow(p: dict, k: int) -> dict:
    out = {(0, 0, 0): 1.0}
    for _ in range(k):
        out = _poly_mul(out, p)
    return out


_R2 = {(2, 0, 0): 1.0, (0, 2, 0): 1.0, (0, 0, 2): 1.0}


@lru_cache(maxsize=None)
def _regular_solid(b: int, c: int) -> tuple:
    """``r^b Y^R_bc`` as a homogeneous polynomial (tuple of (exponent, coef))."""
    m = abs(c)
    # Q(t) = N * d^m P_b / dt^m, parity b - m
    pcoef = npleg.leg2poly([0] * b + [1])
    dq = nppoly.polyder(pcoef, m) if m else pcoef
    dq = np.atleast_1d(dq)
    norm = _norm(b, m) * (math.sqrt(2) if m else 1.0)
    zpart: dict = {}
    deg = b - m
    for p in range(deg + 1):
        coef = dq[p] if p < len(dq) else 0.0
        if coef == 0.0:
            continue
        # t^p r^{deg-p}, deg - p even
        rpow = _poly_pow(_R2, (deg - p) // 2)
        for e, v in rpow.items():
            key = (e[0], e[1], e[2] + p)
            zpart[key] = zpart.get(key, 0.0) + coef * v
    # (x + i y)^m, keep Re for c > 0 and Im for c < 0
    azim: dict = {}
    for k in range(m + 1):
        binom = math.comb(m, k)
        if c > 0 or c == 0:
            if k % 2:
                continue
            sign = (-1) ** (k // 2)
        else:
            if k % 2 == 0:
                continue
            sign = (-1) ** ((k - 1) // 2)
        azim[(m - k, k, 0)] = sign * binom
    poly = _poly_mul(zpart, azim)
    return tuple((e, norm * v) for e, v in sorted(poly.items()) if v != 0.0)


@lru_cache(maxsize=None)
def solid_to_monomial_matrix(d: int) -> np.ndarray:
    """``C[e, k]`` = coefficient of monomial k in basis element e (square, invertible)."""
    basis = solid_basis(d)
    idx = monomial_index(d)
    mat = np.zeros((len(basis), len(idx)))
    for row, el in enumerate(basis):
        poly = dict(_regular_solid(el.b, el.c))
        if el.a > el.b:
            poly = _poly_mul(poly, _poly_pow(_R2, (el.a - el.b) // 2))
        for e, v in poly.items():
            mat[row, idx[e]] += v
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=None)
def monomial_to_solid_matrix(d: int) -> np.ndarray:
    """Inverse change of basis, solved block by block in homogeneous degree."""
    c = solid_to_monomial_matrix(d)
    mons = monomials(d)
    basis = solid_basis(d)
    out = np.zeros_like(c)
    for a in range(d + 1):
        rows = [k for k, el in enumerate(basis) if el.a == a]
        cols = [k for k, e in enumerate(mons) if sum(e) == a]
        block = c[np.ix_(rows, cols)]
        out[np.ix_(cols, rows)] = np.linalg.inv(block)
    out.setflags(write=False)
    return out


def monomial_to_solid(poly: PolynomialCoefficients) -> dict:
    """Coefficients ``s`` with ``poly = sum_e s_e r^a Y^R_bc``."""
    s = poly.coef @ monomial_to_solid_matrix(poly.d)
    return {el: float(v) for el, v in zip(solid_basis(poly.d), s)}


def solid_to_monomial(coeffs: dict, d: int | None = None) -> PolynomialCoefficients:
    if d is None:
        d = max((el.a for el in coeffs), default=0)
    basis = solid_basis(d)
    pos = {el: k for k, el in enumerate(basis)}
    s = np.zeros(len(basis))
    for el, v in coeffs.items():
        s[pos[el]] = v
    return PolynomialCoefficients(d, s @ solid_to_monomial_matrix(d))


def solid_values(d: int, xyz) -> np.ndarray:
    """``r^a Y^R_bc`` at points (N, 3) -> (N, n_basis) via the monomial route."""
    return monomial_values(d, xyz) @ solid_to_monomial_matrix(d).T
