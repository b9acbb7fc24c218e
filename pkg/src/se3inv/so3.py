"""Rotations, Wigner D-matrices, Clebsch-Gordan coefficients and Haar quadrature.

``wigner_D`` follows the covariance ``Y(R r) = D(R) Y(r)`` for the complex
harmonics of :mod:`se3inv.sphharm`.  Because those harmonics carry an extra
``(-1)^m`` relative to the usual physics convention, the resulting matrix is
``S conj(D_std) S`` with ``S = diag((-1)^m)``, where ``D_std`` is the usual
``e^{-i m' alpha} d_{m'm}(beta) e^{-i m gamma}``.  The real Wigner matrix
``W = U D U^H`` acts on real harmonics the same way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sphharm import real_to_complex

TWO_PI = 2 * math.pi
GIMBAL_TOL = 1e-12


@dataclass(frozen=True)
class EulerZYZ:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not (0.0 <= self.beta <= math.pi):
            raise ValueError(f"beta out of [0, pi]: {self.beta}")

    @classmethod
    def wrapped(cls, alpha, beta, gamma) -> "EulerZYZ":
        return cls(float(alpha) % TWO_PI, float(beta), float(gamma) % TWO_PI)


@dataclass(frozen=True)
class WignerBlock:
    j: int
    matrix: np.ndarray


@dataclass(frozen=True)
class SO3Quadrature:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self):
        return len(self.weights)

    def rotations(self) -> np.ndarray:
        return rotation_matrices(self.alpha, self.beta, self.gamma)


def _rz(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_from_euler(e: EulerZYZ) -> np.ndarray:
    return _rz(e.alpha) @ _ry(e.beta) @ _rz(e.gamma)


def rotation_matrices(alpha, beta, gamma) -> np.ndarray:
    """Vectorized ``Rz(a) Ry(b) Rz(g)`` -> (N, 3, 3)."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    out = np.empty(np.shape(alpha) + (3, 3))
    out[..., 0, 0] = ca * cb * cg - sa * sg
    out[..., 0, 1] = -ca * cb * sg - sa * cg
    out[..., 0, 2] = ca * sb
    out[..., 1, 0] = sa * cb * cg + ca * sg
    out[..., 1, 1] = -sa * cb * sg + ca * cg
    out[..., 1, 2] = sa * sb
    out[..., 2, 0] = -sb * cg
    out[..., 2, 1] = sb * sg
    out[..., 2, 2] = cb
    return out


def check_rotation(r, tol: float = 1e-12) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.abs(r.T @ r - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return r


def euler_from_rotation(r) -> EulerZYZ:
    r = np.asarray(r, dtype=float)
    beta = math.acos(min(1.0, max(-1.0, r[2, 2])))
    sb = math.hypot(r[0, 2], r[1, 2])
    if sb < GIMBAL_TOL:
        if r[2, 2] > 0:
            return EulerZYZ.wrapped(math.atan2(r[1, 0], r[0, 0]), 0.0, 0.0)
        return EulerZYZ.wrapped(math.atan2(-r[1, 0], -r[0, 0]), math.pi, 0.0)
    beta = math.atan2(sb, r[2, 2])
    return EulerZYZ.wrapped(math.atan2(r[1, 2], r[0, 2]), beta, math.atan2(r[2, 1], -r[2, 0]))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# Small d


def _d_seed(l: int, mp: int, m: int, beta: np.ndarray) -> np.ndarray:
    """Explicit single-sum value of ``d^l_{mp,m}`` when ``l = max(|m|, |mp|)``."""
    half_c, half_s = np.cos(beta / 2), np.sin(beta / 2)
    lf = math.lgamma
    base = 0.5 * (lf(l + mp + 1) + lf(l - mp + 1) + lf(l + m + 1) + lf(l - m + 1))
    smin, smax = max(0, m - mp), min(l + m, l - mp)
    out = np.zeros_like(beta)
    for s in range(smin, smax + 1):
        logc = base - (lf(l + m - s + 1) + lf(s + 1) + lf(mp - m + s + 1) + lf(l - mp - s + 1))
        sign = -1.0 if (mp - m + s) % 2 else 1.0
        out = out + sign * math.exp(logc) * half_c ** (2 * l + m - mp - 2 * s) * half_s ** (mp - m + 2 * s)
    return out


def small_d(jmax: int, beta) -> list[np.ndarray]:
    """``d^j_{m'm}(beta)`` for j <= jmax, each of shape beta.shape + (2j+1, 2j+1).

    Three-term upward recurrence in j for every fixed (m', m), seeded at
    ``j = max(|m|, |m'|)``; no factorials beyond the seed.
    """
    beta = np.asarray(beta, dtype=float)
    cb = np.cos(beta)
    out = [np.zeros(beta.shape + (2 * j + 1, 2 * j + 1)) for j in range(jmax + 1)]
    for mp in range(-jmax, jmax + 1):
        for m in range(-jmax, jmax + 1):
            l0 = max(abs(m), abs(mp))
            prev = np.zeros_like(beta)
            cur = _d_seed(l0, mp, m, beta)
            out[l0][..., mp + l0, m + l0] = cur
            for j in range(l0, jmax):
                # (j+1) sqrt(...)(j) d^{j+1} relation, Kostelec-Rockmore form
                jp = j + 1
                denom = j * math.sqrt((jp * jp - m * m) * (jp * jp - mp * mp))
                a = jp * (2 * j + 1) / math.sqrt((jp * jp - m * m) * (jp * jp - mp * mp))
                if j == 0:
                    nxt = cb * cur  # only m = mp = 0 reaches here
                else:
                    shift = m * mp / (j * jp)
                    c = jp * math.sqrt((j * j - m * m) * (j * j - mp * mp)) / denom
                    nxt = a * (cb - shift) * cur - c * prev
                prev, cur = cur, nxt
                out[jp][..., mp + jp, m + jp] = cur
    return out


# ---------------------------------------------------------------------------
# Wigner D


def _phases(j: int, angle) -> np.ndarray:
    ms = np.arange(-j, j + 1)
    return np.exp(1j * np.multiply.outer(np.asarray(angle, dtype=float), ms))


def wigner_D_all(jmax: int, alpha, beta, gamma) -> list[np.ndarray]:
    """Complex D^j for j <= jmax, vectorized over angle arrays."""
    ds = small_d(jmax, beta)
    out = []
    for j in range(jmax + 1):
        sgn = (-1.0) ** np.arange(-j, j + 1)
        ea = _phases(j, alpha)
        eg = _phases(j, gamma)
        # printed convention: S conj(D_std) S, D_std = e^{-i m' a} d e^{-i m g}
        mat = ea[..., :, None] * ds[j] * eg[..., None, :]
        out.append(mat * np.multiply.outer(sgn, sgn))
    return out


def wigner_D(j: int, e: EulerZYZ) -> WignerBlock:
    return WignerBlock(j, wigner_D_all(j, e.alpha, e.beta, e.gamma)[j])


def real_wigner_all(jmax: int, alpha, beta, gamma) -> list[np.ndarray]:
    """Real matrices ``W^j`` with ``Y^R(R r) = W^j Y^R(r)``."""
    out = []
    for j, d in enumerate(wigner_D_all(jmax, alpha, beta, gamma)):
        u = real_to_complex(j)
        w = u @ d @ u.conj().T
        out.append(w.real)
    return out


def real_wigner_from_matrix(jmax: int, r) -> list[np.ndarray]:
    e = euler_from_rotation(r)
    return real_wigner_all(jmax, e.alpha, e.beta, e.gamma)


# ---------------------------------------------------------------------------
# Clebsch-Gordan


@lru_cache(maxsize=None)
def clebsch_gordan(j1: int, m1: int, j2: int, m2: int, J: int, M: int) -> float:
    """``<j1 m1 j2 m2 | J M>`` (integer spins) by the Racah formula in log space."""
    if M != m1 + m2 or not (abs(j1 - j2) <= J <= j1 + j2):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0.0
    lf = math.lgamma
    pre = 0.5 * (
        math.log(2 * J + 1)
        + lf(J + j1 - j2 + 1) + lf(J - j1 + j2 + 1) + lf(j1 + j2 - J + 1) - lf(j1 + j2 + J + 2)
        + lf(J + M + 1) + lf(J - M + 1) + lf(j1 - m1 + 1) + lf(j1 + m1 + 1) + lf(j2 - m2 + 1) + lf(j2 + m2 + 1)
    )
    kmin = max(0, j2 - J - m1, j1 - J + m2)
    kmax = min(j1 + j2 - J, j1 - m1, j2 + m2)
    total = 0.0
    for k in range(kmin, kmax + 1):
        t = lf(k + 1) + lf(j1 + j2 - J - k + 1) + lf(j1 - m1 - k + 1) + lf(j2 + m2 - k + 1) \
            + lf(J - j2 + m1 + k + 1) + lf(J - j1 - m2 + k + 1)
        total += (-1.0) ** k * math.exp(pre - t)
    return total


@lru_cache(maxsize=None)
def cg_matrix(j1: int, j2: int, J: int) -> np.ndarray:
    """``C[M, m1, m2]`` dense, indices shifted by the spin."""
    out = np.zeros((2 * J + 1, 2 * j1 + 1, 2 * j2 + 1))
    for m1 in range(-j1, j1 + 1):
        for m2 in range(-j2, j2 + 1):
            M = m1 + m2
            if abs(M) <= J:
                out[M + J, m1 + j1, m2 + j2] = clebsch_gordan(j1, m1, j2, m2, J, M)
    out.setflags(write=False)
    return out


def kronecker_decompose(j, m, k, jp, mp, kp) -> list[tuple[int, float]]:
    """Coefficients with ``D^j_{mk} D^j'_{m'k'} = sum_J c_J D^J_{(m+m')(k+k')}``."""
    out = []
    for J in range(abs(j - jp), j + jp + 1):
        if abs(m + mp) > J or abs(k + kp) > J:
            continue
        out.append((J, clebsch_gordan(j, m, jp, mp, J, m + mp) * clebsch_gordan(j, k, jp, kp, J, k + kp)))
    return out


@lru_cache(maxsize=None)
def real_intertwiner(j1: int, j2: int, J: int) -> np.ndarray:
    """Real ``R[M, m1, m2]`` coupling real harmonics of degrees j1, j2 into degree J.

    ``R (W1 x W2) = W_J R`` for every rotation; rows orthonormal.  Obtained from the
    complex CG tensor by the real basis change, then made real by a global phase.
    """
    c = cg_matrix(j1, j2, J).astype(complex)
    u1, u2, uj = real_to_complex(j1), real_to_complex(j2), real_to_complex(J)
    r = np.einsum("AM,Mab,ia,jb->Aij", uj, c, u1.conj(), u2.conj())
    if np.abs(r.imag).max() > np.abs(r.real).max():
        r = -1j * r
    if np.abs(r.imag).max() > 1e-10:
        raise ArithmeticError("real intertwiner has residual imaginary part")
    out = np.ascontiguousarray(r.real)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Hopf pullback


def hopf_pullback(j: int, m: int, e: EulerZYZ) -> complex:
    """``D^j_{m0}(alpha, beta, gamma)``; independent of gamma."""
    return complex(wigner_D(j, e).matrix[m + j, j])


def fit_hopf_constant(j: int, m: int, rng: np.random.Generator, samples: int = 100,
                      conjugate: bool = False) -> tuple[complex, float]:
    """Least-squares ``c`` in ``D^j_{m0}(a, b, g) = c Y_jm(b, a)``; returns (c, relative residual).

    With ``conjugate=True`` the fit is against ``Y*_jm`` instead.

    Measured numerically; the pipeline never relies on a hard-coded constant.
    """
    from .sphharm import SHIndex, SphericalDirection, eval_Y

    a = rng.uniform(0, TWO_PI, samples)
    b = np.arccos(rng.uniform(-1, 1, samples))
    g = rng.uniform(0, TWO_PI, samples)
    lhs = np.array([hopf_pullback(j, m, EulerZYZ(ai, bi, gi)) for ai, bi, gi in zip(a, b, g)])
    rhs = np.array([eval_Y(SHIndex(j, m), SphericalDirection(bi, ai)) for ai, bi in zip(a, b)])
    if conjugate:
        rhs = rhs.conj()
    c = complex(np.vdot(rhs, lhs) / np.vdot(rhs, rhs))
    resid = float(np.linalg.norm(lhs - c * rhs) / max(np.linalg.norm(lhs), 1e-300))
    return c, resid


# ---------------------------------------------------------------------------
# Quadrature


def so3_quadrature(order: int) -> SO3Quadrature:
    """Product rule: uniform in alpha, gamma and Gauss-Legendre in cos(beta).

    Integrates every D^j entry with ``j <= order`` exactly, and every product of two
    entries with ``j, j' <= order`` (the same node counts suffice for degree 2*order
    in cos(beta) and bandwidth 2*order in the angles).
    """
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    na = 2 * order + 1
    x, wb = np.polynomial.legendre.leggauss(order + 1)
    ang = TWO_PI * np.arange(na) / na
    A, B, G = np.meshgrid(ang, np.arccos(x), ang, indexing="ij")
    W = np.broadcast_to((wb / 2.0)[None, :, None], A.shape) / (na * na)
    return SO3Quadrature(A.ravel(), B.ravel(), G.ravel(), np.ascontiguousarray(W.ravel()), order)
