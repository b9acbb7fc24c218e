"""Embedded oracle suites for ``se3inv selftest``.

Every suite looks up its library functions through the module objects at call time, so a
monkeypatched (corrupted) table is what gets audited.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import fiber, invariants, moments, so3, surface


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    error: float
    tol: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{flag} {self.name}: error {self.error:.3g} (tol {self.tol:g}) in {self.seconds:.2f}s{extra}"


def sphere_moments() -> tuple[float, float, str]:
    errs = []
    for level in (3, 4):
        t = moments.compute_rho_moments(surface.sample_measure(surface.make_sphere(1.0, level), 2), 4, 3)
        errs.append(moments.pattern_error(t))
    ratio = errs[0] / errs[1]
    # second-order convergence: error must drop by close to 4 per subdivision
    err = errs[1] if ratio > 3.5 else float("inf")
    return err, 5e-3, f"level 3 {errs[0]:.2e}, level 4 {errs[1]:.2e}, ratio {ratio:.2f}"


def cg_identities() -> tuple[float, float, str]:
    worst = 0.0
    for j1 in range(5):
        for j2 in range(5):
            rows = np.concatenate([so3.cg_matrix(j1, j2, J).reshape(2 * J + 1, -1)
                                   for J in range(abs(j1 - j2), j1 + j2 + 1)])
            worst = max(worst, float(np.abs(rows @ rows.T - np.eye(len(rows))).max()))
    return worst, 1e-12, "orthonormal rows, spins <= 4"


def wigner_identities(rng: np.random.Generator) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(5):
        a, b = so3.random_rotation(rng), so3.random_rotation(rng)
        wa, wb, wab = (so3.real_wigner_from_matrix(6, r) for r in (a, b, a @ b))
        for j in range(7):
            A, B, AB = (np.reshape(w[j], (2 * j + 1, 2 * j + 1)) for w in (wa, wb, wab))
            worst = max(worst, float(np.abs(A @ A.T - np.eye(2 * j + 1)).max()),
                        float(np.abs(A @ B - AB).max()))
    return worst, 1e-10, "unitarity and homomorphism, j <= 6"


def mgf_product(rng: np.random.Generator) -> tuple[float, float, str]:
    n, d, dp = 6, 6, 2
    pts = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    w = rng.uniform(0.5, 1.5, size=n)
    s = surface.SurfaceSample(pts, nrm, w)
    rho = moments.compute_rho_moments(s, d, dp, center=False)
    got = moments.convolve_translational(rho).spatial_moments()
    ref = moments.pairwise_difference_moments(pts, w, nrm, d, dp)
    return float(np.abs(got - ref).max() / np.abs(ref).max()), 1e-12, f"{n} points, degree <= {d}"


def iota_psi_roundtrip(rng: np.random.Generator) -> tuple[float, float, str]:
    worst, done = 0.0, 0
    while done < 200:
        a = rng.normal(size=3)
        b, c = (v / np.linalg.norm(v) for v in rng.normal(size=(2, 3)))
        v = fiber.iota4_array(a, b, c)
        if fiber.distance_to_D1(v[1:]) < 0.05 or fiber._delta_distance(a / v[0], b) < 0.05:
            continue
        g = fiber.tau_array(a, b)
        back = fiber.psi(g, v[0], v[1:])
        worst = max(worst, max(float(np.abs(x - y).max()) for x, y in zip(back, (a, b, c))))
        done += 1
    return worst, 1e-10, "psi(tau, iota4) = id on 200 samples"


def dual_route(rng: np.random.Generator) -> tuple[float, float, str]:
    d, dp = 2, 2
    H = (dp + 1) ** 2
    E = len(invariants.solid_basis(d))
    f = moments.TranslationalTensor(d, dp, rng.normal(size=(E, H, H)))
    a = invariants.so3_convolve_cg(f).values
    b = invariants.so3_convolve_quadrature(f, so3.so3_quadrature(invariants.required_quadrature_order(d, dp))).values
    return float(np.abs(a - b).max()), 1e-8, "CG contraction vs Haar quadrature at caps (2, 2)"


def run_all(seed: int = 0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    suites = [
        ("sphere moments", sphere_moments),
        ("clebsch-gordan orthogonality", cg_identities),
        ("wigner identities", lambda: wigner_identities(rng)),
        ("mgf product", lambda: mgf_product(rng)),
        ("iota/psi round trip", lambda: iota_psi_roundtrip(rng)),
        ("cg vs quadrature", lambda: dual_route(rng)),
    ]
    out = []
    for name, fn in suites:
        t0 = time.perf_counter()
        try:
            err, tol, detail = fn()
            ok = bool(np.isfinite(err) and err <= tol)
        except Exception as exc:  # a crashing suite is a named failure, not an abort
            err, tol, detail, ok = float("inf"), 0.0, f"{type(exc).__name__}: {exc}", False
        out.append(SuiteResult(name, ok, err, tol, time.perf_counter() - t0, detail))
    return out
