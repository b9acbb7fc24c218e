"""SE(3) invariants: the SO(3)-trivial part of the translational tensor paired with itself.

Every block ``f[(a, b, .), (n, .), (n', .)]`` (``n <= n'``) is coupled to total spin J
through an intermediate spin L:

    Z^{(a,b,n,n',L,J)}[M] = sum R^J_{b,L}[M, c, mu] R^L_{n,n'}[mu, m, m'] f[(a,b,c),(n,m),(n',m')]

and the descriptor entry for two channels with the same J is
``sum_M Z_A[M] Z_B[M] / sqrt(2J+1)``, i.e. the coefficient of ``f (x) f`` against the unit
trivial vector of ``[J] (x) [J]``.  Entries are ordered by J, then by the channel keys
(lexicographic), upper triangle only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .moments import TranslationalTensor, compute_rho_moments, convolve_translational
from .so3 import SO3Quadrature, real_intertwiner, real_wigner_all
from .sphharm import solid_basis
from .surface import SurfaceSample

FORMAT_VERSION = 1
HAAR_VOLUME = 8 * math.pi ** 2


class InsufficientQuadratureError(ValueError):
    pass


class CapMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Channel:
    a: int
    b: int
    n: int
    n2: int
    L: int
    J: int

    def key(self):
        return (self.a, self.b, self.n, self.n2, self.L, self.J)


@dataclass
class InvariantDescriptor:
    d: int
    dp: int
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def per_J(self) -> dict:
        js = np.array([j for j, _, _ in entry_keys(self.d, self.dp)])
        return {int(j): self.values[js == j] for j in np.unique(js)}


def channels(d: int, dp: int) -> list[Channel]:
    """All coupled channels in canonical order (J first, then lexicographic)."""
    out = []
    for a in range(d + 1):
        for b in range(a % 2, a + 1, 2):
            for n in range(dp + 1):
                for n2 in range(n, dp + 1):
                    for L in range(n2 - n, n + n2 + 1):
                        # equal-degree blocks: f[e, h2, h] = (-1)^a f[e, h, h2] kills L of the other parity
                        if n == n2 and (L - a) % 2:
                            continue
                        for J in range(abs(b - L), b + L + 1):
                            out.append(Channel(a, b, n, n2, L, J))
    out.sort(key=lambda c: (c.J,) + c.key())
    return out


def channels_by_J(d: int, dp: int) -> dict[int, list[Channel]]:
    out: dict[int, list[Channel]] = {}
    for c in channels(d, dp):
        out.setdefault(c.J, []).append(c)
    return out


def entry_keys(d: int, dp: int) -> list[tuple]:
    """``(J, key_A, key_B)`` for every descriptor entry, in storage order."""
    keys = []
    for J, chs in sorted(channels_by_J(d, dp).items()):
        for i in range(len(chs)):
            for k in range(i, len(chs)):
                keys.append((J, chs[i].key(), chs[k].key()))
    return keys


def normalization_table(d: int, dp: int) -> dict[int, float]:
    return {J: 1.0 / math.sqrt(2 * J + 1) for J in channels_by_J(d, dp)}


def _block_slices(d: int, dp: int):
    basis = solid_basis(d)
    spat = {}
    for k, el in enumerate(basis):
        spat.setdefault((el.a, el.b), []).append(k)
    spat = {key: slice(v[0], v[-1] + 1) for key, v in spat.items()}
    harm = {n: slice(n * n, (n + 1) * (n + 1)) for n in range(dp + 1)}
    return spat, harm


def coupling_tensor(ch: Channel) -> np.ndarray:
    """``P[M, c, m, m'] = sum_mu R^J_{b,L}[M, c, mu] R^L_{n,n'}[mu, m, m']``."""
    rj = real_intertwiner(ch.b, ch.L, ch.J)
    rl = real_intertwiner(ch.n, ch.n2, ch.L)
    return np.einsum("Mcu,uab->Mcab", rj, rl)


def coupled_components(f: TranslationalTensor) -> dict[int, np.ndarray]:
    """``Z`` per J as a (channels, 2J+1) matrix."""
    spat, harm = _block_slices(f.d, f.dp)
    out = {}
    for J, chs in channels_by_J(f.d, f.dp).items():
        Z = np.empty((len(chs), 2 * J + 1))
        for i, ch in enumerate(chs):
            blk = f.data[spat[(ch.a, ch.b)], harm[ch.n], harm[ch.n2]]
            Z[i] = np.einsum("Mcab,cab->M", coupling_tensor(ch), blk)
        out[J] = Z
    return out


def _assemble(d, dp, per_J: dict[int, np.ndarray], meta) -> InvariantDescriptor:
    vals = []
    for J in sorted(per_J):
        G = per_J[J]
        iu = np.triu_indices(G.shape[0])
        vals.append(G[iu])
    return InvariantDescriptor(d, dp, np.concatenate(vals), meta)


def _base_meta(d, dp, **extra):
    meta = {
        "format_version": FORMAT_VERSION,
        "caps": [d, dp],
        "normalization": {str(J): v for J, v in normalization_table(d, dp).items()},
        "haar_volume_rescaled_from": HAAR_VOLUME,
        "ordering": "J, then (a,b,n,n',L,J) lexicographic; upper triangle",
    }
    meta.update(extra)
    return meta


def so3_convolve_cg(f: TranslationalTensor, **meta) -> InvariantDescriptor:
    Z = coupled_components(f)
    norm = normalization_table(f.d, f.dp)
    per_J = {J: (z @ z.T) * norm[J] for J, z in Z.items()}
    return _assemble(f.d, f.dp, per_J, _base_meta(f.d, f.dp, route="cg", **meta))


def required_quadrature_order(d: int, dp: int) -> int:
    """Largest total spin in the coupling; integrands are products of two such entries."""
    return d + 2 * dp


def _block_diag_wigner(ws: list[np.ndarray], degrees: list[int], size: int) -> np.ndarray:
    q = ws[0].shape[0]
    out = np.zeros((q, size, size))
    pos = 0
    for deg in degrees:
        k = 2 * deg + 1
        out[:, pos:pos + k, pos:pos + k] = ws[deg]
        pos += k
    return out


def so3_convolve_quadrature(f: TranslationalTensor, q: SO3Quadrature, chunk: int = 256, **meta) -> InvariantDescriptor:
    """Haar average of ``rho(g) f (x) rho(g) f`` projected on the same trivial vectors.

    Uses only the M=0 row of each coupled channel after rotating the raw tensor:
    ``F_AB = sqrt(2J+1) * sum_q w_q Z_A(g_q)[0] Z_B(g_q)[0]``.
    """
    need = required_quadrature_order(f.d, f.dp)
    if q.order < need:
        raise InsufficientQuadratureError(f"quadrature order {q.order} < required {need} for caps ({f.d}, {f.dp})")
    basis = solid_basis(f.d)
    E, H = f.data.shape[0], f.data.shape[1]
    spat, harm = _block_slices(f.d, f.dp)
    by_J = channels_by_J(f.d, f.dp)
    # dense M=0 projection rows, one per channel
    phi0 = {}
    for J, chs in by_J.items():
        rows = np.zeros((len(chs), E, H, H))
        for i, ch in enumerate(chs):
            rows[i, spat[(ch.a, ch.b)], harm[ch.n], harm[ch.n2]] = coupling_tensor(ch)[J]
        phi0[J] = rows.reshape(len(chs), -1)
    jmax = max(f.d, f.dp)
    acc = {J: np.zeros((len(chs), len(chs))) for J, chs in by_J.items()}
    for s in range(0, len(q), chunk):
        sl = slice(s, s + chunk)
        ws = real_wigner_all(jmax, q.alpha[sl], q.beta[sl], q.gamma[sl])
        Ws = _block_diag_wigner(ws, [el.b for el in basis if el.c == -el.b], E)
        Wh = _block_diag_wigner(ws, list(range(f.dp + 1)), H)
        t = np.einsum("qhH,EHL->qEhL", Wh, f.data)
        t = np.einsum("qlL,qEhL->qEhl", Wh, t)
        t = np.einsum("qeE,qEhl->qehl", Ws, t).reshape(t.shape[0], -1)
        w = q.weights[sl]
        for J, rows in phi0.items():
            z = t @ rows.T
            acc[J] += (z * w[:, None]).T @ z
    per_J = {J: a * math.sqrt(2 * J + 1) for J, a in acc.items()}
    return _assemble(f.d, f.dp, per_J, _base_meta(f.d, f.dp, route="quadrature", quad_order=q.order, **meta))


def compute_descriptor(sample: SurfaceSample, d: int, dp: int, **meta) -> InvariantDescriptor:
    """Surface sample -> centered moments -> translational tensor -> invariants."""
    rho = compute_rho_moments(sample, d, dp, center=True)
    return so3_convolve_cg(convolve_translational(rho), centered=True, **meta)


def degree_weights(desc: InvariantDescriptor) -> dict[int, float]:
    return {J: 1.0 for J in channels_by_J(desc.d, desc.dp)}


def _check_compatible(A: InvariantDescriptor, B: InvariantDescriptor):
    if (A.d, A.dp) != (B.d, B.dp):
        raise CapMismatchError(f"caps differ: {(A.d, A.dp)} vs {(B.d, B.dp)}")
    na, nb = A.meta.get("normalization"), B.meta.get("normalization")
    if na is not None and nb is not None and na != nb:
        raise CapMismatchError("normalization tables differ")


def distance_breakdown(A: InvariantDescriptor, B: InvariantDescriptor, weights=None) -> dict[int, float]:
    """Weighted squared distance contributed by each total spin J."""
    _check_compatible(A, B)
    weights = weights or degree_weights(A)
    pa, pb = A.per_J(), B.per_J()
    return {J: float(weights.get(J, 1.0) * np.sum((pa[J] - pb[J]) ** 2)) for J in pa}


def descriptor_distance(A: InvariantDescriptor, B: InvariantDescriptor, weights=None) -> float:
    return math.sqrt(sum(distance_breakdown(A, B, weights).values()))


def relative_change(A: InvariantDescriptor, B: InvariantDescriptor) -> float:
    _check_compatible(A, B)
    return float(np.linalg.norm(A.values - B.values) / max(np.linalg.norm(A.values), 1e-300))
