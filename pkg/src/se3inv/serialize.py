"""Versioned binary containers and text dumps for descriptors and moment tensors.

Binary layout (all integers little-endian):

    magic (8 bytes) | version u32 | d u32 | d' u32
    descriptor only: n_J u32, then (J u32, norm f64) * n_J
    tensor only:     kind u32 (0 rho, 1 translational), ndim u32, shape u64 * ndim
    metadata length u64 | metadata JSON (utf-8)
    count u64 | payload <f8 * count
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .invariants import FORMAT_VERSION, InvariantDescriptor, entry_keys, normalization_table
from .moments import RhoMomentTensor, TranslationalTensor
from .sphharm import solid_basis

DESCRIPTOR_MAGIC = b"SE3INVD\x00"
TENSOR_MAGIC = b"SE3INVT\x00"
_KINDS = {RhoMomentTensor: 0, TranslationalTensor: 1}


class FormatError(ValueError):
    pass


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_tail(buf, meta: dict, payload: np.ndarray):
    blob = json.dumps(meta, sort_keys=True, default=_json_default).encode()
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    flat = np.ascontiguousarray(payload, dtype="<f8").ravel()
    buf.write(struct.pack("<Q", flat.size))
    buf.write(flat.tobytes())


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise FormatError("truncated file")
    return struct.unpack(fmt, raw)


def _read_tail(buf):
    (n,) = _read(buf, "<Q")
    meta = json.loads(buf.read(n).decode())
    (count,) = _read(buf, "<Q")
    raw = buf.read(8 * count)
    if len(raw) != 8 * count:
        raise FormatError("truncated payload")
    if buf.read(1):
        raise FormatError("trailing bytes after payload")
    return meta, np.frombuffer(raw, dtype="<f8").astype(float)


def _check_header(buf, magic):
    got = buf.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}")
    version, d, dp = _read(buf, "<III")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    return d, dp


def descriptor_to_bytes(desc: InvariantDescriptor) -> bytes:
    buf = io.BytesIO()
    buf.write(DESCRIPTOR_MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, desc.d, desc.dp))
    norm = normalization_table(desc.d, desc.dp)
    buf.write(struct.pack("<I", len(norm)))
    for J in sorted(norm):
        buf.write(struct.pack("<Id", J, norm[J]))
    _write_tail(buf, desc.meta, desc.values)
    return buf.getvalue()


def descriptor_from_bytes(data: bytes) -> InvariantDescriptor:
    buf = io.BytesIO(data)
    d, dp = _check_header(buf, DESCRIPTOR_MAGIC)
    (nJ,) = _read(buf, "<I")
    stored = dict(_read(buf, "<Id") for _ in range(nJ))
    expect = normalization_table(d, dp)
    if set(stored) != set(expect) or any(abs(stored[J] - expect[J]) > 1e-15 for J in expect):
        raise FormatError("normalization table does not match this build")
    meta, vals = _read_tail(buf)
    if vals.size != len(entry_keys(d, dp)):
        raise FormatError(f"payload has {vals.size} entries, caps ({d}, {dp}) need {len(entry_keys(d, dp))}")
    return InvariantDescriptor(d, dp, vals, meta)


def tensor_to_bytes(t, meta: dict | None = None) -> bytes:
    kind = _KINDS[type(t)]
    buf = io.BytesIO()
    buf.write(TENSOR_MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, t.d, t.dp))
    buf.write(struct.pack("<II", kind, t.data.ndim))
    buf.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
    m = dict(meta or {})
    if kind == 0:
        m.setdefault("centered", t.centered)
    _write_tail(buf, m, t.data)
    return buf.getvalue()


def tensor_from_bytes(data: bytes):
    buf = io.BytesIO(data)
    d, dp = _check_header(buf, TENSOR_MAGIC)
    kind, ndim = _read(buf, "<II")
    shape = _read(buf, f"<{ndim}Q")
    meta, vals = _read_tail(buf)
    arr = vals.reshape(shape)
    if kind == 0:
        return RhoMomentTensor(d, dp, arr, bool(meta.get("centered", True)))
    if kind == 1:
        return TranslationalTensor(d, dp, arr)
    raise FormatError(f"unknown tensor kind {kind}")


def descriptor_to_text(desc: InvariantDescriptor) -> str:
    """One entry per line: ``J (a,b,n,n',L,J) (a,b,n,n',L,J) value``; comment lines carry metadata."""
    lines = [f"# format_version {FORMAT_VERSION}", f"# caps {desc.d} {desc.dp}",
             "# meta " + json.dumps(desc.meta, sort_keys=True, default=_json_default)]
    for (J, ka, kb), v in zip(entry_keys(desc.d, desc.dp), desc.values):
        lines.append(f"{J} {','.join(map(str, ka))} {','.join(map(str, kb))} {float(v)!r}")
    return "\n".join(lines) + "\n"


def descriptor_from_text(text: str) -> InvariantDescriptor:
    meta, caps, vals = {}, None, []
    for line in text.splitlines():
        if line.startswith("# caps"):
            caps = tuple(int(x) for x in line.split()[2:4])
        elif line.startswith("# meta"):
            meta = json.loads(line[len("# meta "):])
        elif line and not line.startswith("#"):
            vals.append(float(line.rsplit(" ", 1)[1]))
    if caps is None:
        raise FormatError("missing caps line")
    desc = InvariantDescriptor(caps[0], caps[1], np.array(vals), meta)
    if len(vals) != len(entry_keys(*caps)):
        raise FormatError("entry count does not match caps")
    return desc


def tensor_to_text(t) -> str:
    """``(a,b,c) (n,m) [(n',m')] value`` per line."""
    basis = solid_basis(t.d)
    harm = [(n, m) for n in range(t.dp + 1) for m in range(-n, n + 1)]
    lines = [f"# format_version {FORMAT_VERSION}", f"# kind {type(t).__name__}", f"# caps {t.d} {t.dp}"]
    for idx in np.ndindex(*t.data.shape):
        el = basis[idx[0]]
        parts = [f"({el.a},{el.b},{el.c})"] + [f"({harm[h][0]},{harm[h][1]})" for h in idx[1:]]
        lines.append(" ".join(parts) + f" {float(t.data[idx])!r}")
    return "\n".join(lines) + "\n"


def save_descriptor(desc: InvariantDescriptor, path, fmt: str = "binary") -> None:
    p = Path(path)
    if fmt == "binary":
        p.write_bytes(descriptor_to_bytes(desc))
    elif fmt == "text":
        p.write_text(descriptor_to_text(desc))
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_descriptor(path) -> InvariantDescriptor:
    data = Path(path).read_bytes()
    if data.startswith(DESCRIPTOR_MAGIC):
        return descriptor_from_bytes(data)
    return descriptor_from_text(data.decode())
