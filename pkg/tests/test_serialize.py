import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from se3inv.invariants import InvariantDescriptor, compute_descriptor, entry_keys
from se3inv.moments import RhoMomentTensor, TranslationalTensor, sphere_pattern
from se3inv.serialize import (
    DESCRIPTOR_MAGIC,
    FormatError,
    descriptor_from_bytes,
    descriptor_from_text,
    descriptor_to_bytes,
    descriptor_to_text,
    load_descriptor,
    save_descriptor,
    tensor_from_bytes,
    tensor_to_bytes,
    tensor_to_text,
)
from se3inv.surface import sample_measure


def _desc(seed, d=2, dp=1):
    v = np.random.default_rng(seed).normal(size=len(entry_keys(d, dp)))
    return InvariantDescriptor(d, dp, v, {"seed": seed, "note": "x"})


@given(st.integers(0, 2 ** 31))
def test_binary_round_trip_is_exact(seed):
    a = _desc(seed)
    b = descriptor_from_bytes(descriptor_to_bytes(a))
    np.testing.assert_array_equal(a.values, b.values)
    assert b.meta == a.meta and (b.d, b.dp) == (a.d, a.dp)


@given(st.integers(0, 2 ** 31))
def test_text_round_trip_is_exact(seed):
    a = _desc(seed)
    np.testing.assert_array_equal(descriptor_from_text(descriptor_to_text(a)).values, a.values)


def test_text_lines_carry_keys():
    lines = [x for x in descriptor_to_text(_desc(0)).splitlines() if not x.startswith("#")]
    J, ka, kb, v = lines[0].split()
    assert (int(J), tuple(map(int, ka.split(","))), tuple(map(int, kb.split(",")))) == entry_keys(2, 1)[0]


def test_bytes_are_deterministic(sphere3):
    s = sample_measure(sphere3, 2)
    a, b = compute_descriptor(s, 2, 1), compute_descriptor(s, 2, 1)
    assert descriptor_to_bytes(a) == descriptor_to_bytes(b)


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXXXXXX" + b[8:], "magic"),
    (lambda b: b[:8] + struct.pack("<I", 99) + b[12:], "version"),
    (lambda b: b[:-5], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_corrupt_files_rejected(mutate, msg):
    with pytest.raises(FormatError, match=msg):
        descriptor_from_bytes(mutate(descriptor_to_bytes(_desc(1))))


def test_normalization_mismatch_rejected():
    raw = bytearray(descriptor_to_bytes(_desc(1)))
    # first normalization entry: after magic, 3 u32 header and the count
    off = 8 + 12 + 4 + 4
    raw[off:off + 8] = struct.pack("<d", 0.5)
    with pytest.raises(FormatError, match="normalization"):
        descriptor_from_bytes(bytes(raw))


def test_tensor_round_trip():
    rho = RhoMomentTensor(3, 2, sphere_pattern(3, 2), centered=False)
    back = tensor_from_bytes(tensor_to_bytes(rho))
    assert isinstance(back, RhoMomentTensor) and back.centered is False
    np.testing.assert_array_equal(back.data, rho.data)
    f = TranslationalTensor(1, 1, np.arange(4 * 4 * 4, dtype=float).reshape(4, 4, 4))
    np.testing.assert_array_equal(tensor_from_bytes(tensor_to_bytes(f)).data, f.data)
    assert "(1,1,-1) (0,0) (0,0) 16.0" in tensor_to_text(f)


def test_load_autodetects(tmp_path):
    a = _desc(4)
    save_descriptor(a, tmp_path / "a.bin")
    save_descriptor(a, tmp_path / "a.txt", "text")
    assert (tmp_path / "a.bin").read_bytes().startswith(DESCRIPTOR_MAGIC)
    for name in ("a.bin", "a.txt"):
        np.testing.assert_array_equal(load_descriptor(tmp_path / name).values, a.values)
    with pytest.raises(ValueError):
        save_descriptor(a, tmp_path / "a.x", "xml")
