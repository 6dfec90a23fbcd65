import struct

import numpy as np
import pytest

from latentprune import ValidationError, read_ltns, write_ltns


def test_float_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4, 5, 2)).astype(np.float32)
    path = tmp_path / "grid.ltns"
    write_ltns(path, a)
    back = read_ltns(path)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, a)


def test_bool_roundtrip(tmp_path):
    m = np.random.default_rng(1).random((4, 3, 3)) > 0.5
    m[0] = True
    path = tmp_path / "mask.ltns"
    write_ltns(path, m)
    back = read_ltns(path)
    assert back.dtype == np.bool_
    np.testing.assert_array_equal(back, m)


def test_header_layout(tmp_path):
    a = np.zeros((2, 3), dtype=np.float32)
    path = tmp_path / "t.ltns"
    write_ltns(path, a)
    raw = path.read_bytes()
    assert raw[:4] == b"LTNS"
    version, naxes = struct.unpack_from("<BB", raw, 4)
    assert (version, naxes) == (1, 2)
    assert struct.unpack_from("<2I", raw, 6) == (2, 3)
    assert raw[14] == 0  # f32 dtype code
    assert len(raw) == 15 + 2 * 3 * 4


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ltns"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValidationError, match="magic"):
        read_ltns(path)


def test_payload_length_mismatch(tmp_path):
    a = np.zeros((2, 2), dtype=np.float32)
    path = tmp_path / "short.ltns"
    write_ltns(path, a)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ValidationError, match="payload length"):
        read_ltns(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "odd.ltns"
    header = b"LTNS" + struct.pack("<BB", 1, 1) + struct.pack("<I", 1) + struct.pack("<B", 9)
    path.write_bytes(header + bytes(4))
    with pytest.raises(ValidationError, match="dtype code"):
        read_ltns(path)
