"""LTNS: the toolkit's binary tensor file format.

Layout, all little-endian:

    magic   4 bytes  b"LTNS"
    version u8       1
    naxes   u8
    extents u32 * naxes
    dtype   u8       0 = float32, 1 = uint8 (boolean masks)
    payload raw row-major data

Readers reject short/overlong payloads with a descriptive error.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"LTNS"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR_KIND = {"f": 0, "b": 1, "u": 1}


def write_ltns(path: str | Path, array: np.ndarray) -> None:
    """Write an array as LTNS. Floats are stored as f32, bools as u8."""
    a = np.asarray(array)
    if a.dtype.kind not in _CODE_FOR_KIND:
        raise ValidationError(f"unsupported dtype for LTNS: {a.dtype}")
    code = _CODE_FOR_KIND[a.dtype.kind]
    a = np.ascontiguousarray(a.astype(_DTYPE_CODES[code], copy=False))
    if a.ndim > 255:
        raise ValidationError("too many axes for LTNS")
    header = MAGIC + struct.pack("<BB", VERSION, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    header += struct.pack("<B", code)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes())


def read_ltns(path: str | Path) -> np.ndarray:
    """Read an LTNS file. Returns float32 or bool depending on the dtype code."""
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise ValidationError(f"{path}: not an LTNS file (bad magic)")
    version, naxes = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported LTNS version {version}")
    offset = 6
    if len(raw) < offset + 4 * naxes + 1:
        raise ValidationError(f"{path}: truncated LTNS header")
    shape = struct.unpack_from(f"<{naxes}I", raw, offset)
    offset += 4 * naxes
    (code,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if code not in _DTYPE_CODES:
        raise ValidationError(f"{path}: unknown LTNS dtype code {code}")
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: payload length {len(payload)} does not match "
            f"shape {tuple(shape)} with dtype code {code} (expected {expected} bytes)"
        )
    a = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if code == 1:
        return a.astype(bool)
    return a.copy()
