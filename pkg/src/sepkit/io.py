"""Binary file formats and report serialization.

Tensor files ("SEPT"): magic, format version u32 LE = 1, dtype u8
(0 = f32, 1 = f64), ndim u8 = 4, four u64 LE dims (N, C, H, W), then raw
little-endian values row-major.  No compression or alignment padding.

Complex files ("SEPC"): the magic followed by two consecutive SEPT blocks,
real part then imaginary part.

Parameter files ("SEPP"): the magic, a u32 LE entry count, then repeated
[name length u16 LE, UTF-8 name, SEPT block] in insertion order.

Writers stage to a temp file in the target directory and rename on
success, so failed commands never leave partial files behind.

JSON reports use insertion-ordered fields and 17-significant-digit floats
so reruns diff cleanly byte for byte.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile

import numpy as np

from .errors import DimensionError
from .params import ParamStore
from .spectral import ComplexTensor
from .tensor import Tensor

MAGIC_TENSOR = b"SEPT"
MAGIC_COMPLEX = b"SEPC"
MAGIC_PARAMS = b"SEPP"
FORMAT_VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_block_bytes(arr: np.ndarray) -> bytes:
    """Serialize one 4D array as a SEPT block."""
    if arr.ndim != 4:
        raise DimensionError(f"SEPT blocks are 4D, got shape {arr.shape}")
    code = _DTYPE_CODE.get(arr.dtype)
    if code is None:
        raise DimensionError(f"SEPT blocks hold f32/f64, got {arr.dtype}")
    header = MAGIC_TENSOR + struct.pack("<IBB", FORMAT_VERSION, code, 4)
    dims = struct.pack("<4Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                               copy=False).tobytes()
    return header + dims + payload


def read_tensor_block(buf: bytes, offset: int):
    """Parse one SEPT block at `offset`; returns (array, next_offset)."""
    if buf[offset:offset + 4] != MAGIC_TENSOR:
        raise DimensionError(
            f"bad tensor magic {buf[offset:offset + 4]!r} at offset {offset}")
    version, code, ndim = struct.unpack_from("<IBB", buf, offset + 4)
    if version != FORMAT_VERSION:
        raise DimensionError(f"unsupported tensor format version {version}")
    if ndim != 4:
        raise DimensionError(f"tensor blocks must be 4D, got ndim={ndim}")
    if code not in _CODE_DTYPE:
        raise DimensionError(f"unknown dtype code {code}")
    dims = struct.unpack_from("<4Q", buf, offset + 10)
    dtype = _CODE_DTYPE[code]
    count = math.prod(dims)  # python ints: no silent overflow on bad dims
    start = offset + 10 + 32
    end = start + count * dtype.itemsize
    if end > len(buf):
        raise DimensionError("tensor block truncated")
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(dims)
    return np.ascontiguousarray(arr).astype(dtype.newbyteorder("=")), end


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sepkit-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path: str, t: Tensor) -> None:
    atomic_write(path, tensor_block_bytes(t.data))


def read_tensor(path: str) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = read_tensor_block(buf, 0)
    if end != len(buf):
        raise DimensionError(f"trailing bytes after tensor block in {path}")
    return Tensor(arr, copy=False)


def write_complex(path: str, s: ComplexTensor) -> None:
    data = MAGIC_COMPLEX + tensor_block_bytes(s.re.data) \
        + tensor_block_bytes(s.im.data)
    atomic_write(path, data)


def read_complex(path: str) -> ComplexTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC_COMPLEX:
        raise DimensionError(f"bad complex magic {buf[:4]!r} in {path}")
    re, off = read_tensor_block(buf, 4)
    im, end = read_tensor_block(buf, off)
    if end != len(buf):
        raise DimensionError(f"trailing bytes after complex blocks in {path}")
    return ComplexTensor(Tensor(re, copy=False), Tensor(im, copy=False))


def write_params(path: str, store: ParamStore) -> None:
    parts = [MAGIC_PARAMS, struct.pack("<I", len(store))]
    for name, arr in store.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(tensor_block_bytes(arr))
    atomic_write(path, b"".join(parts))


def read_params(path: str) -> ParamStore:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC_PARAMS:
        raise DimensionError(f"bad params magic {buf[:4]!r} in {path}")
    count = struct.unpack_from("<I", buf, 4)[0]
    store = ParamStore()
    offset = 8
    for _ in range(count):
        name_len = struct.unpack_from("<H", buf, offset)[0]
        offset += 2
        name = buf[offset:offset + name_len].decode("utf-8")
        offset += name_len
        arr, offset = read_tensor_block(buf, offset)
        store.put(name, arr)
    if offset != len(buf):
        raise DimensionError(f"trailing bytes after params blocks in {path}")
    return store


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

def render_json(obj) -> str:
    """Deterministic JSON: insertion-ordered fields, floats at 17 digits."""
    if isinstance(obj, dict):
        inner = ", ".join(f"{render_json(str(k))}: {render_json(v)}"
                          for k, v in obj.items())
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(render_json(v) for v in obj) + "]"
    if isinstance(obj, str):
        escaped = obj.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return "null"  # JSON has no NaN/Inf
        return format(v, ".17g")
    if obj is None:
        return "null"
    raise TypeError(f"cannot render {type(obj).__name__} as JSON")
