"""Binary checkpoint I/O.

Layout: magic "SANC", version u32 LE, spec-text length u64 + UTF-8 network
spec text, tensor count u64, then per tensor: name length u16 + UTF-8 name,
dtype code u8 (0=f32, 1=f64), rank u8, dims as u32 list, raw little-endian
IEEE-754 payload.
"""

import struct

import numpy as np

MAGIC = b"SANC"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec_text: str, tensors: dict):
    """Write spec text and named float tensors; iteration order is sorted by name."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        spec_bytes = spec_text.encode("utf-8")
        f.write(struct.pack("<Q", len(spec_bytes)))
        f.write(spec_bytes)
        f.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], order="C")
            if arr.dtype not in _DTYPE_CODES:
                raise CheckpointError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: '{name[:40]}...'")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (spec_text, {name: ndarray})."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (spec_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    spec_text = data[off:off + spec_len].decode("utf-8")
    off += spec_len
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        code, rank = struct.unpack_from("<BB", data, off)
        off += 2
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"tensor '{name}': unknown dtype code {code}")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)),
                            offset=off).reshape(dims)
        tensors[name] = arr.astype(dtype.newbyteorder("="))
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes")
    return spec_text, tensors
