"""Named-tensor checkpoint container.

Layout: magic ``VFLW``, version u32 little-endian, tensor count u32, then per
tensor: name length u16, UTF-8 name, ndim u8, dims u32 each, float32 data
little-endian. Tensors are written in sorted-name order so identical state
always produces identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VFLW"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed, truncated, or wrong-version checkpoint file."""


def write_tensors(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        # not ascontiguousarray: that would promote 0-d arrays to 1-d
        arr = np.asarray(arrays[name]).astype("<f4", copy=False)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointFormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointFormatError(f"tensor rank too high for '{name}'")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if len(raw) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    if view[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {bytes(view[:4])!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError(f"{path}: truncated at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        out[name] = data.astype(np.float32)
    if pos != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
