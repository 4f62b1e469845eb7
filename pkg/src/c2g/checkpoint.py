"""Binary checkpoint format for named parameter tensors.

Layout (all integers little-endian unsigned 32-bit, values little-endian
64-bit floats):

    magic   | 4 bytes  | "C2G1"
    count   | u32      | number of records
    record  | u32      | name length in bytes
            | bytes    | utf-8 name
            | u32      | rank
            | u32 * rank | extents
            | f64 * prod(extents) | values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"C2G1"

__all__ = ["MAGIC", "save_checkpoint", "load_checkpoint"]


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise ValueError(
                f"{self.path}: truncated checkpoint, needed {self.offset + count} bytes "
                f"but file has {len(self.blob)}"
            )
        chunk = self.blob[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> dict[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r} at offset 0, expected {MAGIC!r}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8")
        arrays[name] = values.reshape(shape).astype(np.float64)
    return arrays
