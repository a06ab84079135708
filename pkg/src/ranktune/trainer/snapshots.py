"""Per-epoch weight snapshot files.

Binary layout (all integers little-endian):

    magic   4 bytes  b"AHSN"
    version u32      1
    layers  u32      layer count
    per layer:
        name_len u32, name UTF-8 bytes,
        dims     4 x u32  (N1, N2, N3, N4),
        data     N1*N2*N3*N4 IEEE-754 float32, row-major

The reader promotes payloads to float64; values written from float32
round-trip bit-identically.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from ranktune.errors import FormatError
from ranktune.tensors import WeightTensor4D

MAGIC = b"AHSN"
VERSION = 1


def snapshot_path(directory, epoch: int) -> Path:
    return Path(directory) / f"epoch_{epoch:03d}.snap"


def write_snapshot(path, layers: Sequence[WeightTensor4D]) -> None:
    """Write one epoch's weight set; data is stored as 32-bit floats."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(layers))]
    for layer in layers:
        name = layer.layer_name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<IIII", *layer.dims))
        chunks.append(np.ascontiguousarray(layer.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}", offset=self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_snapshot(path) -> list[WeightTensor4D]:
    """Read a snapshot, promoting weights to float64 for analysis."""
    raw = Path(path).read_bytes()
    reader = _Reader(raw, path)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}", offset=4)
    layer_count = reader.u32("layer count")
    layers = []
    for i in range(layer_count):
        name_len = reader.u32(f"layer {i} name length")
        name = reader.take(name_len, f"layer {i} name").decode("utf-8")
        dims = struct.unpack("<IIII", reader.take(16, f"layer {i} dims"))
        count = int(np.prod(dims))
        data_offset = reader.pos
        payload = np.frombuffer(reader.take(4 * count, f"layer {i} data"), dtype="<f4")
        data = payload.astype(np.float64).reshape(dims)
        if not np.all(np.isfinite(data)):
            raise FormatError(f"{path}: non-finite values in layer '{name}'", offset=data_offset)
        layers.append(WeightTensor4D(layer_name=name, data=data))
    if reader.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - reader.pos} trailing bytes", offset=reader.pos)
    return layers
