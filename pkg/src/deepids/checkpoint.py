"""Portable binary checkpoints.

Layout (all integers little-endian):

    magic               8 bytes  b"DIDSNET1"
    format version      uint32
    arch length         uint32
    arch                canonical JSON (sorted keys, compact separators)
    record count        uint32
    per record:
        name length     uint16
        name            utf-8 bytes
        rank            uint8
        extents         rank x uint64
        data            float64 little-endian, C order

Records appear in the network's fixed state order, so save -> load -> save
is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .network import build_from_arch

MAGIC = b"DIDSNET1"
FORMAT_VERSION = 1


def save_checkpoint(net, path: str | Path) -> None:
    arch_bytes = json.dumps(net.arch(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    records = net.state_items()
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION),
              struct.pack("<I", len(arch_bytes)), arch_bytes,
              struct.pack("<I", len(records))]
    for name, arr in records:
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path):
    data = Path(path).read_bytes()
    reader = _Reader(data, str(path))
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} not supported "
                              f"(expected {FORMAT_VERSION})")
    arch_len = reader.u32()
    try:
        arch = json.loads(reader.take(arch_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt architecture spec: {exc}") from None
    try:
        net = build_from_arch(arch)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: incomplete architecture spec: {exc}") from None

    n_records = reader.u32()
    loaded: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        name = reader.take(reader.u16()).decode("utf-8")
        rank = reader.u8()
        shape = tuple(reader.u64() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(count * 8)
        loaded[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    expected = net.state_items()
    if len(loaded) != len(expected):
        raise CheckpointError(f"{path}: {len(loaded)} records but architecture "
                              f"defines {len(expected)}")
    for name, arr in expected:
        if name not in loaded:
            raise CheckpointError(f"{path}: missing record {name!r}")
        if loaded[name].shape != arr.shape:
            raise CheckpointError(f"{path}: record {name!r} has shape "
                                  f"{loaded[name].shape}, expected {arr.shape}")
        arr[...] = loaded[name]
    return net


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]
