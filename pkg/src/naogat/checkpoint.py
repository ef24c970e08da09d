"""Checkpoint files: a header followed by (name, shape, raw float32) triples.

Layout, all integers little-endian::

    b"NAOGATCK" <u32 version> <u32 metadata length> <metadata JSON>
    <u32 count>
    count x: <u16 name length><name utf-8><u8 rank><u32 dim>*rank<float32 data>
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NAOGATCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    metadata = json.loads(data[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode()
        pos += n
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) * 4
        state[name] = np.frombuffer(data[pos:pos + size], dtype="<f4").reshape(shape).astype(np.float32)
        pos += size
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return state, metadata
