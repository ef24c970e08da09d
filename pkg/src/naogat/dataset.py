"""Streamable clip dataset files.

Layout (gzip-compressed byte stream)::

    b"NAOGAT-CLIPS\\n"
    <u32 little-endian length><header JSON>
    repeated: <u32 length><record JSON><T*C*H0*W0 uint8 frame bytes>

The header describes ``T, C, H0, W0, Q`` and the class vocabularies, plus the
generator configuration when the file came from the scene generator.  Frames
are stored as 8-bit intensities; in memory they are ``uint8 / 255`` float32.
Floats in the JSON records use Python's shortest round-trip repr, so reading
a written clip reproduces it bit for bit.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .structures import Clip, Detection, DetectionSet, STATarget

MAGIC = b"NAOGAT-CLIPS\n"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class DatasetHeader:
    frames: int
    channels: int
    height: int
    width: int
    max_detections: int
    nouns: list[str]
    verbs: list[str]
    scene_config: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"version": FORMAT_VERSION, "T": self.frames, "C": self.channels, "H0": self.height,
                "W0": self.width, "Q": self.max_detections, "nouns": self.nouns, "verbs": self.verbs,
                "scene_config": self.scene_config, "extra": self.extra}

    @classmethod
    def from_json(cls, data: dict) -> "DatasetHeader":
        if data.get("version") != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported dataset version {data.get('version')}")
        return cls(data["T"], data["C"], data["H0"], data["W0"], data["Q"], data["nouns"], data["verbs"],
                   data.get("scene_config"), data.get("extra", {}))


def _write_block(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_block(fh) -> bytes | None:
    raw = fh.read(4)
    if not raw:
        return None
    if len(raw) != 4:
        raise DatasetFormatError("truncated record length")
    (n,) = struct.unpack("<I", raw)
    payload = fh.read(n)
    if len(payload) != n:
        raise DatasetFormatError("truncated record")
    return payload


def _record(clip: Clip) -> dict:
    t = clip.target
    return {
        "clip_id": clip.clip_id,
        "fps": clip.fps,
        "target": {"box": list(t.box), "noun": t.noun, "verb": t.verb, "ttc": t.ttc, "nao_present": t.nao_present},
        "detections": [[[*d.box, d.score, d.class_id, d.is_dummy] for d in ds] for ds in clip.detections],
        "extras": clip.extras,
    }


def _clip(record: dict, frames: np.ndarray) -> Clip:
    t = record["target"]
    target = STATarget(tuple(t["box"]), t["noun"], t["verb"], t["ttc"], t["nao_present"])
    sets = [DetectionSet(tuple(Detection(tuple(row[:4]), row[4], row[5], row[6]) for row in ds))
            for ds in record["detections"]]
    return Clip(frames, sets, target, record["clip_id"], record["fps"], record.get("extras", {}))


def _frames_to_bytes(frames: np.ndarray) -> bytes:
    q = np.round(np.asarray(frames, dtype=np.float64) * 255.0)
    if q.min() < 0 or q.max() > 255:
        raise DatasetFormatError("frame values must lie in [0, 1]")
    return q.astype(np.uint8).tobytes()


def write_clips(path, header: DatasetHeader, clips: Iterable[Clip]) -> int:
    """Stream ``clips`` to ``path``; returns the number written."""
    path = Path(path)
    count = 0
    try:
        # fixed mtime and no stored name keep the bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile("", "wb", 6, raw, mtime=0) as fh:
            fh.write(MAGIC)
            _write_block(fh, json.dumps(header.to_json(), sort_keys=True).encode())
            for clip in clips:
                expected = (header.frames, header.channels, header.height, header.width)
                if clip.frames.shape != expected:
                    raise DatasetFormatError(f"{clip.clip_id}: frames {clip.frames.shape} != header {expected}")
                _write_block(fh, json.dumps(_record(clip), sort_keys=True).encode())
                fh.write(_frames_to_bytes(clip.frames))
                count += 1
    except OSError as exc:
        raise OSError(f"writing dataset {path}: {exc}") from exc
    return count


def read_header(path) -> DatasetHeader:
    with gzip.open(Path(path), "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> DatasetHeader:
    if fh.read(len(MAGIC)) != MAGIC:
        raise DatasetFormatError(f"{path} is not a clip dataset")
    block = _read_block(fh)
    if block is None:
        raise DatasetFormatError(f"{path} has no header")
    return DatasetHeader.from_json(json.loads(block))


def iter_clips(path) -> Iterator[Clip]:
    path = Path(path)
    try:
        fh = gzip.open(path, "rb")
    except OSError as exc:
        raise OSError(f"reading dataset {path}: {exc}") from exc
    with fh:
        header = _read_header(fh, path)
        shape = (header.frames, header.channels, header.height, header.width)
        size = int(np.prod(shape))
        while True:
            block = _read_block(fh)
            if block is None:
                return
            raw = fh.read(size)
            if len(raw) != size:
                raise DatasetFormatError(f"{path}: truncated frames")
            frames = np.frombuffer(raw, dtype=np.uint8).reshape(shape).astype(np.float32) / np.float32(255.0)
            yield _clip(json.loads(block), frames)


def read_clips(path) -> tuple[DatasetHeader, list[Clip]]:
    return read_header(path), list(iter_clips(path))
