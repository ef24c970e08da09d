"""Offline next-active-object box annotation for clips that only carry a noun label.

For the last observed frame of each clip:

1. if the object detector already found the labelled noun, its best box is used;
2. otherwise every active-object box from a hand-object detector is cropped
   and re-classified, and the first one whose top-3 classes contain the noun
   is used;
3. otherwise the object is marked absent.

Only the location is curated; the noun always comes from the clip's label.
Detectors are plain callables, so fixtures or files can stand in for models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .boxes import area
from .structures import Box

TOP_K = 3
OUTCOMES = ("matched_direct", "matched_fallback", "absent")

# redetect(clip_id, roi_index, roi_box) -> [(class_id, score), ...]
Redetector = Callable[[str, int, Box], Sequence[tuple[int, float]]]


class CurationError(RuntimeError):
    def __init__(self, clip_id: str, cause: Exception):
        super().__init__(f"curation failed for {clip_id}: {cause}")
        self.clip_id = clip_id


@dataclass(frozen=True)
class RawDetection:
    box: Box
    class_id: int
    score: float


@dataclass
class CurationRecord:
    clip_id: str
    last_frame: str
    gt_noun: int
    raw_detections: list[RawDetection] = field(default_factory=list)
    hand_object_boxes: list[Box] = field(default_factory=list)
    outcome: Optional[str] = None
    nao_box: Optional[Box] = None

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "last_frame": self.last_frame,
            "gt_noun": self.gt_noun,
            "raw_detections": [{"box": list(d.box), "class": d.class_id, "score": d.score}
                               for d in self.raw_detections],
            "hand_object_boxes": [list(b) for b in self.hand_object_boxes],
            "outcome": self.outcome,
            "nao_box": None if self.nao_box is None else list(self.nao_box),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CurationRecord":
        raws = [RawDetection(tuple(d["box"]), int(d["class"]), float(d["score"]))
                for d in data.get("raw_detections", [])]
        nao_box = data.get("nao_box")
        return cls(data["clip_id"], data.get("last_frame", ""), int(data["gt_noun"]), raws,
                   [tuple(b) for b in data.get("hand_object_boxes", [])], data.get("outcome"),
                   None if nao_box is None else tuple(nao_box))


def curate(record: CurationRecord, redetect: Redetector, top_k: int = TOP_K) -> CurationRecord:
    """Annotated copy of ``record``; any previous outcome is recomputed from the inputs."""
    direct = [d for d in record.raw_detections if d.class_id == record.gt_noun]
    if direct:
        best = max(direct, key=lambda d: (d.score, float(area(d.box))))
        return _annotated(record, "matched_direct", best.box)
    for i, box in enumerate(record.hand_object_boxes):
        try:
            ranked = sorted(redetect(record.clip_id, i, box), key=lambda cs: -cs[1])
        except Exception as exc:
            raise CurationError(record.clip_id, exc) from exc
        if record.gt_noun in [int(c) for c, _ in ranked[:top_k]]:
            return _annotated(record, "matched_fallback", box)
    return _annotated(record, "absent", None)


def _annotated(record: CurationRecord, outcome: str, box) -> CurationRecord:
    return CurationRecord(record.clip_id, record.last_frame, record.gt_noun, list(record.raw_detections),
                          list(record.hand_object_boxes), outcome, None if box is None else tuple(box))


def summarize(records: Iterable[CurationRecord], errors: Sequence[dict] = ()) -> dict:
    counts = {k: 0 for k in OUTCOMES}
    for r in records:
        counts[r.outcome] += 1
    total = sum(counts.values())
    return {**counts, "total": total, "absent_fraction": counts["absent"] / total if total else 0.0,
            "errors": list(errors)}


def read_records(path) -> list[CurationRecord]:
    lines = Path(path).read_text().splitlines()
    return [CurationRecord.from_json(json.loads(line)) for line in lines if line.strip()]


def write_records(path, records: Iterable[CurationRecord]) -> None:
    text = "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)
    Path(path).write_text(text)


def curate_dataset(records_path, redetect: Redetector, out_path) -> dict:
    """Curate every record of a JSON-lines file; failures are reported, not fatal."""
    annotated, errors = [], []
    for record in read_records(records_path):
        try:
            annotated.append(curate(record, redetect))
        except CurationError as exc:
            errors.append({"clip_id": exc.clip_id, "error": str(exc)})
    write_records(out_path, annotated)
    return summarize(annotated, errors)


class FixtureRedetector:
    """Re-detection answers read from a JSON mapping ``clip_id -> [[class, score], ...] per ROI``."""

    def __init__(self, table: dict):
        self.table = table

    @classmethod
    def load(cls, path) -> "FixtureRedetector":
        return cls(json.loads(Path(path).read_text()))

    def __call__(self, clip_id: str, roi_index: int, roi_box: Box):
        try:
            answers = self.table[clip_id][roi_index]
        except (KeyError, IndexError):
            raise LookupError(f"no fixture answer for {clip_id} ROI {roi_index}") from None
        return [(int(c), float(s)) for c, s in answers]
