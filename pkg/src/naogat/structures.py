"""Clip-level records shared by the generator, the model and the evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

Box = tuple[float, float, float, float]
DUMMY_BOX: Box = (0.0, 0.0, 0.0, 0.0)


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    class_id: Optional[int] = None
    is_dummy: bool = False

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if x1 > x2 or y1 > y2:
            raise ValidationError(f"malformed box {self.box}: corners out of order")
        if min(self.box) < 0.0 or max(self.box) > 1.0:
            raise ValidationError(f"box {self.box} is not normalised to [0, 1]")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")
        if self.is_dummy and (tuple(self.box) != DUMMY_BOX or self.score != 0.0):
            raise ValidationError("dummy detection must have a zero box and zero score")

    @classmethod
    def dummy(cls) -> "Detection":
        return cls(DUMMY_BOX, 0.0, None, True)

    def vector(self) -> list[float]:
        return [*self.box, self.score]


@dataclass(frozen=True)
class DetectionSet:
    """Exactly Q detections: real ones by descending score, then dummies."""

    detections: tuple[Detection, ...]

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    @property
    def real(self) -> list[Detection]:
        return [d for d in self.detections if not d.is_dummy]

    def as_array(self) -> np.ndarray:
        return np.array([d.vector() for d in self.detections], dtype=np.float64).reshape(-1, 5)

    def real_mask(self) -> np.ndarray:
        return np.array([not d.is_dummy for d in self.detections], dtype=bool)


def pad_detections(raw, q: int) -> DetectionSet:
    """Keep the top-``q`` real detections by score and pad with dummies to ``q``."""
    if q < 1:
        raise ValidationError("Q must be at least 1")
    real = [d for d in raw if not d.is_dummy]
    # stable sort keeps input order among equal scores
    real = sorted(real, key=lambda d: -d.score)[:q]
    return DetectionSet(tuple(real) + tuple(Detection.dummy() for _ in range(q - len(real))))


@dataclass(frozen=True)
class STATarget:
    box: Box
    noun: int
    verb: int
    ttc: float
    nao_present: bool = True

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if x1 > x2 or y1 > y2:
            raise ValidationError(f"malformed target box {self.box}")
        if self.nao_present and not self.ttc > 0:
            raise ValidationError("time to contact must be positive when the object is present")


@dataclass
class Clip:
    frames: np.ndarray  # (T, C, H0, W0) float32 in [0, 1]
    detections: list[DetectionSet]
    target: STATarget
    clip_id: str
    fps: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValidationError(f"frames must be (T, C, H, W), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValidationError("a clip needs at least two frames")
        if len(self.detections) != self.frames.shape[0]:
            raise ValidationError("one detection set per frame is required")
        if not self.fps > 0:
            raise ValidationError("fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def prefix(self, length: int) -> "Clip":
        """The first ``length`` observed frames (the target is left unchanged)."""
        if not 2 <= length <= self.num_frames:
            raise ValidationError(f"prefix length {length} outside [2, {self.num_frames}]")
        return Clip(self.frames[:length], self.detections[:length], self.target, self.clip_id, self.fps)
