"""Deterministic synthetic egocentric scenes.

A handful of coloured rectangles drift slowly across a square canvas while a
small bright "actor" square moves in a straight line, at constant speed,
towards one of them (the next active object).  The actor reaches the object's
centre ``h`` frames after the last observed frame, so the time to contact is
``h / fps``.  The verb is looked up from the object's noun and the actor's
speed bucket.

Every clip is a pure function of ``(seed, index)``: its random stream is
seeded from that pair alone, so clips can be produced in any order or in
parallel with identical results.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .boxes import iou
from .structures import Clip, Detection, STATarget, pad_detections

NOUN_NAMES = ["cup", "knife", "pan", "sponge", "bottle", "bowl", "plate", "lid", "spoon", "board"]
VERB_NAMES = ["take", "cut", "put", "wash", "open", "pour", "stir", "close", "fill", "move"]

PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
], dtype=np.uint8)
BACKGROUND = np.array([30, 30, 30], dtype=np.uint8)
ACTOR_COLOUR = np.array([255, 255, 255], dtype=np.uint8)


class GenerationError(RuntimeError):
    pass


@dataclass
class DetectorNoise:
    jitter: float = 0.01
    drop: float = 0.05
    false_positive: float = 0.1


@dataclass
class SceneConfig:
    canvas: int = 56
    frames: int = 8
    fps: float = 4.0
    min_objects: int = 3
    max_objects: int = 5
    num_nouns: int = 6
    num_verbs: int = 6
    max_detections: int = 8
    object_size: tuple[float, float] = (0.14, 0.26)
    actor_size: float = 0.08
    object_speed: float = 0.004
    slow_speed: tuple[float, float] = (0.02, 0.02)
    fast_speed: tuple[float, float] = (0.04, 0.04)
    horizon: tuple[int, int] = (1, 7)
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    verb_rule: list[list[int]] | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = DetectorNoise(**self.noise)
        for key in ("object_size", "slow_speed", "fast_speed", "horizon"):
            setattr(self, key, tuple(getattr(self, key)))
        if self.horizon[0] < 1 or self.horizon[1] < self.horizon[0]:
            raise ValueError("contact horizon must be at least one frame")
        if self.num_nouns < 2 or self.num_verbs < 2:
            raise ValueError("need at least two nouns and two verbs")
        if self.max_objects > self.num_nouns:
            raise ValueError("objects in a scene carry distinct nouns; raise num_nouns")
        if self.verb_rule is None:
            half = self.num_verbs // 2
            self.verb_rule = [[n % self.num_verbs, (n + half) % self.num_verbs] for n in range(self.num_nouns)]

    def verb_for(self, noun: int, bucket: int) -> int:
        return self.verb_rule[noun][bucket]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        return cls(**data)


@dataclass
class WorldState:
    """Ground-truth geometry per frame (normalised xyxy boxes)."""

    object_boxes: np.ndarray  # (T, K, 4)
    nouns: list[int]
    visible: np.ndarray  # (T, K) bool
    actor_boxes: np.ndarray  # (T, 4)
    nao: int
    horizon: int
    bucket: int
    speed: float


def _clip_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def _box(center, size) -> np.ndarray:
    cx, cy = center
    w, h = size
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def _inside(box, margin: float = 0.0) -> bool:
    return box[0] >= margin and box[1] >= margin and box[2] <= 1 - margin and box[3] <= 1 - margin


def simulate_world(cfg: SceneConfig, rng: np.random.Generator, max_tries: int = 500,
                   angle_tries: int = 16) -> WorldState:
    t_last = cfg.frames - 1
    times = np.arange(cfg.frames) - t_last  # 0 at the last observed frame
    # labels are drawn once so rejection sampling cannot skew their distribution
    horizon = int(rng.integers(cfg.horizon[0], cfg.horizon[1] + 1))
    bucket = int(rng.integers(2))
    speed = float(rng.uniform(*(cfg.fast_speed if bucket else cfg.slow_speed)))
    for _ in range(max_tries):
        k = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        sizes = rng.uniform(*cfg.object_size, size=(k, 2))
        centres = rng.uniform(0.15, 0.85, size=(k, 2))
        velocity = rng.uniform(-cfg.object_speed, cfg.object_speed, size=(k, 2))
        curve = rng.uniform(-cfg.object_speed, cfg.object_speed, size=(k, 2)) * 0.05
        path = centres[None] + velocity[None] * times[:, None, None] + curve[None] * times[:, None, None] ** 2
        boxes = np.stack([np.stack([_box(path[t, j], sizes[j]) for j in range(k)]) for t in range(cfg.frames)])
        if not all(_inside(b) for b in boxes.reshape(-1, 4)):
            continue
        last = boxes[-1]
        if any(iou(last[i], last[j]) > 0.05 for i in range(k) for j in range(i + 1, k)):
            continue

        nao = 0
        contact = centres[nao] + velocity[nao] * horizon + curve[nao] * horizon**2
        # several approach directions per layout; the first feasible one is kept
        for angle in rng.uniform(0, 2 * math.pi, size=angle_tries):
            direction = np.array([math.cos(angle), math.sin(angle)])
            actor = contact[None] - (horizon - times)[:, None] * speed * direction[None]
            actor_boxes = np.stack([_box(a, (cfg.actor_size, cfg.actor_size)) for a in actor])
            if not all(_inside(b, 0.02) for b in actor_boxes):
                continue
            # the target must be the object nearest to the actor when observation ends
            gap = np.linalg.norm(path[-1] - actor[-1][None], axis=1)
            if k > 1 and gap[nao] + 0.08 > np.min(np.delete(gap, nao)):
                continue
            break
        else:
            continue
        nouns = [int(n) for n in rng.permutation(cfg.num_nouns)[:k]]
        visible = np.ones((cfg.frames, k), dtype=bool)
        return WorldState(boxes, nouns, visible, actor_boxes, nao, horizon, bucket, speed)
    raise GenerationError("could not place a feasible scene")


def rasterize(world: WorldState, canvas: int) -> np.ndarray:
    frames = np.empty((world.object_boxes.shape[0], 3, canvas, canvas), dtype=np.uint8)
    frames[:] = BACKGROUND[None, :, None, None]

    def fill(t, box, colour):
        x1, y1, x2, y2 = (int(round(v * canvas)) for v in box)
        frames[t, :, max(y1, 0):max(y2, y1 + 1), max(x1, 0):max(x2, x1 + 1)] = colour[:, None, None]

    for t in range(frames.shape[0]):
        for j, noun in enumerate(world.nouns):
            if world.visible[t, j]:
                fill(t, world.object_boxes[t, j], PALETTE[noun % len(PALETTE)])
        fill(t, world.actor_boxes[t], ACTOR_COLOUR)
    return frames


def simulate_detector(world: WorldState, noise: DetectorNoise, rng: np.random.Generator, q: int):
    """Noisy per-frame detections of the objects and the actor, padded to ``q``."""
    sets = []
    for t in range(world.object_boxes.shape[0]):
        truth = [(world.object_boxes[t, j], world.nouns[j]) for j in range(len(world.nouns)) if world.visible[t, j]]
        truth.append((world.actor_boxes[t], None))
        found = []
        for i in rng.permutation(len(truth)):
            box, cls = truth[i]
            if rng.random() < noise.drop:
                continue
            err = rng.normal(0.0, noise.jitter, size=4) if noise.jitter > 0 else np.zeros(4)
            noisy = np.clip(box + err, 0.0, 1.0)
            noisy = np.array([min(noisy[0], noisy[2]), min(noisy[1], noisy[3]),
                              max(noisy[0], noisy[2]), max(noisy[1], noisy[3])])
            score = max(0.05, 1.0 - 5.0 * float(np.abs(err).mean()))
            found.append(Detection(tuple(float(v) for v in noisy), score, cls))
        if rng.random() < noise.false_positive:
            size = rng.uniform(0.08, 0.2, size=2)
            centre = rng.uniform(size / 2, 1 - size / 2)
            found.append(Detection(tuple(float(v) for v in _box(centre, size)), float(rng.uniform(0.1, 0.5)),
                                   int(rng.integers(len(PALETTE)))))
        sets.append(pad_detections(found, q))
    return sets


def generate_clip(cfg: SceneConfig, index: int, hide_nao: bool = False) -> Clip:
    """The clip for ``(cfg.seed, index)``.  ``hide_nao`` removes the target object
    from the last two observed frames, so it is absent when observation ends."""
    try:
        world = simulate_world(cfg, _clip_rng(cfg.seed, index))
    except GenerationError as exc:
        raise GenerationError(f"clip {index}: {exc}") from None
    if hide_nao:
        world.visible[-2:, world.nao] = False
    frames = rasterize(world, cfg.canvas).astype(np.float32) / np.float32(255.0)
    detections = simulate_detector(world, cfg.noise, _clip_rng(cfg.seed, index, 1), cfg.max_detections)
    noun = world.nouns[world.nao]
    present = not hide_nao
    box = tuple(float(v) for v in world.object_boxes[-1, world.nao]) if present else (0.0, 0.0, 0.0, 0.0)
    target = STATarget(box, noun, cfg.verb_for(noun, world.bucket), world.horizon / cfg.fps, present)
    extras = {"horizon": world.horizon, "bucket": world.bucket, "speed": world.speed,
              "contact_frame": cfg.frames - 1 + world.horizon}
    return Clip(frames, detections, target, f"clip-{index:06d}", cfg.fps, extras)


def hidden_indices(n: int, fraction: float) -> list[bool]:
    """Evenly spread flags: exactly ``floor(n * fraction)`` of ``n`` positions are set."""
    return [math.floor((i + 1) * fraction + 1e-9) > math.floor(i * fraction + 1e-9) for i in range(n)]


def split_clips(cfg: SceneConfig, n_train: int, n_val: int, variant: str = "standard",
                fraction: float = 0.125):
    """Yield ``(split_name, clip)``; train and val use disjoint index ranges."""
    if n_train < 1 or n_val < 1:
        raise ValueError("split sizes must be at least 1")
    if variant not in ("standard", "nao_hidden"):
        raise ValueError(f"unknown variant {variant!r}")
    for name, start, count in (("train", 0, n_train), ("val", n_train, n_val)):
        flags = hidden_indices(count, fraction) if variant == "nao_hidden" else [False] * count
        for offset in range(count):
            yield name, generate_clip(cfg, start + offset, flags[offset])
