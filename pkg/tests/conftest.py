import numpy as np
import pytest

from naogat.config import RunConfig
from naogat.model import NAOGAT, Batch
from naogat.synth import SceneConfig, generate_clip

TINY = dict(frames=4, image_size=14, grid=2, max_detections=4, num_queries=4, dim=8, heads=2, mlp_hidden=16,
            encoder_layers=1, nao_layers=1, motion_layers=1, num_nouns=5, num_verbs=4)


def tiny_config(**overrides) -> RunConfig:
    return RunConfig(**{**TINY, **overrides})


def tiny_scene(**overrides) -> SceneConfig:
    base = dict(canvas=14, frames=4, num_nouns=5, num_verbs=4, max_detections=4, min_objects=2, max_objects=3)
    base.update(overrides)
    return SceneConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_clips():
    scene = tiny_scene()
    return [generate_clip(scene, i) for i in range(3)]


@pytest.fixture
def tiny_model(tiny_cfg):
    return NAOGAT(tiny_cfg)


@pytest.fixture
def tiny_batch(tiny_clips):
    return Batch.from_clips(tiny_clips)
