import gzip

import numpy as np
import pytest

from naogat.boxes import iou
from naogat.dataset import DatasetFormatError, DatasetHeader, iter_clips, read_clips, read_header, write_clips
from naogat.synth import (
    DetectorNoise, SceneConfig, generate_clip, hidden_indices, simulate_detector, simulate_world, split_clips,
)
from conftest import tiny_scene


def test_generation_is_deterministic():
    cfg = SceneConfig()
    a, b = generate_clip(cfg, 7), generate_clip(cfg, 7)
    np.testing.assert_array_equal(a.frames, b.frames)
    assert a.detections == b.detections and a.target == b.target
    assert not np.array_equal(a.frames, generate_clip(cfg, 8).frames)
    assert not np.array_equal(a.frames, generate_clip(SceneConfig(seed=1), 7).frames)


def test_clip_invariants():
    cfg = SceneConfig()
    for i in range(40):
        clip = generate_clip(cfg, i)
        extras = clip.extras
        assert clip.target.ttc == pytest.approx((extras["contact_frame"] - (cfg.frames - 1)) / cfg.fps)
        assert 0.25 <= clip.target.ttc <= 1.75
        x1, y1, x2, y2 = clip.target.box
        assert 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1
        assert clip.target.verb == cfg.verb_for(clip.target.noun, extras["bucket"])
        assert clip.frames.shape == (8, 3, 56, 56) and clip.frames.dtype == np.float32
        assert all(len(ds) == cfg.max_detections for ds in clip.detections)


def test_verb_rule_couples_noun_and_speed():
    cfg = SceneConfig()
    table = np.array(cfg.verb_rule)
    assert table.shape == (cfg.num_nouns, 2)
    # every verb reachable, and the noun is needed: each bucket column is a bijection
    assert sorted(table[:, 0]) == list(range(cfg.num_verbs)) == sorted(table[:, 1])
    assert np.all(table[:, 0] != table[:, 1])


def test_noise_free_detector_returns_ground_truth():
    cfg = SceneConfig()
    world = simulate_world(cfg, np.random.default_rng([0, 3]))
    sets = simulate_detector(world, DetectorNoise(0.0, 0.0, 0.0), np.random.default_rng(0), 8)
    for t, ds in enumerate(sets):
        real = ds.real
        assert len(real) == len(world.nouns) + 1 and all(d.score == 1.0 for d in real)
        truth = {tuple(np.round(b, 12)) for b in world.object_boxes[t]} | {tuple(np.round(world.actor_boxes[t], 12))}
        assert {tuple(np.round(d.box, 12)) for d in real} == truth


def test_full_drop_gives_dummy_sets():
    world = simulate_world(SceneConfig(), np.random.default_rng([0, 4]))
    sets = simulate_detector(world, DetectorNoise(0.0, 1.0, 0.0), np.random.default_rng(0), 8)
    assert all(not ds.real for ds in sets)


def test_jitter_degrades_iou_monotonically():
    cfg = SceneConfig()
    means = []
    for sigma in (0.0, 0.02, 0.05):
        ious = []
        for i in range(60):
            world = simulate_world(cfg, np.random.default_rng([0, i]))
            sets = simulate_detector(world, DetectorNoise(sigma, 0.0, 0.0), np.random.default_rng([1, i]), 8)
            truth = list(world.object_boxes[-1]) + [world.actor_boxes[-1]]
            ious += [max(iou(d.box, t) for t in truth) for d in sets[-1].real]
        means.append(np.mean(ious))
    assert means[0] == pytest.approx(1.0) and means[0] > means[1] > means[2]


def test_nao_is_nearest_object_and_visible():
    cfg = SceneConfig()
    for i in range(30):
        world = simulate_world(cfg, np.random.default_rng([0, i]))
        actor = world.actor_boxes[-1]
        centres = (world.object_boxes[-1, :, :2] + world.object_boxes[-1, :, 2:]) / 2
        gap = np.linalg.norm(centres - (actor[:2] + actor[2:]) / 2, axis=1)
        assert np.argmin(gap) == world.nao and world.visible[-1, world.nao]
        assert len(set(world.nouns)) == len(world.nouns)


def test_labels_are_not_skewed_by_rejection_sampling():
    cfg = SceneConfig()
    worlds = [simulate_world(cfg, np.random.default_rng([0, i])) for i in range(400)]
    buckets = np.array([w.bucket for w in worlds])
    horizons = np.bincount([w.horizon for w in worlds], minlength=cfg.horizon[1] + 1)[cfg.horizon[0]:]
    # binomial 3-sigma bands around the uniform expectation
    assert abs(buckets.mean() - 0.5) < 3 * np.sqrt(0.25 / 400)
    expected = 400 / len(horizons)
    assert np.all(np.abs(horizons - expected) < 3 * np.sqrt(expected))
    fast = [w for w in worlds if w.bucket]
    assert any(w.horizon == cfg.horizon[1] for w in fast)


def test_hidden_indices_exact_count():
    flags = hidden_indices(1000, 0.125)
    assert sum(flags) == 125
    assert sum(hidden_indices(8, 0.125)) == 1 and sum(hidden_indices(7, 0.125)) == 0


def test_split_variants():
    cfg = tiny_scene()
    standard = list(split_clips(cfg, 16, 8))
    assert all(c.target.nao_present for _, c in standard)
    ids = [c.clip_id for _, c in standard]
    assert len(set(ids)) == len(ids) == 24
    hidden = list(split_clips(cfg, 16, 8, "nao_hidden", 0.125))
    flagged = [c for _, c in hidden if not c.target.nao_present]
    assert len(flagged) == 3
    for clip in flagged:
        nao_box_seen = any(d.box == clip.target.box for d in clip.detections[-1].real)
        assert not nao_box_seen and clip.target.box == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        list(split_clips(cfg, 0, 1))


def test_scene_config_round_trip():
    cfg = SceneConfig(seed=5, noise=DetectorNoise(0.02, 0.1, 0.0))
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SceneConfig(horizon=(0, 3))


# -- dataset files -------------------------------------------------------------
def header_for(cfg):
    return DatasetHeader(cfg.frames, 3, cfg.canvas, cfg.canvas, cfg.max_detections, ["a"] * cfg.num_nouns,
                         ["v"] * cfg.num_verbs, cfg.to_dict(), {})


def test_dataset_round_trip_is_exact(tmp_path):
    cfg = tiny_scene()
    clips = [generate_clip(cfg, i, hide_nao=i == 2) for i in range(4)]
    path = tmp_path / "clips.gz"
    assert write_clips(path, header_for(cfg), clips) == 4
    header, back = read_clips(path)
    assert header == read_header(path)
    for a, b in zip(clips, back):
        np.testing.assert_array_equal(a.frames, b.frames)
        assert (a.detections, a.target, a.clip_id, a.fps, a.extras) == (b.detections, b.target, b.clip_id, b.fps,
                                                                         b.extras)
    assert [c.clip_id for c in iter_clips(path)] == [c.clip_id for c in clips]


def test_dataset_bytes_are_stable(tmp_path):
    cfg = tiny_scene()
    for name in ("a.gz", "b.gz"):
        write_clips(tmp_path / name, header_for(cfg), [generate_clip(cfg, i) for i in range(3)])
    assert (tmp_path / "a.gz").read_bytes() == (tmp_path / "b.gz").read_bytes()


def test_dataset_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.gz"
    with gzip.open(bad, "wb") as fh:
        fh.write(b"not a dataset")
    with pytest.raises(DatasetFormatError):
        read_header(bad)
    cfg = tiny_scene()
    good = tmp_path / "good.gz"
    write_clips(good, header_for(cfg), [generate_clip(cfg, 0)])
    truncated = tmp_path / "cut.gz"
    with gzip.open(good) as fh:
        data = fh.read()
    with gzip.open(truncated, "wb") as fh:
        fh.write(data[:-10])
    with pytest.raises(DatasetFormatError):
        read_clips(truncated)
