"""Object queries, NAO decoder and head, object motion, motion decoder."""

import math

import numpy as np
import pytest

from naogat import autodiff as ad
from naogat.autodiff import Tensor
from naogat.layers import residual_output_layers, sinusoidal_1d
from naogat.motion import MotionDecoder, causal_mask
from naogat.nao import NAODecoder, NAOHead, ObjectQueryBuilder, roi_pool_weights
from naogat.omd import ObjectMotion, splat_weights

D, G = 8, 4


def zero_residuals(module):
    for layer in residual_output_layers(module):
        layer.weight.data[:] = 0
        layer.bias.data[:] = 0


def boxes_and_mask(*boxes, q=3):
    arr = np.zeros((q, 4))
    if boxes:
        arr[: len(boxes)] = boxes
    real = np.arange(q) < len(boxes)
    return arr, real


# -- object queries -------------------------------------------------------
def test_queries_without_detections_are_learnable_tokens(rng):
    builder = ObjectQueryBuilder(D, 3, G, rng)
    grid = Tensor(rng.normal(size=(G, G, D)))
    q = builder(grid, *boxes_and_mask())
    np.testing.assert_array_equal(q.queries.data, builder.query_tokens.data)
    assert not q.is_roi.any()


def test_full_frame_box_pools_global_mean(rng):
    builder = ObjectQueryBuilder(D, 3, G, rng)
    grid = rng.normal(size=(G, G, D)).astype(np.float32)
    q = builder(Tensor(grid), *boxes_and_mask((0.0, 0.0, 1.0, 1.0)))
    expected = builder.roi_proj(Tensor(grid.reshape(-1, D).mean(0))).data
    np.testing.assert_allclose(q.queries.data[0], expected, rtol=1e-5)
    np.testing.assert_array_equal(q.is_roi, [True, False, False])
    np.testing.assert_array_equal(q.queries.data[1:], builder.query_tokens.data[1:])


def test_single_cell_box_pools_that_cell(rng):
    builder = ObjectQueryBuilder(D, 3, G, rng)
    grid = rng.normal(size=(G, G, D)).astype(np.float32)
    q = builder(Tensor(grid), *boxes_and_mask((0.25, 0.5, 0.5, 0.75), (0.6, 0.6, 0.6, 0.6)))
    np.testing.assert_allclose(q.queries.data[0], builder.roi_proj(Tensor(grid[2, 1])).data, rtol=1e-5)
    # zero-area box falls back to the cell holding its centre
    np.testing.assert_allclose(q.queries.data[1], builder.roi_proj(Tensor(grid[2, 2])).data, rtol=1e-5)


def test_roi_weights_rows_sum_to_one(rng):
    lo = rng.uniform(0, 0.7, size=(5, 2))
    boxes = np.concatenate([lo, lo + rng.uniform(0.01, 0.3, size=(5, 2))], axis=1)
    w, is_roi, source = roi_pool_weights(boxes, np.ones(5, bool), G, 6)
    np.testing.assert_allclose(w[:5].sum(-1), 1.0)
    assert w[5].sum() == 0 and is_roi.tolist() == [True] * 5 + [False]
    np.testing.assert_array_equal(source[:5], boxes)


# -- NAO decoder and head ---------------------------------------------------
def test_nao_decoder_residual_identity_and_shape(rng):
    dec = NAODecoder(D, 2, 16, 2, rng)
    queries, memory = Tensor(rng.normal(size=(5, D))), Tensor(rng.normal(size=(7, D)))
    assert dec(queries, memory).shape == (5, D)
    zero_residuals(dec)
    np.testing.assert_array_equal(dec(queries, memory).data, queries.data)


def test_nao_decoder_permutation_equivariance(rng):
    dec = NAODecoder(D, 2, 16, 2, rng)
    queries, memory = rng.normal(size=(5, D)), Tensor(rng.normal(size=(7, D)))
    perm = np.array([0, 1, 4, 2, 3])
    out = dec(Tensor(queries), memory).data
    np.testing.assert_allclose(dec(Tensor(queries[perm]), memory).data, out[perm], rtol=1e-5, atol=1e-6)


def test_nao_head_examples(rng):
    head = NAOHead(D, 5, rng)
    for layer in (head.box_mlp.last, head.class_head):
        layer.weight.data[:] = 0
        layer.bias.data[:] = 0
    pred = head(Tensor(np.zeros((3, D))))
    np.testing.assert_allclose(pred.boxes.data, 0.5)
    np.testing.assert_allclose(pred.boxes_xyxy(), np.tile([0.25, 0.25, 0.75, 0.75], (3, 1)))
    assert pred.class_logits.shape == (3, 6)


def test_nao_head_reference_offset(rng):
    head = NAOHead(D, 5, rng)
    head.box_mlp.last.weight.data[:] = 0
    head.box_mlp.last.bias.data[:] = 0
    ref = np.array([[0.1, 0.2, 0.5, 0.4], [0, 0, 0, 0]])
    pred = head(Tensor(rng.normal(size=(2, D))), ref, np.array([True, False]))
    np.testing.assert_allclose(pred.boxes_xyxy()[0], ref[0], atol=1e-6)
    np.testing.assert_allclose(pred.boxes.data[1], 0.5)
    assert np.all((pred.boxes.data > 0) & (pred.boxes.data < 1))


# -- object motion -----------------------------------------------------------
def test_expand_boxes_examples(rng):
    omd = ObjectMotion(D, 2, 16, G, rng)
    boxes = np.zeros((2, 3, 4))
    boxes[:, 0] = (0.1, 0.1, 0.4, 0.3)
    real = np.zeros((2, 3), bool)
    real[:, 0] = True
    tokens = omd.expand_boxes(boxes, real).data
    assert tokens.shape == (2, 3, D)
    np.testing.assert_array_equal(tokens[0, 0], tokens[1, 0])
    assert np.all(tokens[:, 1:] == 0)


def test_attend_masks_dummies_and_single_token(rng):
    omd = ObjectMotion(D, 2, 16, G, rng)
    real = np.zeros((3, 2), bool)
    real[1, 0] = True
    tokens = Tensor(rng.normal(size=(3, 2, D)))
    out = omd.attend(tokens, real).data
    assert np.all(out[~real] == 0)
    # the lone real token only sees itself: one residual block applied to it alone
    alone = Tensor((tokens.data[1, 0] + sinusoidal_1d(3, D)[1]).reshape(1, D))
    np.testing.assert_allclose(out[1, 0], omd.block(alone).data[0], rtol=1e-5, atol=1e-6)


def test_attend_all_dummy_clip_does_not_error(rng):
    omd = ObjectMotion(D, 2, 16, G, rng)
    out = omd(np.zeros((3, 2, 4)), np.zeros((3, 2), bool))
    assert out.shape == (3, G, G, D) and np.all(out.data == 0)


def test_splat_examples():
    centre = np.array([[[0.2, 0.2, 0.3, 0.3]]])  # centre of the top-left cell of a 2x2 grid
    w = splat_weights(centre, np.array([[True]]), 2)
    np.testing.assert_allclose(w[0, :, 0], [1, 0, 0, 0])
    mid = np.array([[[0.45, 0.2, 0.55, 0.3]]])  # centre x = 0.5 between the two top cells
    np.testing.assert_allclose(splat_weights(mid, np.array([[True]]), 2)[0, :, 0], [0.5, 0.5, 0, 0])
    assert splat_weights(mid, np.array([[False]]), 2).sum() == 0


def test_sample_to_grid_moves_token_value(rng):
    omd = ObjectMotion(D, 2, 16, 2, rng)
    attended = Tensor(rng.normal(size=(1, 1, D)))
    boxes = np.array([[[0.7, 0.7, 0.8, 0.8]]])
    grid = omd.sample_to_grid(attended, boxes, np.array([[True]])).data
    np.testing.assert_allclose(grid[0, 1, 1], attended.data[0, 0], rtol=1e-6)
    assert np.all(grid[0, 0] == 0)


# -- motion decoder -----------------------------------------------------------
def test_fuse_examples(rng):
    md = MotionDecoder(D, 2, 16, 1, 4, rng)
    video = Tensor(rng.normal(size=(3, G * G, D)))
    plain = md.fuse(video, None)
    zero = md.fuse(video, Tensor(np.zeros((3, G, G, D))))
    np.testing.assert_array_equal(plain.pre_pool.data, zero.pre_pool.data)
    np.testing.assert_array_equal(plain.pre_pool.data, md.fuse_mlp(md.fuse_norm(video)).data)
    const = Tensor(np.broadcast_to(rng.normal(size=(3, 1, D)), (3, G * G, D)).copy())
    fused = md.fuse(const, None)
    np.testing.assert_allclose(fused.z_prime.data, fused.pre_pool.data[:, 5], rtol=1e-5)
    doubled = md.fuse(Tensor(video.data * 2), Tensor(np.zeros((3, G, G, D)) + 1.0))
    assert not np.allclose(doubled.z_prime.data, 2 * md.fuse(video, Tensor(np.zeros((3, G, G, D)) + 0.5)).z_prime.data)


def test_inject_nao_examples(rng):
    md = MotionDecoder(D, 2, 16, 1, 4, rng)
    z_prime = Tensor(rng.normal(size=(4, D)))
    np.testing.assert_array_equal(md.inject_nao(z_prime, Tensor(np.zeros((3, D)))).data[:-1], z_prime.data[:-1])
    md.nao_proj.bias.data[:] = 0
    np.testing.assert_allclose(md.inject_nao(z_prime, Tensor(np.zeros((3, D)))).data, z_prime.data)
    row = np.zeros((3, D))
    row[1] = rng.normal(size=D)
    out = md.inject_nao(z_prime, Tensor(row)).data
    np.testing.assert_array_equal(out[:-1], z_prime.data[:-1])
    np.testing.assert_allclose(out[-1] - z_prime.data[-1], md.nao_proj(Tensor(row[1] / 3)).data, rtol=1e-5, atol=1e-6)
    off = MotionDecoder(D, 2, 16, 1, 4, rng, inject=False)
    assert off.nao_proj is None and off.inject_nao(z_prime, Tensor(row)) is z_prime


def test_decode_is_causal(rng):
    md = MotionDecoder(D, 2, 16, 2, 4, rng)
    x = rng.normal(size=(6, D))
    base = md.decode(Tensor(x)).data
    for t in range(6):
        y = x.copy()
        y[t:] += rng.normal(size=(6 - t, D))
        np.testing.assert_array_equal(md.decode(Tensor(y)).data[:t], base[:t])
    assert base.shape == (6, D)


def test_decode_residual_identity(rng):
    md = MotionDecoder(D, 2, 16, 1, 4, rng)
    zero_residuals(md)
    x = Tensor(rng.normal(size=(5, D)))
    expected = md.out_head(x + sinusoidal_1d(5, D).astype(np.float32)).data
    np.testing.assert_allclose(md.decode(x).data, expected, rtol=1e-6)


def test_causal_mask_shape():
    np.testing.assert_array_equal(causal_mask(3), [[1, 0, 0], [1, 1, 0], [1, 1, 1]])


def test_predict_action_examples(rng):
    md = MotionDecoder(D, 2, 16, 1, 4, rng)
    md.ttc_head.bias.data[:] = 0
    verbs, ttc = md.predict_action(Tensor(np.zeros(D)))
    assert verbs.shape == (4,) and float(ttc.data) == pytest.approx(math.log(2), rel=1e-6)
    _, ttc = md.predict_action(Tensor(rng.normal(size=(50, D)) * 30))
    assert np.all(ttc.data > 0)
