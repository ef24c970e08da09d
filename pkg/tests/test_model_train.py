import numpy as np
import pytest

from naogat import autodiff as ad
from naogat.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from naogat.config import ConfigError, RunConfig
from naogat.model import NAOGAT, Batch, CompatibilityError, parameter_groups
from naogat.train import clip_gradients, cosine_lr, evaluate, records_from_output, train, train_step, TrainState
from conftest import tiny_config


def test_config_text_round_trip(tmp_path):
    cfg = tiny_config(seed=3, omd_enabled=False, lr=0.01)
    assert RunConfig.loads(cfg.dumps()) == cfg
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 9\nvariant = nao_hidden\n")
    loaded = RunConfig.load(path, epochs=2)
    assert (loaded.seed, loaded.variant, loaded.epochs) == (9, "nao_hidden", 2)


@pytest.mark.parametrize("text", ["dim = 0", "heads = 3", "bogus = 1", "dim 64", "omd_enabled = maybe",
                                  "encoder_attention = windowed"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.loads(text)


def test_forward_shapes(tiny_model, tiny_batch, tiny_cfg):
    out = tiny_model(tiny_batch)
    b, t = len(tiny_batch), tiny_cfg.frames
    n = tiny_cfg.grid ** 2 + tiny_cfg.max_detections
    assert out.tokens.shape == (b, t, n, tiny_cfg.dim)
    assert out.nao.boxes.shape == (b, tiny_cfg.num_queries, 4)
    assert out.nao.class_logits.shape == (b, tiny_cfg.num_queries, tiny_cfg.num_nouns + 1)
    assert out.z_hat.shape == (b, t, tiny_cfg.dim)
    assert out.verb_logits.shape == (b, tiny_cfg.num_verbs) and out.ttc.shape == (b,)
    assert np.all(out.ttc.data > 0)


def test_batched_forward_equals_per_clip(tiny_model, tiny_clips):
    together = tiny_model(Batch.from_clips(tiny_clips)).z_hat.data
    for i, clip in enumerate(tiny_clips):
        alone = tiny_model(Batch.from_clips([clip])).z_hat.data[0]
        np.testing.assert_allclose(alone, together[i], rtol=1e-4, atol=1e-5)


def test_model_is_causal_in_decoder_input(tiny_model, tiny_batch):
    out = tiny_model(tiny_batch)
    x = out.decoder_input.data[:1]
    base = tiny_model.motion.decode(ad.Tensor(x)).data
    for t in range(x.shape[1] - 1):
        y = x.copy()
        y[:, t + 1:] += 1.0
        np.testing.assert_array_equal(tiny_model.motion.decode(ad.Tensor(y)).data[:, : t + 1], base[:, : t + 1])


@pytest.mark.parametrize("flag,group", [("omd_enabled", "omd"), ("nao_decoder_enabled", "nao_decoder.")])
def test_ablation_flags_remove_parameters(flag, group, tiny_batch):
    full = NAOGAT(tiny_config())
    ablated = NAOGAT(tiny_config(**{flag: False}))
    assert any(k.startswith(group) for k in full.state_dict())
    assert not any(k.startswith(group) for k in ablated.state_dict())
    out = ablated(tiny_batch)
    assert np.isfinite(out.verb_logits.data).all()


def test_injection_flag(tiny_batch):
    model = NAOGAT(tiny_config(nao_injection_enabled=False))
    out = model(tiny_batch)
    np.testing.assert_array_equal(out.decoder_input.data, out.fused.z_prime.data)
    assert "motion.nao_proj.weight" not in model.state_dict()


def test_parameter_groups_cover_model(tiny_model):
    groups = parameter_groups(tiny_model)
    total = sum(len(v) for v in groups.values())
    assert total == len(tiny_model.parameters())


def test_state_dict_round_trip_and_compatibility(tmp_path, tiny_model, tiny_batch):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tiny_model.state_dict(), {"note": "x"})
    state, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    other = NAOGAT(tiny_config(seed=99))
    other.load_state_dict(state)
    np.testing.assert_array_equal(other(tiny_batch).z_hat.data, tiny_model(tiny_batch).z_hat.data)
    with pytest.raises(CompatibilityError):
        NAOGAT(tiny_config(dim=16)).load_state_dict(state)
    with pytest.raises(CompatibilityError):
        NAOGAT(tiny_config(omd_enabled=False)).load_state_dict(state)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(Exception):
        load_checkpoint(path)
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk")


def test_clip_gradients_scales_to_max_norm():
    p = ad.Parameter([3.0, 4.0], name="p")
    p.grad = np.array([3.0, 4.0], dtype=np.float32)
    assert clip_gradients([p], 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(p.grad) == pytest.approx(1.0, rel=1e-6)


def test_cosine_schedule():
    assert cosine_lr(1.0, 0, 100, warmup=10) == pytest.approx(0.1)
    assert cosine_lr(1.0, 10, 100, warmup=10) == pytest.approx(1.0)
    assert cosine_lr(1.0, 100, 100, warmup=10) == pytest.approx(0.0)


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
def test_train_step_reduces_loss_on_fixed_batch(optimizer, tiny_batch):
    cfg = tiny_config(optimizer=optimizer, lr=0.003 if optimizer == "adam" else 0.01)
    model, state = NAOGAT(cfg), TrainState()
    first = train_step(model, tiny_batch, cfg, state)["total"]
    for _ in range(15):
        last = train_step(model, tiny_batch, cfg, state)["total"]
    assert last < first and state.step == 16


def test_training_is_deterministic(tiny_clips):
    cfg = tiny_config(epochs=2, batch_size=2)
    a, rep_a, st_a = train(cfg, tiny_clips, tiny_clips[:2])
    b, rep_b, st_b = train(cfg, tiny_clips, tiny_clips[:2])
    assert rep_a == rep_b and st_a.history == st_b.history
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(v, b.state_dict()[k])


def test_records_and_evaluate(tiny_model, tiny_clips):
    batch = Batch.from_clips(tiny_clips)
    records = records_from_output(tiny_model(batch), batch, tiny_clips)
    assert len(records) == 3 and all(len(r.predictions) == tiny_model.cfg.num_queries for r in records)
    for r in records:
        confs = [p.confidence for p in r.predictions]
        assert confs == sorted(confs, reverse=True) and all(0 <= c <= 1 for c in confs)
        assert len({(p.verb, p.ttc) for p in r.predictions}) == 1
        assert all(0 <= v <= 1 for p in r.predictions for v in p.box)
    report, _, logits = evaluate(tiny_model, tiny_clips, batch_size=2)
    assert report["num_clips"] == 3 and logits.shape == (3, tiny_model.cfg.num_verbs)
