import numpy as np
import pytest

from vologan import training as TR
from vologan.config import RunConfig, load_config
from vologan.data import synth_toy_dataset
from vologan.models import state_arrays
from vologan.tensor import Tensor


def tiny_config(run_dir, **overrides):
    base = {
        "generator": {"input_size": [16, 16], "levels": 2, "base_channels": 4, "channel_cap": 16,
                      "attention_level": 8, "attention_max_positions": 64},
        "discriminator": {"input_size": [16, 16], "encoder_stages": 2, "base_channels": 4, "channel_cap": 16,
                          "attention_max_positions": 64},
        "schedule_g": {"target_lr": 0.002, "warmup_epochs": 1, "total_epochs": 6},
        "schedule_d": {"target_lr": 0.001, "warmup_epochs": 1, "total_epochs": 6},
        "epochs": 3, "batch_size": 2, "run_dir": str(run_dir), "checkpoint_every": 1, "test_every": 2,
    }
    base.update(overrides)
    return RunConfig.from_dict(base)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    return synth_toy_dataset(tmp_path_factory.mktemp("tiny"), 8, 16, np.random.default_rng(0))


def batch(manifest, idx):
    return np.stack([manifest.load_scaled(i) for i in idx])


def test_train_step_finite(tmp_path, tiny_data):
    state = TR.init_state(tiny_config(tmp_path))
    row = TR.train_step(state, batch(tiny_data[0], [0, 1]), batch(tiny_data[1], [0, 1]), np.random.default_rng(0))
    for key in ("adv_g", "cyc", "ide", "ssim", "total_g", "d_lowlevel", "d_layout", "d_content", "total_d"):
        assert np.isfinite(row[key])
    assert row["total_g"] == pytest.approx(row["adv_g"] + 10 * row["cyc"] + 0.5 * row["ide"] + row["ssim"], rel=1e-5)
    assert row["total_d"] == pytest.approx(2 * row["d_lowlevel"] + row["d_layout"] + row["d_content"], rel=1e-5)
    assert state.step == 1


def test_zero_lambda_drops_term(tmp_path, tiny_data):
    cfg = tiny_config(tmp_path, loss={"lambda_ide": 0.0})
    state = TR.init_state(cfg)
    s, t = Tensor(batch(tiny_data[0], [0, 1])), Tensor(batch(tiny_data[1], [0, 1]))
    gen = TR.generator_pass(state, s, t, 0, False, None)
    r = gen.report.scalars()
    assert r["ide"] == 0.0
    assert r["total_g"] == pytest.approx(r["adv_g"] + 10 * r["cyc"] + r["ssim"], rel=1e-6)


def test_discriminator_loss_does_not_reach_generators(tmp_path, tiny_data):
    state = TR.init_state(tiny_config(tmp_path))
    s, t = Tensor(batch(tiny_data[0], [0, 1])), Tensor(batch(tiny_data[1], [0, 1]))
    gen = TR.generator_pass(state, s, t, 0, True, np.random.default_rng(0))
    for m in state.models.values():
        m.zero_grad()
    total, _ = TR.discriminator_pass(state, s, t, gen.fake_s, gen.fake_t, True, np.random.default_rng(0))
    total.backward()
    assert all(p.grad is None or not p.grad.any() for p in state.G_ST.parameters())
    assert any(p.grad is not None and p.grad.any() for p in state.D_T.parameters())


def test_update_order_generators_first(tmp_path, tiny_data):
    state = TR.init_state(tiny_config(tmp_path))
    before = {k: {n: a.copy() for n, a in state_arrays(m).items()} for k, m in state.models.items()}
    TR.train_step(state, batch(tiny_data[0], [0, 1]), batch(tiny_data[1], [0, 1]), np.random.default_rng(0))
    for name, model in state.models.items():
        changed = any(not np.array_equal(before[name][n], a) for n, a in state_arrays(model).items())
        assert changed, name
    assert state.optimizers["G_ST"].kind == "nadam" and state.optimizers["D_S"].kind == "sgd"


def test_checkpoint_round_trip_bitwise(tmp_path, tiny_data):
    state = TR.init_state(tiny_config(tmp_path))
    TR.train_step(state, batch(tiny_data[0], [0, 1]), batch(tiny_data[1], [0, 1]), np.random.default_rng(0))
    TR.save_checkpoint(state, tmp_path / "ck")
    back = TR.load_checkpoint(tmp_path / "ck")
    for name in TR.MODEL_NAMES:
        a, b = state_arrays(state.models[name]), state_arrays(back.models[name])
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].tobytes() == b[k].tobytes(), (name, k)
        for p, slots in state.optimizers[name].slots.items():
            for s, arr in slots.items():
                assert arr.tobytes() == back.optimizers[name].slots[p][s].tobytes()
    assert back.step == state.step and back.optimizers["G_ST"].step == 1
    TR.save_checkpoint(back, tmp_path / "ck2")
    for f in (tmp_path / "ck").glob("*.vten"):
        assert f.read_bytes() == (tmp_path / "ck2" / f.name).read_bytes()


def test_load_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        TR.load_checkpoint(tmp_path)


def test_zero_epochs(tmp_path, tiny_data):
    cfg = tiny_config(tmp_path, epochs=0)
    TR.train(cfg, *tiny_data)
    assert TR.read_metrics(cfg.metrics) == []
    assert (cfg.checkpoints / "epoch_0000" / "manifest.json").exists()


def test_train_rows_checkpoints_and_resume(tmp_path, tiny_data):
    full = tiny_config(tmp_path / "full")
    TR.train(full, *tiny_data)
    rows = TR.read_metrics(full.metrics)
    assert [r["phase"] for r in rows].count("train") == 3 * 3
    assert [(r["phase"], r["epoch"]) for r in rows if r["phase"] == "test"] == [("test", "0"), ("test", "2")]
    assert sorted(p.name for p in full.checkpoints.iterdir()) == [f"epoch_{i:04d}" for i in range(4)]

    again = tiny_config(tmp_path / "again")
    TR.train(again, *tiny_data)
    assert again.metrics.read_bytes() == full.metrics.read_bytes()

    resumed = tiny_config(tmp_path / "resumed")
    TR.train(tiny_config(tmp_path / "resumed", epochs=1), *tiny_data)
    TR.train(resumed, *tiny_data, resume=resumed.checkpoints / "epoch_0001")
    assert resumed.metrics.read_bytes() == full.metrics.read_bytes()


def test_train_rejects_size_mismatch(tmp_path, tiny_data):
    cfg = load_config("configs/toy.json", {"run_dir": str(tmp_path)})
    with pytest.raises(ValueError, match="match"):
        TR.train(cfg, *tiny_data)


def test_translate_shapes(tmp_path, tiny_data):
    state = TR.init_state(tiny_config(tmp_path))
    out = TR.translate(state.G_ST, batch(tiny_data[0], range(5)), batch_size=2)
    assert out.shape == (5, 4, 16, 16)
    assert out.min() >= 0 and out.max() <= 1
    with pytest.raises(ValueError):
        TR.translate(state.G_ST, np.zeros((1, 3, 16, 16)))
