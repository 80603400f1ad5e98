import hashlib
import json

import pytest

from vologan.cli import main


def digests(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_dataset_synth_files_and_reproducible(tmp_path, capsys):
    assert main(["dataset-synth", "--out", str(tmp_path / "a"), "--n", "8", "--size", "32", "--seed", "3"]) == 0
    assert main(["dataset-synth", "--out", str(tmp_path / "b"), "--n", "8", "--size", "32", "--seed", "3"]) == 0
    a = digests(tmp_path / "a")
    assert len([k for k in a if k.endswith(".vrgd")]) == 16
    assert "synthetic.manifest" in a and "target.manifest" in a
    assert a == digests(tmp_path / "b")
    assert "synthetic: 8 samples" in capsys.readouterr().out


def test_dataset_synth_bad_size(tmp_path, capsys):
    assert main(["dataset-synth", "--out", str(tmp_path), "--size", "60"]) == 1
    assert "multiple" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1


def test_missing_config_is_io_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_inspect_full(capsys):
    assert main(["inspect", "--config", "configs/full.json"]) == 0
    out = capsys.readouterr().out
    assert "generator: total=40,202,341" in out
    assert "total=39,390,917 non_trainable=14,276" in out
    assert "total=9,385,686 non_trainable=5,640" in out
    assert "delta_total=" in out


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--only", "exp", "instance_norm"]) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == 2
    assert main(["gradcheck", "--only", "no_such_case"]) == 1


def test_hist_and_pointcloud(tmp_path, capsys):
    main(["dataset-synth", "--out", str(tmp_path), "--n", "1", "--size", "16", "--levels", "2"])
    sample = tmp_path / "target" / "sample_00000.vrgd"
    assert main(["eval", "hist", "--sample", str(sample), "--bins", "8", "--out", str(tmp_path / "h.csv")]) == 0
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,r,g,b,d" and len(lines) == 9
    assert sum(int(ln.split(",")[-1]) for ln in lines[1:]) == 16 * 16
    assert main(["eval", "pointcloud", "--sample", str(sample), "--out", str(tmp_path / "p.ply")]) == 0
    assert (tmp_path / "p.ply").read_text().startswith("ply\nformat ascii 1.0\n")
    (tmp_path / "bad.vrgd").write_bytes(b"XXXX")
    assert main(["eval", "hist", "--sample", str(tmp_path / "bad.vrgd")]) == 2


def test_train_translate_and_pca(tmp_path, capsys):
    data = tmp_path / "data"
    main(["dataset-synth", "--out", str(data), "--n", "8", "--size", "16", "--levels", "2"])
    cfg = {
        "generator": {"input_size": [16, 16], "levels": 2, "base_channels": 4, "channel_cap": 16,
                      "attention_level": 8, "attention_max_positions": 64},
        "discriminator": {"input_size": [16, 16], "encoder_stages": 2, "base_channels": 4, "channel_cap": 16,
                          "attention_max_positions": 64},
        "schedule_g": {"target_lr": 0.002, "warmup_epochs": 1, "total_epochs": 4},
        "schedule_d": {"target_lr": 0.001, "warmup_epochs": 1, "total_epochs": 4},
        "epochs": 2, "batch_size": 2,
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    run = tmp_path / "run"
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--run-dir", str(run),
                 "--synthetic", str(data / "synthetic.manifest"), "--target", str(data / "target.manifest"),
                 "--set", "loss.epoch_sw=0"]) == 0
    assert json.loads((run / "config.json").read_text())["loss"]["epoch_sw"] == 0
    assert main(["translate", "--checkpoint", str(run / "checkpoints" / "epoch_0002"),
                 "--manifest", str(data / "synthetic.manifest"), "--out", str(tmp_path / "out")]) == 0
    assert len(list((tmp_path / "out").glob("*.vrgd"))) == 8
    capsys.readouterr()
    assert main(["eval", "pca", "--run", str(run), "--n", "8", "--k", "3", "--json", str(tmp_path / "p.json")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("before: domain_distance=")
    assert "domain_distance decreased:" in out
    assert set(json.loads((tmp_path / "p.json").read_text())) == {"before", "after", "input"}
