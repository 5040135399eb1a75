import json
import math

import numpy as np
import pytest

import ddp


def tiny_overrides(tmp_path, **extra):
    values = {
        "image_size": 16,
        "train_count": 8,
        "val_count": 3,
        "encoder_width": 6,
        "fpn_channels": 6,
        "cond_channels": 6,
        "decoder_depth": 2,
        "decoder_width": 8,
        "time_embed_dim": 8,
        "embed_dim": 4,
        "batch_size": 2,
        "total_steps": 4,
        "self_aligned_steps": 1,
        "log_interval": 1,
        "eval_interval": 2,
        "checkpoint_interval": 2,
        "output_dir": str(tmp_path / "run"),
    }
    values.update(extra)
    return values


def test_schedule_endpoints():
    assert abs(ddp.alpha_bar(0.5) - 0.5) < 1e-2
    assert ddp.alpha_bar(1.0) < 1e-6
    grid = [ddp.alpha_bar(t / 99) for t in range(100)]
    assert all(a >= b for a, b in zip(grid, grid[1:]))
    gamma = ddp.log_snr(0.3, "linear")
    assert ddp.alpha_bar(0.3, "linear") == pytest.approx(1 / (1 + math.exp(-gamma)))


def test_time_pairs():
    pairs = [t for pair in ddp.time_pairs(3, 1) for t in pair]
    assert pairs == pytest.approx([1.0, 1 / 3, 2 / 3, 0.0, 1 / 3, 0.0])


def test_ddim_transport():
    rng = np.random.default_rng(0)
    z0 = rng.normal(size=(4, 3, 3)) * 0.1
    eps = rng.normal(size=(4, 3, 3))
    stepped = ddp.ddim_step(ddp.corrupt(z0, 0.7, eps), z0, 0.7, 0.2)
    assert np.max(np.abs(stepped - ddp.corrupt(z0, 0.2, eps))) < 1e-9


@pytest.mark.parametrize("strategy", ["onehot", "analog_bits", "embedding"])
def test_codec_roundtrip(strategy):
    codec = ddp.Codec(strategy, num_classes=19)
    assert all(codec.roundtrip_label(k) == k for k in range(19))
    labels = np.arange(12, dtype=np.int32).reshape(3, 4) % 19
    encoded = codec.encode_labels(labels)
    assert encoded.shape == (codec.channels, 3, 4)
    assert np.all(np.abs(encoded) <= codec.scale + 1e-12)
    # Decoding takes per-class logits, so a one-hot logit map recovers the labels.
    logits = np.stack([(labels == k).astype(float) for k in range(19)])
    assert np.array_equal(codec.decode(logits), labels)


def test_generators_and_metrics():
    images, labels = ddp.gen_segmentation(seed=1, count=2, size=32)
    assert images.shape == (2, 3, 32, 32)
    assert labels.shape == (2, 32, 32)
    assert ddp.miou(labels[0], labels[0], 4)["miou"] == 1.0
    _, depths = ddp.gen_depth(seed=1, count=1, size=32)
    m = ddp.depth_metrics(depths[0] * 1.26, depths[0])
    assert m["delta1"] == 0.0
    assert m["delta2"] == 1.0
    assert m["rel"] == pytest.approx(0.26)


def test_errors_map_to_python_exceptions():
    with pytest.raises(ddp.ValidationError):
        ddp.train({"no_such_key": 1})
    with pytest.raises(ddp.DomainError):
        ddp.Codec("onehot", num_classes=4).encode_labels(np.full((2, 2), 7, dtype=np.int32))
    with pytest.raises(ddp.IoError):
        ddp.Predictor("/nonexistent/final.ckpt")


def test_train_predict_evaluate(tmp_path):
    result = ddp.train(tiny_overrides(tmp_path))
    assert result["steps"] == 4
    assert len(result["losses"]) == 4
    predictor = ddp.Predictor(result["final_checkpoint"])
    assert predictor.step == 4
    images, _ = ddp.gen_segmentation(seed=5, count=1, size=16)
    out = predictor.predict(images[0], steps=3, seed=2)
    assert out["decoder_calls"] == 3
    assert len(out["trajectory"]) == 3
    assert out["final"].shape == (16, 16)
    assert predictor.encode_calls == 1
    again = predictor.predict(images[0], steps=3, seed=2)
    assert np.array_equal(out["final"], again["final"])
    record = predictor.evaluate(steps=2)
    assert record["decoder_calls_per_image"] == 2.0
    assert 0.0 <= record["miou"] <= 1.0


def test_cli_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv("DDP_OUTPUT_ROOT", str(tmp_path))
    sets = []
    for key, value in tiny_overrides(tmp_path, output_dir="runs/cli").items():
        sets += ["--set", f"{key}={value}"]
    code, out, err = ddp.run_cli(["train", *sets, "--quiet"])
    assert code == 0, err
    summary = json.loads(out)
    assert summary["final_checkpoint"].startswith(str(tmp_path))
    code, _, err = ddp.run_cli(["train", "--set", "bogus=1"])
    assert code == 1
    assert "bogus" in err
