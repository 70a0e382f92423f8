import json
import math

import numpy as np
import pytest

import trifuse

TINY = {
    "seed": 5,
    "data": {
        "num_identities": 6,
        "train_per_identity": 8,
        "val_per_identity": 2,
        "test_per_identity": 3,
        "dims": {"face": 10, "gesture": 12, "voice": 8},
    },
    "model": {
        "num_classes": 6,
        "input_dims": {"face": 10, "gesture": 12, "voice": 8},
        "hidden_dim": 16,
        "feature_dim": 8,
        "attention_tokens": 2,
        "confidence_hidden": 4,
        "gate_hidden": 6,
        "fusion_hidden": 12,
        "correction_hidden": 8,
    },
    "train": {"epochs": 2, "batch_size": 8},
}


def test_default_config():
    cfg = trifuse.default_config()
    assert cfg["model"]["gate_hidden"] == 240
    assert cfg["model"]["input_dims"] == {"face": 512, "gesture": 768, "voice": 256}


def test_softmax_shift():
    x = np.array([1.0, -2.0, 0.5, 3.0])
    p = trifuse.softmax(x)
    assert abs(p.sum() - 1.0) < 1e-15
    assert np.max(np.abs(p - trifuse.softmax(x + 100.0))) < 1e-12


def test_fusion_examples():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    c = np.array([0.0, 0.0, 1.0])
    mean = trifuse.confidence_weighted_fusion(a, b, c, 0.4, 0.4, 0.4)
    assert np.allclose(mean, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)
    fused = trifuse.confidence_weighted_fusion(a, b, c, 0.9, 0.3, 0.3)
    assert np.allclose(fused, [0.818182, 0.090909, 0.090909], atol=1e-6)
    assert np.array_equal(trifuse.ensemble(a, b), [0.5, 0.5, 0.0])


def test_losses():
    assert abs(trifuse.focal_loss(np.zeros(4), 2, 0.0) - math.log(4.0)) < 1e-15
    assert trifuse.uncertainty_weighted_total([2.0], [0.0]) == 1.0
    with pytest.raises(IndexError):
        trifuse.focal_loss(np.zeros(3), 7)


def test_bad_config():
    with pytest.raises(trifuse.ConfigError):
        trifuse.generate_data("unused", {"model": {"bogus": 1}})


def test_grad_check():
    r = trifuse.grad_check(seed=1, module="decision")
    assert r["checked"] > 0
    assert r["max_relative_error"] <= 1e-4


def test_end_to_end(tmp_path):
    counts = trifuse.generate_data(tmp_path / "data", TINY)
    assert counts[0] > 0 and counts[2] > 0
    report = trifuse.train(tmp_path / "data", tmp_path / "run", TINY)
    assert len(report["masks"]) == 7
    again = trifuse.evaluate(tmp_path / "run" / "checkpoint.bin", tmp_path / "data")
    assert again == report
    assert json.loads((tmp_path / "run" / "config.json").read_text())["seed"] == 5

    model = trifuse.Model(str(tmp_path / "run" / "checkpoint.bin"))
    rng = np.random.default_rng(0)
    face, gesture, voice = rng.normal(size=10), rng.normal(size=12), rng.normal(size=8)
    p = model.predict(face, gesture, voice)
    assert sorted(p["ranking"]) == list(range(6))
    assert p["ranking"][0] == int(np.argmax(p["p_final"]))
    only_face = model.predict(face, np.array([]), np.array([]))
    assert only_face["ranking"] == model.predict(face, gesture, voice, mask="face")["ranking"]
    with pytest.raises(ValueError):
        model.predict(np.array([]), np.array([]), np.array([]))
