import math

import numpy as np
import pytest

import crt


def small_config(seed=0):
    cfg = crt.Config()
    cfg.seed = seed
    for key, value in {
        "data.n_classes": 8,
        "data.samples_per_class": 4,
        "data.dim": 8,
        "branch1.prototypes": 3,
        "branch1.hidden": 8,
        "branch1.embedding_dim": 6,
        "branch2.prototypes": 4,
        "branch2.hidden": 8,
        "branch2.embedding_dim": 6,
        "train.epochs": 2,
        "train.steps_per_epoch": 3,
        "train.batch_classes": 3,
        "train.batch_per_class": 2,
        "eval.ks": "1,2",
    }.items():
        cfg.set(key, value)
    return cfg


def residual_reference(x, c):
    flat = x.reshape(-1, x.shape[-1])
    w = np.logaddexp(0.0, flat @ c.T)  # [HW, K]
    return np.stack([(w[:, k : k + 1] * (flat - c[k])).sum(axis=0) for k in range(c.shape[0])])


def test_encode_residuals_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(3, 2, 4))
    c = rng.uniform(-2, 2, size=(5, 4))
    np.testing.assert_allclose(crt.encode_residuals(x, c), residual_reference(x, c), atol=1e-10)
    corr = crt.correlation_map(x, c)
    assert corr.shape == (5, 3, 2)
    np.testing.assert_allclose(corr[1, 2, 0], x[2, 0] @ c[1], atol=1e-12)


def test_worked_loss_and_metric_values():
    assert round(crt.diversity_loss(np.array([[1.0, 0.0], [1.0, 1.0]])), 6) == 0.707107
    same = np.array([[1.0, 0.0], [0.5, math.sqrt(0.75)]])
    assert round(crt.ms_loss(same, [0, 0]), 6) == 0.656631
    points = np.array([[0, 0], [0, 2], [10, 0], [10, 2]], dtype=float)
    assert abs(crt.embedding_space_density(points, [0, 0, 1, 1])["density"] - 0.198039) < 1e-6
    assert abs(crt.spectral_decay(np.diag([3.0, 1.0]), center=False)["rho"] - 0.143841) < 1e-6
    assert crt.recall_at_k(np.array([[1, 0], [0.9, 0.1], [0, 1], [0.1, 0.9]]), [0, 0, 1, 1], [1]) == [1.0]
    a = np.eye(2)
    assert crt.consistency_loss(a, a) == 0.0


def test_errors_are_typed():
    with pytest.raises(crt.ShapeError):
        crt.encode_residuals(np.zeros((2, 2)), np.ones((1, 2)))
    with pytest.raises(crt.ConfigError):
        crt.Config().set("no.such.key", 1)
    with pytest.raises(crt.DegenerateError):
        crt.embedding_space_density(np.eye(2), [0, 1])
    with pytest.raises(crt.IoError):
        crt.load_model("/nonexistent/model.bin")
    assert issubclass(crt.ConfigError, crt.Error)


def test_config_round_trip():
    cfg = small_config(5)
    back = crt.Config.from_text(cfg.to_text())
    assert back.to_text() == cfg.to_text()
    assert back.seed == 5
    assert "branch1.prototypes" in crt.Config.keys()
    cfg.set("model.share_head_weights", True)
    assert "model.share_head_weights = true" in cfg.to_text()


def test_generate_dataset_shapes():
    data = crt.generate_dataset(small_config())
    assert data["features"].shape == (32, 4, 4, 8)
    assert len(data["labels"]) == 32
    assert (data["part_cells"].reshape(32, -1).sum(axis=1) == 3).all()


def test_train_evaluate_is_deterministic(tmp_path):
    cfg = small_config(2)
    model, history = crt.train(cfg)
    _, again = crt.train(cfg)
    assert history == again
    assert len(history) == 6
    assert all(math.isfinite(h["loss"]) for h in history)
    reports = crt.evaluate(model, cfg)
    assert len(reports) == 2
    assert 0.0 <= reports[0]["recall"][0] <= reports[0]["recall"][1] <= 1.0
    assert abs(sum(reports[0]["spectral"]["spectrum"]) - 1.0) < 1e-10

    path = str(tmp_path / "model.bin")
    model.save(path)
    loaded = crt.load_model(path)
    assert loaded.parameter_count == model.parameter_count
    np.testing.assert_array_equal(loaded.prototypes(2), model.prototypes(2))
    features = crt.generate_dataset(cfg)["features"][:5]
    for a, b in zip(loaded.embed(features), model.embed(features)):
        np.testing.assert_array_equal(a, b)


def test_grad_check_passes():
    report = crt.grad_check(small_config(1), coords_per_group=4)
    assert report["passed"]
    assert report["max_relative_error"] < 1e-4
    assert "branch1.prototypes" in report["groups"]
