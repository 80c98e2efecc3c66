import json
import math
import os

import pytest

import urbanverse as uv


def test_version_and_default_config():
    assert uv.__version__
    cfg = uv.default_config()
    assert cfg["k"] == 8 and cfg["l"] == 4
    assert cfg["dim"] == 144 and cfg["steps"] == 100
    assert cfg["prior"] == "retrieved"


def test_posterior_coeffs_sum_to_one():
    for t in (2, 37, 100):
        g0, g1, g2, beta_tilde = uv.posterior_coeffs(100, 1e-4, 0.02, t)
        assert abs(g0 + g1 + g2 - 1.0) < 1e-12
        assert beta_tilde > 0.0


def test_compute_metrics():
    r = uv.compute_metrics([1.0, 2.0, 4.0], [1.0, 2.0, 3.0])
    assert r["n"] == 3
    assert r["mae"] == pytest.approx(1.0 / 3.0)
    assert r["rmse"] == pytest.approx(math.sqrt(1.0 / 3.0))
    assert r["r2"] == pytest.approx(0.5)
    degenerate = uv.compute_metrics([1.0, 2.0], [5.0, 5.0])
    assert degenerate["r2"] is None


def test_kde_integrates_to_one():
    grid, density, bandwidth = uv.kde([0.0, 0.5, 1.0, 1.5, 2.0])
    assert bandwidth > 0.0
    step = grid[1] - grid[0]
    mass = sum(density) * step
    assert mass == pytest.approx(1.0, abs=2e-2)


def test_unknown_config_key_rejected(tmp_path):
    with pytest.raises(uv.ConfigError):
        uv.pretrain(str(tmp_path / "enc"), str(tmp_path / "city"), banana=3)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("uvrun")
    city = str(base / "city")
    enc = str(base / "enc")
    emb = str(base / "emb")
    agg = str(base / "agg")
    model = str(base / "model")
    uv.synth(city, width=1500, height=1500, regions_x=4, regions_y=4,
             num_tasks=2, latent_classes=3, seed=0)
    common = dict(k=3, l=2, dim=16, heads=2, enc_layers=1, dec_layers=1)
    uv.pretrain(enc, city, pretrain_epochs=2, lr_pre=1e-3, batch_size=16, **common)
    uv.embed(emb, city, enc)
    uv.aggregate(agg, city, emb)
    uv.train(model, city, agg, steps=8, diff_epochs=25, dn_dim=16,
             retrieval_k=3, holdout=0.25, batch_size=16, **common)
    return base


def test_pipeline_artifacts(small_run):
    assert (small_run / "city" / "grid.json").exists()
    assert (small_run / "enc" / "encoder.ckpt").exists()
    assert (small_run / "agg" / "embeddings.csv").exists()
    assert (small_run / "model" / "model.ckpt").exists()
    split = json.loads((small_run / "model" / "split.json").read_text())
    assert len(split["train"]) + len(split["test"]) == 16


def test_predict_and_evaluate(small_run):
    pred = str(small_run / "pred")
    uv.predict(pred, str(small_run / "model"), str(small_run / "agg"), samples=4)
    rows = uv.read_predictions(os.path.join(pred, "predictions.csv"))
    split = json.loads((small_run / "model" / "split.json").read_text())
    assert {r["region_id"] for r in rows} == set(split["test"])
    assert all(len(r["samples"]) == 4 for r in rows)
    assert {r["task_id"] for r in rows} == {0, 1}

    out = str(small_run / "eval")
    uv.evaluate(out, pred, str(small_run / "city"))
    report = json.loads((small_run / "eval" / "metrics.json").read_text())
    assert len(report["tasks"]) == 2
    for task in report["tasks"]:
        assert task["n"] == len(split["test"])


def test_deterministic_rerun(small_run):
    a = str(small_run / "pred_a")
    b = str(small_run / "pred_b")
    for out in (a, b):
        uv.predict(out, str(small_run / "model"), str(small_run / "agg"),
                   samples=3, seed=11)
    bytes_a = (small_run / "pred_a" / "predictions.csv").read_bytes()
    bytes_b = (small_run / "pred_b" / "predictions.csv").read_bytes()
    assert bytes_a == bytes_b


def test_missing_artifact_names_producer(small_run, tmp_path):
    with pytest.raises(uv.DataError, match="urbanverse aggregate"):
        uv.train(str(tmp_path / "m"), str(small_run / "city"),
                 str(tmp_path / "nowhere"), diff_epochs=2)
