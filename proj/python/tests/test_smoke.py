import json
import math
import pathlib

import numpy as np
import pytest

nca_arc = pytest.importorskip("nca_arc")

DATA = pathlib.Path(__file__).resolve().parents[2] / "data" / "arc" / "training"


def identity_task():
    rng = np.random.default_rng(2024)
    grids = [rng.integers(0, 10, size=(4, 4)).tolist() for _ in range(3)]
    return nca_arc.Task("identity", [(g, g) for g in grids], [(grids[1], grids[1])])


def test_parameter_count_and_blocks():
    spec = nca_arc.ModelSpec()
    assert spec.parameter_count == 10102
    params = nca_arc.init_params(spec, seed=1)
    blocks = params.blocks()
    assert blocks["perception_kernel"].shape == (24, 30, 3, 3)
    assert sum(b.size for b in blocks.values()) == params.size == 10102
    assert params == nca_arc.init_params(spec, seed=1)


def test_task_parsing_and_filter():
    task = nca_arc.load_task(DATA / "3aa6fb7a.json")
    assert task.id == "3aa6fb7a"
    assert len(task.train) == 2
    assert nca_arc.classify(task) == "feasible"
    assert nca_arc.classify(nca_arc.load_task(DATA / "007bbfb7.json")) == "size_mismatch"
    with pytest.raises(nca_arc.DataError):
        nca_arc.parse_task('{"train": [], "test": []}')

    counts = nca_arc.filter_directory(DATA)
    assert (counts["size_mismatch"], counts["color_novel"], counts["feasible"]) == (138, 90, 172)


def test_lr_schedule():
    cfg = nca_arc.TrainConfig()
    assert nca_arc.lr_at(0, cfg) == pytest.approx(0.002)
    assert nca_arc.lr_at(cfg.epochs, cfg) == pytest.approx(0.0001)


def test_train_infer_checkpoint_roundtrip(tmp_path):
    cfg = nca_arc.TrainConfig()
    cfg.epochs = 200
    cfg.trials_per_example = 16
    seen = []
    result = nca_arc.train_task(identity_task(), config=cfg, on_epoch=lambda e, loss: seen.append(loss) or True)
    assert len(result.losses) == len(seen) == 200
    assert result.final_loss < 0.01

    report = nca_arc.evaluate_task(result.params, identity_task())
    assert report["solved"]

    path = tmp_path / "model.ckpt"
    nca_arc.save_checkpoint(path, result.params, cfg.digest())
    loaded = nca_arc.load_checkpoint(path)
    assert loaded == result.params
    grid = identity_task().train[0]["input"]
    assert nca_arc.infer(loaded, grid) == nca_arc.infer(result.params, grid) == grid

    path.write_bytes(b"not a checkpoint")
    with pytest.raises(nca_arc.CheckpointError):
        nca_arc.load_checkpoint(path)


def test_early_stop():
    cfg = nca_arc.TrainConfig()
    cfg.epochs = 50
    cfg.trials_per_example = 2
    result = nca_arc.train_task(identity_task(), config=cfg, on_epoch=lambda e, loss: e < 4)
    assert len(result.losses) == 5


def test_gradcheck():
    report = nca_arc.grad_check(4)
    assert report["instances"] == 4
    assert report["max_rel_error"] < 1e-6


def test_spiral_and_render(tmp_path):
    task = json.loads((DATA / "28e73c20.json").read_text())
    for pair in task["train"] + task["test"]:
        out = pair["output"]
        assert nca_arc.spiral(len(out), len(out[0])) == out
    assert nca_arc.render_ascii([[0, 1], [2, 3]]) == "01\n23\n"
    png = tmp_path / "g.png"
    nca_arc.render_png([[[1, 2], [3, 4]]], 4, png)
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    acc = nca_arc.scaled_spiral_check(nca_arc.init_params(seed=2), 20, 5)
    assert 0.0 <= acc <= 1.0 and not math.isnan(acc)
