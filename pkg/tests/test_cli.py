import csv
import json

import numpy as np
import pytest

from vair.cli import main
from vair.io import load_cloud
from vair.metrics import REPORT_SCHEMA

TINY = {
    "synth": {"points_per_scene": 1500},
    "model": {"scene_latent": 16, "trans_latent": 4, "grid": 8, "widths": [8, 4]},
    "pipeline": {"n_points": 2000},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.json").write_text(json.dumps(TINY))
    return root


@pytest.fixture(scope="module")
def dataset(work):
    assert main(["gen", "--config", str(work / "tiny.json"), "--scenes", "3", "--seed", "7",
                 "--out", str(work / "ds")]) == 0
    return work / "ds"


@pytest.fixture(scope="module")
def trained(work, dataset):
    assert main(["train", "--config", str(work / "tiny.json"), "--data", str(dataset), "--epochs", "4",
                 "--checkpoint-every", "2", "--threads", "1", "--out", str(work / "run")]) == 0
    return work / "run"


@pytest.fixture(scope="module")
def capture(work):
    assert main(["sim", "--scene", "64", "--coverage", "0.3", "--out", str(work / "cap")]) == 0
    return work / "cap"


def test_gen_layout_and_determinism(work, dataset):
    idx = json.loads((dataset / "dataset.json").read_text())
    assert len(idx["scenes"]) == 3 and all((dataset / s / "meta.json").exists() for s in idx["scenes"])
    assert main(["gen", "--config", str(work / "tiny.json"), "--scenes", "3", "--seed", "7",
                 "--out", str(work / "ds2")]) == 0
    for f in sorted(dataset.rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (work / "ds2" / f.relative_to(dataset)).read_bytes()


def test_gen_sixty_four_scenes(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"points_per_scene": 200}}))
    assert main(["gen", "--config", str(cfg), "--scenes", "64", "--seed", "7", "--out", str(tmp_path / "ds")]) == 0
    assert len([d for d in (tmp_path / "ds").iterdir() if d.is_dir()]) == 64


@pytest.mark.parametrize("argv", [
    ["gen", "--scenes", "0", "--out", "x"],
    ["gen", "--scenes", "2"],
    ["train", "--data", "/nonexistent", "--out", "x"],
    ["infer", "--manifest", "/nonexistent.json", "--out", "x"],
    ["eval", "--pred", "a.ply", "--out", "x"],
    ["sim", "--scene", "-1", "--out", "x"],
    ["gen", "--threads", "0", "--scenes", "1", "--out", "x"],
    ["bogus"],
    ["infer", "--aspp-only", "--depth-only"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_unknown_config_key_exit_2(tmp_path):
    for doc in ({"bogus": 1}, {"synth": {"bogus": 1}}, {"synth": []}):
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert main(["gen", "--config", str(tmp_path / "c.json"), "--scenes", "1", "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_1(tmp_path):
    (tmp_path / "manifest.json").write_text("{}")
    assert main(["infer", "--manifest", str(tmp_path / "manifest.json"), "--aspp-only",
                 "--out", str(tmp_path / "o")]) == 1


def test_train_outputs(trained):
    assert (trained / "model.vckp").exists()
    assert {p.name for p in trained.glob("ckpt_*.vckp")} == {"ckpt_0002.vckp", "ckpt_0004.vckp"}
    with open(trained / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "loss_scene", "loss_trans", "loss_total"]
    assert len(rows) == 12
    tot = [float(r["loss_total"]) for r in rows]
    assert np.mean(tot[-3:]) < np.mean(tot[:3])


def test_train_resume(work, dataset, trained):
    assert main(["train", "--config", str(work / "tiny.json"), "--data", str(dataset), "--epochs", "5",
                 "--resume", str(trained / "ckpt_0004.vckp"), "--out", str(work / "resumed")]) == 0
    with open(work / "resumed" / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 15 and rows[12]["step"] == "12"


def test_infer_vair_and_aspp(work, trained, capture):
    out = work / "inf"
    assert main(["infer", "--config", str(work / "tiny.json"), "--manifest", str(capture / "manifest.json"),
                 "--checkpoint", str(trained / "model.vckp"), "--threshold", "10", "--out", str(out)]) == 0
    for name in ("transparent.ply", "scene.ply", "trans_grid.vgrd", "scene_grid.vgrd", "infer.json"):
        assert (out / name).exists()
    assert len(load_cloud(out / "transparent.ply")) > 0
    summary = json.loads((out / "infer.json").read_text())
    assert summary["arm"] == "vair" and len(summary["loss_trace"]) == 26

    assert main(["infer", "--manifest", str(capture / "manifest.json"), "--aspp-only",
                 "--out", str(work / "aspp")]) == 0
    info = json.loads((work / "aspp" / "infer.json").read_text())
    assert info["arm"] == "aspp" and info["transparent_points"] == info["aspp_points"] > 0


def test_infer_latent_mismatch_exit_2(work, trained, capture, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"scene_latent": 256}}))
    assert main(["infer", "--config", str(tmp_path / "c.json"), "--manifest", str(capture / "manifest.json"),
                 "--checkpoint", str(trained / "model.vckp"), "--out", str(tmp_path / "o")]) == 2


def test_eval_pred_equals_gt(capture, tmp_path):
    gt = capture / "gt_glass.ply"
    assert main(["eval", "--pred", str(gt), str(gt), "--gt", str(capture), str(gt), "--names", "a", "b",
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    for rep in doc["per_scene"].values():
        assert rep["iou_masked"] == rep["iou_unmasked"] == 1.0 and rep["cd_l1"] == 0.0
    assert doc["average"]["iou_masked"] == 1.0
    jsonschema = pytest.importorskip("jsonschema")
    for rep in doc["per_scene"].values():
        jsonschema.validate(rep, REPORT_SCHEMA)
    lines = (tmp_path / "report.txt").read_text().splitlines()
    assert [ln.split()[0] for ln in lines[1:]] == ["a", "b", "Average"]


def test_sim_writes_capture(capture):
    meta = json.loads((capture / "meta.json").read_text())
    assert meta["index"] == 64 and meta["coverage"] == 0.3
    for name in ("manifest.json", "pings.csv", "scene.ply", "gt_glass.ply"):
        assert (capture / name).exists()
