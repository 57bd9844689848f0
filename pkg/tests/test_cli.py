"""End-to-end command line workflow tests, run in process via main()."""

import json
import sys

import numpy as np
import pytest

from pixelcause.classifiers import classify, load_classifier
from pixelcause.cli import main
from pixelcause.config import RunConfig, load_config
from pixelcause.evaluation import iou, pointing_game
from pixelcause.imaging import save_saliency_json
from pixelcause.synthetic import DISEASED, load_dataset

# External classifier speaking the line protocol: probability is a
# sigmoid (tanh form avoids overflow) of mean brightness around a
# reference level passed on the command line.
SUBPROCESS_SCRIPT = """\
import base64, json, math, struct, sys

m0 = float(sys.argv[1])
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    req = json.loads(line)
    raw = base64.b64decode(req["pixels_b64"])
    vals = struct.unpack("<%df" % (len(raw) // 4), raw)
    z = 80.0 * (sum(vals) / len(vals) - m0)
    p = 0.5 * (1.0 + math.tanh(z / 2.0))
    print(json.dumps({"id": req["id"], "probability": p}), flush=True)
"""

EXPLAIN_ARTIFACTS = ("explanation.json", "report.txt", "saliency.png",
                     "saliency.json", "segment_map.png", "segment_map.json",
                     "perturbations.csv", "resolved_config.json")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared dataset and trained classifier for the workflow tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(root / "ds"), "--count", "40",
                 "--seed", "11", "--size", "128"]) == 0
    assert main(["train", "--dataset", str(root / "ds"),
                 "--out", str(root / "desk.json"),
                 "--model", "logistic", "--seed", "0"]) == 0
    assert main(["generate", "--out", str(root / "eval_ds"), "--count", "10",
                 "--seed", "12"]) == 0
    return root


def first_positive_item(dataset_dir, classifier_path):
    handle = load_classifier(classifier_path)
    for item in load_dataset(dataset_dir):
        if item.truth.label == DISEASED \
                and classify(handle, item.x).probability >= 0.5:
            return item
    raise AssertionError("no diseased item classified positive")


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", "--out", str(out), "--count", "6",
                     "--seed", "3"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "dataset.json" in names
    assert "resolved_config.json" in names
    assert sum(n.endswith(".png") for n in names) == 12
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_generate_rejects_bad_arguments(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "x"), "--count", "0",
                 "--seed", "1"]) == 2
    assert main(["generate", "--out", str(tmp_path / "x"), "--count", "4",
                 "--disease-ratio", "1.5"]) == 2


def test_train_reports_validation_accuracy(workspace, capsys):
    out = workspace / "desk2.json"
    assert main(["train", "--dataset", str(workspace / "ds"),
                 "--out", str(out), "--model", "logistic",
                 "--seed", "4"]) == 0
    assert "val_acc=" in capsys.readouterr().out
    handle = load_classifier(out)
    assert handle.input_size == (128, 128)


def test_train_single_class_dataset_fails(tmp_path):
    ds = tmp_path / "allpos"
    assert main(["generate", "--out", str(ds), "--count", "8", "--seed", "2",
                 "--disease-ratio", "1.0"]) == 0
    assert main(["train", "--dataset", str(ds),
                 "--out", str(tmp_path / "clf.json")]) == 4


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "clf.json")]) == 3


def test_explain_writes_all_artifacts(workspace, tmp_path):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    out = tmp_path / "expl"
    rc = main(["explain",
               "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
               "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
               "--classifier", str(workspace / "desk.json"),
               "--out", str(out)])
    assert rc == 0
    for name in EXPLAIN_ARTIFACTS:
        assert (out / name).exists(), name
    payload = json.loads((out / "explanation.json").read_text())
    assert payload["original"]["label"] == "diseased"
    assert payload["original"]["probability"] >= 0.5
    assert payload["segments"]["count"] >= 1
    assert (out / "perturbations.csv").read_text().startswith("Seg01")
    report = (out / "report.txt").read_text()
    assert "Causal equation" in report
    assert load_config(out / "resolved_config.json") == RunConfig()


def test_explain_missing_contrast(workspace, tmp_path):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    rc = main(["explain",
               "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
               "--contrast", str(workspace / "ds" / "absent.png"),
               "--classifier", str(workspace / "desk.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 3


def test_explain_missing_classifier(workspace, tmp_path):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    rc = main(["explain",
               "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
               "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
               "--classifier", str(workspace / "gone.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 3


def test_explain_bad_config_overrides(workspace, tmp_path, capsys):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    base = ["explain",
            "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
            "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
            "--classifier", str(workspace / "desk.json"),
            "--out", str(tmp_path / "o")]
    assert main(base + ["--set", "min_seg=10"]) == 2
    assert "min_seg" in capsys.readouterr().err
    assert main(base + ["--set", "num_samples"]) == 2
    assert main(base + ["--set", "regression_type='linear'"]) == 2


def test_explain_healthy_image_not_positive(workspace, tmp_path):
    handle = load_classifier(workspace / "desk.json")
    for item in load_dataset(workspace / "ds"):
        if item.truth.label != DISEASED \
                and classify(handle, item.x).probability < 0.5:
            rc = main(["explain",
                       "--image",
                       str(workspace / "ds" / f"{item.item_id}_x.png"),
                       "--contrast",
                       str(workspace / "ds" / f"{item.item_id}_xp.png"),
                       "--classifier", str(workspace / "desk.json"),
                       "--out", str(tmp_path / "o")])
            assert rc == 1
            return
    raise AssertionError("no healthy item classified negative")


def test_explain_subprocess_classifier(workspace, tmp_path):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    m0 = (float(item.x.mean()) + float(item.x_prime.mean())) / 2.0
    script = tmp_path / "clf.py"
    script.write_text(SUBPROCESS_SCRIPT)
    out = tmp_path / "expl"
    rc = main(["explain",
               "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
               "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
               "--classifier-cmd", f"{sys.executable} {script} {m0}",
               "--out", str(out)])
    assert rc == 0
    payload = json.loads((out / "explanation.json").read_text())
    assert payload["original"]["probability"] > 0.5
    assert payload["counterfactuals"], "full replacement should flip the class"


def test_explain_workers_env(workspace, tmp_path, monkeypatch):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    base = ["explain",
            "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
            "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
            "--classifier", str(workspace / "desk.json")]
    assert main(base + ["--out", str(tmp_path / "w1")]) == 0
    monkeypatch.setenv("PIXELCAUSE_WORKERS", "2")
    assert main(base + ["--out", str(tmp_path / "w2")]) == 0
    assert (tmp_path / "w1" / "explanation.json").read_bytes() \
        == (tmp_path / "w2" / "explanation.json").read_bytes()
    monkeypatch.setenv("PIXELCAUSE_WORKERS", "zero")
    assert main(base + ["--out", str(tmp_path / "w3")]) == 2
    monkeypatch.setenv("PIXELCAUSE_WORKERS", "0")
    assert main(base + ["--out", str(tmp_path / "w4")]) == 2


def test_explain_repeat_runs_byte_identical(workspace, tmp_path):
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    base = ["explain",
            "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
            "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
            "--classifier", str(workspace / "desk.json")]
    assert main(base + ["--out", str(tmp_path / "r1")]) == 0
    assert main(base + ["--out", str(tmp_path / "r2")]) == 0
    for name in EXPLAIN_ARTIFACTS:
        assert (tmp_path / "r1" / name).read_bytes() \
            == (tmp_path / "r2" / name).read_bytes(), name


def test_evaluate_with_classifier(workspace, tmp_path):
    out = tmp_path / "ev"
    rc = main(["evaluate", "--dataset", str(workspace / "eval_ds"),
               "--classifier", str(workspace / "desk.json"),
               "--out", str(out), "--chart"])
    assert rc == 0
    payload = json.loads((out / "aggregate.json").read_text())
    assert payload["n"] + len(payload["skipped"]) == 5
    assert payload["n"] >= 2
    for entry in payload["skipped"]:
        assert set(entry) == {"item_id", "reason"}
    assert 0.0 <= payload["pointing_game"]["mean"] <= 1.0
    assert 0.0 <= payload["iou"]["mean"] <= 1.0
    lines = (out / "scores.csv").read_text().splitlines()
    assert lines[0] == "item_id,pointing_hits,pointing_misses,pointing_score,iou"
    assert len(lines) == payload["n"] + 1
    assert (out / "chart.svg").exists()


def test_evaluate_with_external_saliency(workspace, tmp_path):
    sal_dir = tmp_path / "sal"
    sal_dir.mkdir()
    diseased = [item for item in load_dataset(workspace / "eval_ds")
                if item.truth.label == DISEASED]
    expected_pointing, expected_iou = [], []
    for item in diseased:
        heat = np.zeros(item.x.shape)
        for target in item.truth.targets:
            heat[target.mask] = 1.0
        save_saliency_json(heat, sal_dir / f"{item.item_id}.json")
        masks = [target.mask for target in item.truth.targets]
        expected_pointing.append(pointing_game(heat, masks).score)
        expected_iou.append(iou(heat, masks))
    out = tmp_path / "ev"
    rc = main(["evaluate", "--dataset", str(workspace / "eval_ds"),
               "--saliency-dir", str(sal_dir), "--out", str(out)])
    assert rc == 0
    payload = json.loads((out / "aggregate.json").read_text())
    assert payload["n"] == len(diseased)
    assert payload["skipped"] == []
    # the CLI path must agree exactly with direct metric calls
    assert payload["pointing_game"]["mean"] \
        == float(np.mean(expected_pointing))
    assert payload["iou"]["mean"] == float(np.mean(expected_iou))
    # truth-mask saliency thresholds back to exactly the target union
    assert all(v == 1.0 for v in expected_iou)


def test_evaluate_missing_saliency_file(workspace, tmp_path):
    sal_dir = tmp_path / "sal"
    sal_dir.mkdir()
    rc = main(["evaluate", "--dataset", str(workspace / "eval_ds"),
               "--saliency-dir", str(sal_dir), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_evaluate_empty_dataset_dir(workspace, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = main(["evaluate", "--dataset", str(empty),
               "--classifier", str(workspace / "desk.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_evaluate_missing_dataset_dir(workspace, tmp_path):
    rc = main(["evaluate", "--dataset", str(tmp_path / "nope"),
               "--classifier", str(workspace / "desk.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 3


def test_evaluate_requires_a_saliency_source(workspace, tmp_path, capsys):
    rc = main(["evaluate", "--dataset", str(workspace / "eval_ds"),
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "required" in capsys.readouterr().err


def test_sweep_with_external_saliency(workspace, tmp_path):
    sal_dir = tmp_path / "sal"
    sal_dir.mkdir()
    diseased = [item for item in load_dataset(workspace / "eval_ds")
                if item.truth.label == DISEASED]
    for item in diseased:
        heat = np.zeros(item.x.shape)
        for target in item.truth.targets:
            heat[target.mask] = 1.0
        heat += 0.2 * (item.x > 0.1)
        save_saliency_json(heat, sal_dir / f"{item.item_id}.json")
    out = tmp_path / "sw"
    rc = main(["sweep", "--dataset", str(workspace / "eval_ds"),
               "--saliency-dir", str(sal_dir), "--out", str(out)])
    assert rc == 0
    payload = json.loads((out / "sweep.json").read_text())
    assert sorted(payload["percents"]) == ["60", "70", "80", "90"]
    assert payload["best_percent"] in (60, 70, 80, 90)
    assert payload["n"] == len(diseased)
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "item_id,iou_60,iou_70,iou_80,iou_90"
    assert len(lines) == len(diseased) + 1


def test_sweep_rejects_bad_percents(workspace, tmp_path):
    base = ["sweep", "--dataset", str(workspace / "eval_ds"),
            "--saliency-dir", str(tmp_path), "--out", str(tmp_path / "o")]
    assert main(base + ["--percents", "abc"]) == 2
    assert main(base + ["--percents", "0,50"]) == 2
    assert main(base + ["--percents", "100"]) == 2


def test_config_file_and_overrides_combine(workspace, tmp_path):
    config_file = tmp_path / "run.cfg"
    config_file.write_text("num_samples = 400\nseed = 9\n")
    item = first_positive_item(workspace / "ds", workspace / "desk.json")
    out = tmp_path / "expl"
    rc = main(["explain",
               "--image", str(workspace / "ds" / f"{item.item_id}_x.png"),
               "--contrast", str(workspace / "ds" / f"{item.item_id}_xp.png"),
               "--classifier", str(workspace / "desk.json"),
               "--out", str(out),
               "--config", str(config_file),
               "--set", "num_samples=600", "--seed", "5"])
    assert rc == 0
    resolved = load_config(out / "resolved_config.json")
    assert resolved.num_samples == 600
    assert resolved.seed == 5
