import csv
import json

import numpy as np
import pytest

from glaucoscreen import classifier as clf
from glaucoscreen import geometry
from glaucoscreen.cli import main
from glaucoscreen.imaging import load_label_mask
from glaucoscreen.phantoms import make_phantom_dataset
from glaucoscreen.pipeline import stages
from glaucoscreen.pipeline.config import ConfigError, RunConfig, load_config
from glaucoscreen.pipeline.manifest import HEADER, ManifestError, load_manifest

SMALL = dict(resolution=32, base_channels=2, epochs=2, augment_target=14, cv_folds=2,
             svm_c_grid=(1.0, 10.0), svm_gamma_grid=(0.1, 1.0))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------- manifest


def _write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        w.writerows(rows)


def test_manifest_split_counts(tmp_path):
    rows = [(f"e{k:03d}", "i.png", "d.png", "c.png", "train" if k < 71 else "test",
             "glaucoma" if k % 3 else "normal") for k in range(101)]
    _write_manifest(tmp_path / "m.csv", rows)
    entries = load_manifest(tmp_path / "m.csv", check_files=False)
    assert len(entries) == 101
    assert sum(e.split == "train" for e in entries) == 71
    assert entries[0].image == tmp_path / "i.png"


def test_manifest_rejects_bad_input(tmp_path):
    path = tmp_path / "m.csv"
    _write_manifest(path, [("a", "i", "d", "c", "train", "normal")] * 2)
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(path, check_files=False)
    _write_manifest(path, [])
    with pytest.raises(ManifestError):
        load_manifest(path, check_files=False)
    path.write_text("")
    with pytest.raises(ManifestError):
        load_manifest(path)
    _write_manifest(path, [("a", "i", "d", "c", "validation", "normal")])
    with pytest.raises(ManifestError):
        load_manifest(path, check_files=False)


def test_manifest_reports_missing_files(tmp_path):
    _write_manifest(tmp_path / "m.csv", [("eye7", "nope.png", "d.png", "c.png", "test", "unknown")])
    with pytest.raises(ManifestError, match="eye7"):
        load_manifest(tmp_path / "m.csv")


# --------------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(resolution=40).validate()
    with pytest.raises(ConfigError):
        RunConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        load_config(None, learning_rate=0.1)


def test_config_file_and_hash(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"resolution": 64, "clahe_tiles": [4, 4]}))
    cfg = load_config(path, seed=3)
    assert cfg.resolution == 64 and cfg.clahe_tiles == (4, 4) and cfg.seed == 3
    assert cfg.hash() == load_config(path, seed=3, out="elsewhere").hash()
    assert cfg.hash() != load_config(path, seed=4).hash()
    assert cfg.stage_seed("a") != cfg.stage_seed("b")
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


# ------------------------------------------------------------------ end to end


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    manifest = make_phantom_dataset(root / "data", n_train=8, n_test=6, size=48, seed=1)
    cfg = RunConfig(manifest=str(manifest), out=str(root / "out"), **SMALL).validate()
    stages.cmd_prepare(cfg)
    stages.cmd_train_seg(cfg)
    stages.cmd_segment(cfg)
    for source in ("ground_truth", "predicted"):
        stages.cmd_features(cfg, source)
    stages.cmd_train_clf(cfg)
    report = stages.cmd_evaluate(cfg, features=root / "out" / "features" / "features_ground_truth.csv")
    return cfg, root / "out", report


def test_prepare_outputs(run):
    cfg, out, _ = run
    index = read_csv(out / "prepared" / "index.csv")
    train = [r for r in index if r["split"] == "train"]
    assert len(train) == cfg.augment_target
    assert sum(r["provenance"] == "original" for r in index) == 14
    mask = load_label_mask(out / "prepared" / "masks" / f"{index[0]['id']}.png")
    assert mask.shape == (32, 32) and set(np.unique(mask)) <= {0, 1, 2}


def test_prepare_rejects_small_target(run, tmp_path):
    cfg, _, _ = run
    bad = RunConfig(**{**cfg.to_dict(), "out": str(tmp_path), "augment_target": 3,
                       "clahe_tiles": cfg.clahe_tiles})
    with pytest.raises(ConfigError):
        stages.cmd_prepare(bad)


def test_train_log_has_one_record_per_epoch(run):
    cfg, out, _ = run
    lines = (out / "seg" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == cfg.epochs
    assert json.loads(lines[0])["epoch"] == 1


def test_segment_scores_and_masks(run):
    _, out, _ = run
    preds = sorted(p.name for p in (out / "predicted").glob("*.png"))
    assert len(preds) == 6
    scores = read_csv(out / "seg" / "scores.csv")
    assert {r["class"] for r in scores} == {"OD", "OC"}
    assert all(0 <= float(r["f1"]) <= 1 for r in scores)


def test_feature_csv_layout(run):
    _, out, _ = run
    path = out / "features" / "features_ground_truth.csv"
    with open(path) as fh:
        assert fh.readline().strip() == ",".join(stages.FEATURE_FIELDS)
    rows = read_csv(path)
    assert [r["id"] for r in rows] == sorted(r["id"] for r in rows)
    mask = load_label_mask(out / "prepared" / "masks" / f"{rows[0]['id']}.png")
    expected = geometry.compute_features(mask >= 1, mask == 2)
    for name in geometry.FEATURE_NAMES:
        assert float(rows[0][name]) == getattr(expected, name)
    assert rows[0]["source"] == "ground_truth" and rows[0]["resolution"] == "32"


def test_report_and_figures(run):
    cfg, out, report = run
    assert report["classification"]["n_test"] == 6
    assert report["metadata"]["config_hash"] == cfg.hash()
    assert json.loads((out / "report.json").read_text()) == report
    assert "sensitivity" in (out / "report.txt").read_text()
    for name in ("training_curves", "segmentations", "confusion", "rim_profiles_ground_truth"):
        assert (out / "figures" / f"{name}.png").stat().st_size > 0


def test_segment_rejects_resolution_mismatch(run, tmp_path):
    cfg, out, _ = run
    other = RunConfig(**{**cfg.to_dict(), "resolution": 48, "clahe_tiles": cfg.clahe_tiles})
    with pytest.raises(stages.StageError):
        stages.cmd_segment(other)


# ---------------------------------------------------------- screening counts


def _hand_model():
    # one support vector at acdr = 1: rows with acdr 1 score positive, acdr 0 negative
    d = len(geometry.FEATURE_NAMES)
    sv = np.zeros((1, d))
    sv[0, 0] = 1.0
    return clf.SvmModel(sv, np.array([1.0]), -0.5, 1.0, 1.0, clf.Scaler(np.zeros(d), np.ones(d)))


def _feature_rows(pairs):
    rows = []
    for k, (label, acdr) in enumerate(pairs):
        row = {"id": f"t{k:02d}", **{n: "0.0" for n in geometry.FEATURE_NAMES}}
        row.update(acdr=repr(acdr), source="ground_truth", resolution="256", label=label)
        rows.append(row)
    return rows


def test_evaluate_reproduces_screening_table(tmp_path):
    pairs = ([("glaucoma", 1.0)] * 10 + [("normal", 1.0)] + [("glaucoma", 0.0)]
             + [("normal", 0.0)] * 18)
    stages._write_csv(tmp_path / "f.csv", stages.FEATURE_FIELDS, _feature_rows(pairs))
    clf.save_model(_hand_model(), tmp_path / "m.json")
    cfg = RunConfig(out=str(tmp_path / "out"))
    report = stages.cmd_evaluate(cfg, tmp_path / "m.json", tmp_path / "f.csv")
    assert report["classification"]["counts"] == {"tp": 10, "fp": 1, "tn": 18, "fn": 1}
    assert round(100 * report["classification"]["scores"]["accuracy"], 2) == 93.33
    assert "93.33%" in (tmp_path / "out" / "report.txt").read_text()


def test_evaluate_without_labels(tmp_path):
    stages._write_csv(tmp_path / "f.csv", stages.FEATURE_FIELDS,
                      _feature_rows([("unknown", 1.0), ("unknown", 0.0)]))
    clf.save_model(_hand_model(), tmp_path / "m.json")
    with pytest.raises(stages.MissingLabelsError):
        stages.cmd_evaluate(RunConfig(out=str(tmp_path / "out")), tmp_path / "m.json",
                            tmp_path / "f.csv")


# ------------------------------------------------------------------------ cli


def test_cli_round(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["make-phantoms", str(data), "--n-train", "4", "--n-test", "2", "--size", "32"]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "augment_target": 6, "epochs": 1}))
    common = ["--config", str(cfg), "--out", str(tmp_path / "out")]
    assert main(["prepare", *common, "--manifest", str(data / "manifest.csv")]) == 0
    assert main(["features", *common]) == 0
    assert (tmp_path / "out" / "features" / "features_ground_truth.csv").is_file()


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["prepare", "--out", str(tmp_path)]) == 2
    assert main(["train-seg", "--out", str(tmp_path / "empty")]) == 2
    assert main(["prepare", "--manifest", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["no-such-stage"])
