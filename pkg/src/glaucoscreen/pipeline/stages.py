"""Pipeline stages. Each reads declared artifacts under ``config.out`` and writes its own.

Output layout::

    prepared/index.csv, prepared/images/<id>.png, prepared/masks/<id>.png
    seg/weights.bin, seg/train_log.jsonl, seg/meta.json
    predicted/<id>.png, seg/scores.csv, seg/report.json
    features/features_<source>.csv
    clf/svm_model.json, clf/cv_table.csv, clf/selection.json
    report.json, report.txt, evaluation/predictions.csv
    figures/*.png
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .. import classifier as clf
from .. import geometry, imaging, metrics
from ..imaging import Sample
from ..segnet import SegTrainConfig, load_weights, save_weights, train_segmenter
from ..segnet.training import labels_from_probs, predict_probs
from . import plotting
from .config import ConfigError, RunConfig
from .manifest import load_manifest

logger = logging.getLogger(__name__)

INDEX_FIELDS = ("id", "source_id", "split", "provenance", "label")
FEATURE_FIELDS = ("id",) + geometry.FEATURE_NAMES + ("source", "resolution", "label")
SCORE_FIELDS = ("accuracy", "precision", "recall", "f1", "jaccard")


class StageError(RuntimeError):
    """A stage's declared inputs are missing or unusable."""


class MissingLabelsError(StageError):
    pass


def _threads() -> int:
    env = os.environ.get("FUNDUS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Ordered map over items, fanned out to at most FUNDUS_THREADS workers."""
    items = list(items)
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _out(config: RunConfig) -> Path:
    return Path(config.out)


def _write_csv(path: Path, fields, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise StageError(f"missing input {path}; run the earlier stage first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(value) -> str:
    return repr(float(value))


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (dt.datetime.fromtimestamp(int(epoch), tz=dt.timezone.utc) if epoch
            else dt.datetime.now(tz=dt.timezone.utc))
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


# ------------------------------------------------------------------------ prepare


def preprocess_image(config: RunConfig, rgb: np.ndarray) -> np.ndarray:
    gray = imaging.to_grayscale(rgb, config.grayscale)
    if config.enhance:
        gray = imaging.clahe(gray, config.clahe_clip_limit, tuple(config.clahe_tiles))
    return imaging.resize_image(gray, config.resolution, config.resolution)


def _prepare_entry(config: RunConfig, entry) -> Sample:
    rgb = imaging.load_image(entry.image)
    disc = imaging.load_binary_mask(entry.disc_mask)
    cup = imaging.load_binary_mask(entry.cup_mask)
    if disc.shape != rgb.shape[:2] or cup.shape != rgb.shape[:2]:
        raise StageError(f"{entry.id}: mask size differs from image size")
    labels, clipped = imaging.merge_masks(disc, cup)
    if clipped:
        logger.warning("%s: %d cup pixels outside the disc", entry.id, clipped)
    mask = imaging.resize_mask(labels, config.resolution, config.resolution)
    return Sample(entry.id, preprocess_image(config, rgb), mask)


def cmd_prepare(config: RunConfig) -> Path:
    """Preprocess every manifest entry and augment the training split."""
    if not config.manifest:
        raise ConfigError("prepare needs a manifest")
    entries = sorted(load_manifest(config.manifest), key=lambda e: e.id)
    n_train = sum(e.split == "train" for e in entries)
    if config.augment_target < n_train:
        raise ConfigError(f"augment_target {config.augment_target} is below the "
                          f"{n_train} training images")
    samples = parallel_map(lambda e: _prepare_entry(config, e), entries)
    by_id = {e.id: e for e in entries}
    train = [s for s in samples if by_id[s.id].split == "train"]
    test = [s for s in samples if by_id[s.id].split == "test"]
    if train:
        train_all = imaging.expand_dataset(train, config.augment_target,
                                           config.stage_seed("prepare"))
    else:
        train_all = []

    root = _out(config) / "prepared"
    if root.exists():
        shutil.rmtree(root)
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir(parents=True)
    rows = []
    for split, group in (("train", train_all), ("test", test)):
        for s in group:
            source_id = s.id.split("~")[0]
            imaging.save_image(root / "images" / f"{s.id}.png", s.image)
            imaging.save_label_mask(root / "masks" / f"{s.id}.png", s.mask)
            rows.append({"id": s.id, "source_id": source_id, "split": split,
                         "provenance": s.provenance, "label": by_id[source_id].label})
    _write_csv(root / "index.csv", INDEX_FIELDS, rows)
    logger.info("prepared %d training and %d test samples", len(train_all), len(test))
    return root


def _load_index(config: RunConfig) -> list[dict]:
    return _read_csv(_out(config) / "prepared" / "index.csv")


def _load_sample(config: RunConfig, row: dict) -> Sample:
    root = _out(config) / "prepared"
    image = imaging.load_gray(root / "images" / f"{row['id']}.png")
    mask = imaging.load_label_mask(root / "masks" / f"{row['id']}.png")
    return Sample(row["id"], image, mask, row["provenance"])


# ---------------------------------------------------------------------- train-seg


def cmd_train_seg(config: RunConfig) -> Path:
    """Train the segmenter on the prepared training split with a seeded 90/10 split."""
    index = [r for r in _load_index(config) if r["split"] == "train"]
    if not index:
        raise StageError("no prepared training samples")
    samples = [_load_sample(config, r) for r in index]
    if samples[0].image.shape != (config.resolution, config.resolution):
        raise StageError("prepared data resolution differs from the config; rerun prepare")
    rng = np.random.default_rng(config.stage_seed("val-split"))
    perm = rng.permutation(len(samples))
    n_val = int(round(config.val_fraction * len(samples)))
    if n_val >= len(samples):
        n_val = len(samples) - 1
    val = [samples[i] for i in perm[:n_val]]
    train = [samples[i] for i in perm[n_val:]]

    seg_cfg = SegTrainConfig(base_channels=config.base_channels, epochs=config.epochs,
                             batch_size=config.batch_size, lr=config.lr)
    seg_dir = _out(config) / "seg"
    seg_dir.mkdir(parents=True, exist_ok=True)
    log_path = seg_dir / "train_log.jsonl"
    with open(log_path, "w") as log_fh:
        def progress(record):
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

        model, log = train_segmenter(seg_cfg, train, val, config.stage_seed("train-seg"),
                                     progress=progress)
    save_weights(model, seg_dir / "weights.bin")
    _write_json(seg_dir / "meta.json", {
        "resolution": config.resolution,
        "base_channels": config.base_channels,
        "n_train": len(train),
        "n_val": len(val),
        "val_ids": sorted(s.id for s in val),
        "config_hash": config.hash(),
    })
    plotting.plot_training_curves(log, _out(config) / "figures" / "training_curves.png")
    return seg_dir / "weights.bin"


# ------------------------------------------------------------------------ segment


def _class_scores(pred: np.ndarray, truth: np.ndarray) -> dict:
    out = {}
    for name, (p, t) in (("OD", (pred >= 1, truth >= 1)), ("OC", (pred == 2, truth == 2))):
        s = metrics.seg_scores(metrics.confusion_counts(p, t))
        out[name] = {f: getattr(s, f) for f in SCORE_FIELDS}
    return out


def cmd_segment(config: RunConfig, weights=None) -> Path:
    """Predict label masks for one split and score them against ground truth."""
    out = _out(config)
    weights = Path(weights) if weights else out / "seg" / "weights.bin"
    meta_path = weights.parent / "meta.json"
    if meta_path.is_file():
        trained_res = json.loads(meta_path.read_text())["resolution"]
        if trained_res != config.resolution:
            raise StageError(f"weights were trained at {trained_res}px, "
                             f"config resolution is {config.resolution}px")
    model = load_weights(weights)
    rows = [r for r in _load_index(config)
            if r["split"] == config.segment_split and r["provenance"] == "original"]
    if not rows:
        raise StageError(f"no prepared images in split {config.segment_split!r}")
    samples = [_load_sample(config, r) for r in rows]
    if samples[0].image.shape != (config.resolution, config.resolution):
        raise StageError("prepared image resolution differs from the model resolution")

    def run(sample):
        return labels_from_probs(predict_probs(model, [sample.image])[0])

    preds = parallel_map(run, samples)
    pred_dir = out / "predicted"
    if pred_dir.exists():
        shutil.rmtree(pred_dir)
    pred_dir.mkdir(parents=True)
    score_rows, per_class = [], {"OD": [], "OC": []}
    for s, p in zip(samples, preds):
        imaging.save_label_mask(pred_dir / f"{s.id}.png", p)
        scores = _class_scores(p, s.mask)
        for name, vals in scores.items():
            per_class[name].append(metrics.SegScores(**vals))
            score_rows.append({"id": s.id, "class": name, **{f: _fmt(vals[f]) for f in SCORE_FIELDS}})
    _write_csv(out / "seg" / "scores.csv", ("id", "class") + SCORE_FIELDS, score_rows)
    mean = {name: vars(metrics.mean_seg_scores(v)) for name, v in per_class.items()}
    _write_json(out / "seg" / "report.json", {
        "split": config.segment_split,
        "n_images": len(samples),
        "resolution": config.resolution,
        "mean": mean,
    })
    plotting.plot_segmentations([s.image for s in samples], [s.mask for s in samples], preds,
                                [s.id for s in samples], out / "figures" / "segmentations.png")
    return pred_dir


# ----------------------------------------------------------------------- features


def _feature_job(item):
    eid, mask = item
    disc, cup = imaging.split_label_mask(mask)
    try:
        fv = geometry.compute_features(disc, cup)
    except geometry.EmptyMaskError:
        return eid, None, None
    profile = geometry.rim_profile(geometry.largest_component(disc),
                                   geometry.largest_component(cup))
    return eid, fv, profile.x


def cmd_features(config: RunConfig, source: str = "ground_truth") -> Path:
    """Compute the eight features for every original eye from the chosen mask source."""
    out = _out(config)
    index = {r["id"]: r for r in _load_index(config) if r["provenance"] == "original"}
    if source == "ground_truth":
        mask_dir = out / "prepared" / "masks"
        ids = sorted(index)
    elif source == "predicted":
        mask_dir = out / "predicted"
        if not mask_dir.is_dir():
            raise StageError("no predicted masks; run segment first")
        ids = sorted(p.stem for p in mask_dir.glob("*.png") if p.stem in index)
    else:
        raise ConfigError(f"unknown mask source {source!r}")
    items = [(eid, imaging.load_label_mask(mask_dir / f"{eid}.png")) for eid in ids]
    results = parallel_map(_feature_job, items)

    rows, profiles, skipped = [], {}, 0
    for eid, fv, x in results:
        if fv is None:
            skipped += 1
            logger.warning("%s: empty disc mask, skipped", eid)
            continue
        label = index[eid]["label"]
        row = {"id": eid}
        row.update({name: _fmt(getattr(fv, name)) for name in geometry.FEATURE_NAMES})
        row.update({"source": source, "resolution": str(config.resolution), "label": label})
        rows.append(row)
        profiles.setdefault(label, []).append(x)
    if skipped:
        logger.warning("%d of %d eyes skipped for empty discs", skipped, len(items))
    path = out / "features" / f"features_{source}.csv"
    _write_csv(path, FEATURE_FIELDS, rows)
    if rows:
        plotting.plot_rim_profiles(profiles, out / "figures" / f"rim_profiles_{source}.png")
        plotting.plot_feature_scatter(
            [{**r, **{k: float(r[k]) for k in geometry.FEATURE_NAMES}} for r in rows],
            out / "figures" / f"features_{source}.png",
        )
    return path


def read_features(path) -> list[dict]:
    rows = _read_csv(Path(path))
    if rows and tuple(rows[0].keys()) != FEATURE_FIELDS:
        raise StageError(f"{path}: unexpected feature CSV columns")
    return rows


def _split_rows(config: RunConfig, rows: list[dict], split: str) -> list[dict]:
    index_path = _out(config) / "prepared" / "index.csv"
    if not index_path.is_file():
        return rows
    splits = {r["id"]: r["split"] for r in _read_csv(index_path)}
    return [r for r in rows if splits.get(r["id"]) == split]


def _labeled(rows):
    return [r for r in rows if r["label"] in (clf.GLAUCOMA, clf.NORMAL)]


def _matrix(rows) -> np.ndarray:
    return np.array([[float(r[k]) for k in geometry.FEATURE_NAMES] for r in rows])


# ---------------------------------------------------------------------- train-clf


def cmd_train_clf(config: RunConfig, features=None) -> Path:
    """Grid-search (c, gamma) by stratified CV, then fit on all training rows."""
    out = _out(config)
    features = Path(features) if features else out / "features" / f"features_{config.train_source}.csv"
    rows = _labeled(_split_rows(config, read_features(features), "train"))
    labels = [r["label"] for r in rows]
    if len(set(labels)) < 2:
        raise StageError("classifier training needs both glaucoma and normal rows")
    x = _matrix(rows)
    tc = clf.TrainConfig(c_grid=config.svm_c_grid, gamma_grid=config.svm_gamma_grid,
                         tolerance=config.svm_tolerance, max_passes=config.svm_max_passes,
                         cv_folds=config.cv_folds, seed=config.stage_seed("train-clf"))
    best_c, best_gamma, table = clf.grid_search(x, labels, tc)
    model = clf.fit_svm(x, labels, best_c, best_gamma, tc.tolerance, tc.max_passes, tc.seed)
    clf_dir = out / "clf"
    clf_dir.mkdir(parents=True, exist_ok=True)
    clf.save_model(model, clf_dir / "svm_model.json")
    _write_csv(clf_dir / "cv_table.csv", ("c", "gamma", "cv_accuracy"),
               [{"c": _fmt(c), "gamma": _fmt(g), "cv_accuracy": _fmt(a)} for c, g, a in table])
    best_acc = next(a for c, g, a in table if (c, g) == (best_c, best_gamma))
    _write_json(clf_dir / "selection.json", {
        "c": best_c, "gamma": best_gamma, "cv_accuracy": best_acc,
        "n_train": len(rows), "features": features.name, "n_support": len(model.dual_coef),
    })
    return clf_dir / "svm_model.json"


# ----------------------------------------------------------------------- evaluate


def cmd_evaluate(config: RunConfig, model=None, features=None) -> dict:
    """Classify the labelled test rows and write the screening report."""
    out = _out(config)
    model_path = Path(model) if model else out / "clf" / "svm_model.json"
    features = Path(features) if features else out / "features" / f"features_{config.eval_source}.csv"
    svm = clf.load_model(model_path)
    rows = _labeled(_split_rows(config, read_features(features), "test"))
    if not rows:
        raise MissingLabelsError(f"{features}: no labelled test rows to evaluate")
    preds = clf.predict_many(svm, _matrix(rows))
    values = clf.decision_values(svm, _matrix(rows))
    truth = [r["label"] for r in rows]
    g = clf.GLAUCOMA
    counts = metrics.ConfusionCounts(
        tp=sum(p == g and t == g for p, t in zip(preds, truth)),
        fp=sum(p == g and t != g for p, t in zip(preds, truth)),
        tn=sum(p != g and t != g for p, t in zip(preds, truth)),
        fn=sum(p != g and t == g for p, t in zip(preds, truth)),
    )
    diag = metrics.diag_scores(counts)
    _write_csv(out / "evaluation" / "predictions.csv", ("id", "label", "predicted", "decision"),
               [{"id": r["id"], "label": t, "predicted": p, "decision": _fmt(v)}
                for r, t, p, v in zip(rows, truth, preds, values)])

    seg_report = out / "seg" / "report.json"
    report = {
        "metadata": {
            "seed": config.seed,
            "config_hash": config.hash(),
            "generated_at": _timestamp(),
            "features": features.name,
            "feature_source": rows[0]["source"],
            "resolution": int(rows[0]["resolution"]),
            "model": model_path.name,
            "c": svm.c,
            "gamma": svm.gamma,
        },
        "classification": {
            "counts": vars(counts),
            "scores": {k: v for k, v in vars(diag).items() if k != "undefined"},
            "undefined": list(diag.undefined),
            "n_test": len(rows),
        },
        "segmentation": json.loads(seg_report.read_text()) if seg_report.is_file() else None,
    }
    _write_json(out / "report.json", report)
    (out / "report.txt").write_text(render_summary(report))
    plotting.plot_confusion(counts, out / "figures" / "confusion.png")
    return report


def render_summary(report: dict) -> str:
    meta, cls = report["metadata"], report["classification"]
    c, s = cls["counts"], cls["scores"]
    lines = [
        "Glaucoma screening report",
        f"seed {meta['seed']}  config {meta['config_hash']}  generated {meta['generated_at']}",
        f"features {meta['features']} ({meta['feature_source']}, {meta['resolution']}px)",
        f"svm c={meta['c']:g} gamma={meta['gamma']:g}",
        "",
        f"  TP {c['tp']:4d}   FP {c['fp']:4d}",
        f"  FN {c['fn']:4d}   TN {c['tn']:4d}",
        "",
    ]
    for name in ("sensitivity", "specificity", "precision", "npv", "accuracy"):
        lines.append(f"  {name:<12s} {100 * s[name]:6.2f}%")
    seg = report.get("segmentation")
    if seg:
        lines += ["", f"segmentation ({seg['split']}, {seg['n_images']} images, {seg['resolution']}px)"]
        for name in ("OD", "OC"):
            m = seg["mean"][name]
            lines.append("  " + name + "  " + "  ".join(f"{f} {m[f]:.4f}" for f in SCORE_FIELDS))
    return "\n".join(lines) + "\n"
