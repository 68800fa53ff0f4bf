"""Segmentation evaluation: confusion matrix, IoU/accuracy metrics,
severity sweeps over corruptions, and report emission.

This module (plus network and scenes) is the whole inference path; it stays
importable and functional without the style-expansion or texture modules.
"""

import json
from pathlib import Path

import numpy as np
import torch

from .corruptions import CORRUPTIONS, SEVERITY_LEVELS, corrupt_batch
from .network import load_network
from .scenes import NUM_CLASSES, SCENE_CLASSES, SceneDataset

# surface classes a ground robot may drive over
TRAVERSABLE_IDS = (1, 2, 3, 4)


class ConfusionMatrix:
    """Accumulated [gt, pred] counts over integer label maps."""

    def __init__(self, num_classes: int = NUM_CLASSES):
        self.num_classes = int(num_classes)
        self.matrix = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, prediction: np.ndarray, target: np.ndarray) -> None:
        prediction = np.asarray(prediction).ravel()
        target = np.asarray(target).ravel()
        if prediction.shape != target.shape:
            raise ValueError("prediction and target sizes differ")
        if prediction.min() < 0 or prediction.max() >= self.num_classes:
            raise ValueError("prediction ids out of range")
        if target.min() < 0 or target.max() >= self.num_classes:
            raise ValueError("target ids out of range")
        idx = target * self.num_classes + prediction
        counts = np.bincount(idx, minlength=self.num_classes ** 2)
        self.matrix += counts.reshape(self.num_classes, self.num_classes)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.matrix += other.matrix

    def reset(self) -> None:
        self.matrix[:] = 0


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    m = cm.matrix.astype(float)
    tp = np.diag(m)
    fp = m.sum(axis=0) - tp
    fn = m.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / denom, np.nan)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    m = cm.matrix.astype(float)
    tp = np.diag(m)
    gt = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(gt > 0, tp / gt, np.nan)


def mean_over_present(values: np.ndarray, cm: ConfusionMatrix) -> float:
    """Average over classes that occur in the ground truth; absent ones are skipped."""
    present = cm.matrix.sum(axis=1) > 0
    if not present.any():
        return float("nan")
    return float(np.nanmean(values[present]))


def traversable_precision_recall(cm: ConfusionMatrix, group=TRAVERSABLE_IDS):
    """Binary precision/recall after collapsing classes into traversable vs not."""
    m = cm.matrix.astype(float)
    group = [c for c in group if c < cm.num_classes]
    if not group:
        return float("nan"), float("nan")
    rest = [c for c in range(cm.num_classes) if c not in group]
    tp = m[np.ix_(group, group)].sum()
    fp = m[np.ix_(rest, group)].sum()
    fn = m[np.ix_(group, rest)].sum()
    precision = tp / (tp + fp) if tp + fp > 0 else float("nan")
    recall = tp / (tp + fn) if tp + fn > 0 else float("nan")
    return float(precision), float(recall)


def summarize(cm: ConfusionMatrix) -> dict:
    iou = per_class_iou(cm)
    acc = per_class_accuracy(cm)
    precision, recall = traversable_precision_recall(cm)
    total = cm.matrix.sum()
    return {
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
        "per_class_accuracy": [None if np.isnan(v) else float(v) for v in acc],
        "miou": mean_over_present(iou, cm),
        "macc": mean_over_present(acc, cm),
        "pixel_accuracy": float(np.diag(cm.matrix).sum() / total) if total else float("nan"),
        "traversable_precision": precision,
        "traversable_recall": recall,
        "class_names": list(SCENE_CLASSES)[:cm.num_classes],
    }


def predict_labels(model, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Argmax class maps for [N, 3, H, W] images; ties resolve to the lowest id."""
    model.eval()
    outputs = []
    with torch.inference_mode():
        for start in range(0, images.shape[0], batch_size):
            batch = torch.from_numpy(images[start:start + batch_size])
            logits = model(batch).numpy()
            outputs.append(np.argmax(logits, axis=1).astype(np.int64))
    return np.concatenate(outputs, axis=0)


def evaluate_arrays(model, images: np.ndarray, labels: np.ndarray,
                    batch_size: int = 32) -> ConfusionMatrix:
    cm = ConfusionMatrix(model.num_classes)
    pred = predict_labels(model, images, batch_size)
    cm.update(pred, labels)
    return cm


def corruption_sweep(model, images: np.ndarray, labels: np.ndarray, seed: int,
                     kinds=CORRUPTIONS, severities=SEVERITY_LEVELS,
                     batch_size: int = 32) -> dict:
    """mIoU per corruption kind and severity; labels stay those of the clean set."""
    curves = {}
    for kind in kinds:
        row = {}
        for severity in severities:
            corrupted = corrupt_batch(images, kind, severity, seed)
            cm = evaluate_arrays(model, corrupted, labels, batch_size)
            row[int(severity)] = summarize(cm)["miou"]
        curves[kind] = row
    return curves


def mean_corrupted_miou(curves: dict) -> float:
    values = [v for row in curves.values() for v in row.values()]
    return float(np.mean(values))


def plot_severity_curves(curves: dict, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for kind, row in curves.items():
        sev = sorted(row)
        ax.plot(sev, [row[s] for s in sev], marker="o", label=kind)
    ax.set_xlabel("severity")
    ax.set_ylabel("mIoU")
    ax.set_xticks(list(SEVERITY_LEVELS))
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _markdown_report(payload: dict) -> str:
    lines = ["# Evaluation report", ""]
    clean = payload.get("clean")
    if clean:
        lines += [f"Clean mIoU: {clean['miou']:.4f}   mAcc: {clean['macc']:.4f}   "
                  f"pixel acc: {clean['pixel_accuracy']:.4f}", ""]
        lines += ["| class | IoU | accuracy |", "| --- | --- | --- |"]
        for name, iou, acc in zip(clean["class_names"], clean["per_class_iou"],
                                  clean["per_class_accuracy"]):
            iou_s = "absent" if iou is None else f"{iou:.4f}"
            acc_s = "absent" if acc is None else f"{acc:.4f}"
            lines.append(f"| {name} | {iou_s} | {acc_s} |")
        lines.append("")
        lines.append(f"Traversable precision {clean['traversable_precision']:.4f}, "
                     f"recall {clean['traversable_recall']:.4f}")
        lines.append("")
    curves = payload.get("corruption_curves")
    if curves:
        lines += ["## Corruption sweep (mIoU)", "",
                  "| corruption | " + " | ".join(f"sev {s}" for s in SEVERITY_LEVELS) + " |",
                  "| --- |" + " --- |" * len(SEVERITY_LEVELS)]
        for kind, row in curves.items():
            cells = " | ".join(f"{row[s]:.4f}" for s in sorted(row))
            lines.append(f"| {kind} | {cells} |")
        lines.append("")
        lines.append(f"Mean corrupted mIoU: {payload['mean_corrupted_miou']:.4f}")
        lines.append("")
    for key, value in payload.items():
        if key.startswith("domain:"):
            lines.append(f"{key[7:]} mIoU: {value['miou']:.4f}")
    return "\n".join(lines) + "\n"


def emit_report(out_dir, payload: dict, plot: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    (out / "report.md").write_text(_markdown_report(payload))
    curves = payload.get("corruption_curves")
    if plot and curves:
        plot_severity_curves(curves, out / "severity_curves.png")


def evaluate_checkpoint(checkpoint_path, data_root, splits=("val",), seed: int = 0,
                        with_corruptions: bool = True, out_dir=None,
                        batch_size: int = 32) -> dict:
    """Full evaluation of a saved network; returns (and optionally writes) the report.

    The first split gets the corruption sweep; any other splits (for example
    unseen domains) report clean metrics under their own keys.
    """
    model, _ = load_network(checkpoint_path)
    payload = {"checkpoint": str(checkpoint_path), "seed": seed}
    for pos, split in enumerate(splits):
        ds = SceneDataset(data_root, split)
        if ds.labels is None:
            raise ValueError(f"split {split!r} has no labels; cannot evaluate")
        cm = evaluate_arrays(model, ds.images, ds.labels, batch_size)
        stats = summarize(cm)
        if pos == 0:
            payload["clean"] = stats
            if with_corruptions:
                curves = corruption_sweep(model, ds.images, ds.labels, seed,
                                          batch_size=batch_size)
                payload["corruption_curves"] = curves
                payload["mean_corrupted_miou"] = mean_corrupted_miou(curves)
        else:
            payload[f"domain:{split}"] = stats
    if out_dir is not None:
        emit_report(out_dir, payload)
    return payload
