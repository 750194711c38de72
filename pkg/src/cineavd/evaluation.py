"""Test-set metrics: confusion matrix, accuracy / macro-F1 / macro-precision
with bootstrap standard deviations, and one-vs-rest ROC AUC.

AUC uses the rank (Mann-Whitney) statistic with half credit for ties.  The
reported mean of each scalar metric is its point estimate on the full test
set; the std comes from resampling the test predictions with replacement.
"""

import csv
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .densenet import Model
from .errors import EvalError
from .manifest import LabelTask, Manifest
from .training import TrainConfig, forward_eval, load_split_volumes


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns are predictions."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise EvalError("confusion_matrix length mismatch")
    for arr, name in ((y_true, "y_true"), (y_pred, "y_pred")):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise EvalError(f"{name} label outside [0, {num_classes})")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (y_true, y_pred), 1)
    return out


def classification_metrics(confusion: np.ndarray, average: str = "macro") -> dict:
    """accuracy, precision, F1 from a confusion matrix; 0/0 counts as 0."""
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    if total == 0:
        raise EvalError("empty confusion matrix")
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    support = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    if average == "macro":
        prec, f1m = precision.mean(), f1.mean()
    elif average == "micro":
        prec = f1m = tp.sum() / total
    elif average == "weighted":
        weights = support / total
        prec, f1m = float(precision @ weights), float(f1 @ weights)
    else:
        raise EvalError(f"unknown average {average!r}")
    return {"accuracy": float(tp.sum() / total), "precision": float(prec), "f1": float(f1m)}


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_v = values[order]
    i = 0
    while i < values.size:
        j = i
        while j < values.size and sorted_v[j] == sorted_v[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    return ranks


def roc_auc_ovr(y_true, scores) -> np.ndarray:
    """Per-class one-vs-rest AUC (Mann-Whitney, ties get half credit).

    Classes absent from y_true get NaN with a warning.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != y_true.shape[0]:
        raise EvalError("scores must be (n_samples, n_classes)")
    k = scores.shape[1]
    out = np.empty(k, dtype=np.float64)
    for c in range(k):
        pos = y_true == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            warnings.warn(f"class {c} absent from y_true; AUC undefined")
            out[c] = np.nan
            continue
        ranks = _tied_ranks(scores[:, c])
        out[c] = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return out


def roc_curve_points(y_bin, scores):
    """(fpr, tpr, threshold) arrays for one binary problem, thresholds descending."""
    y_bin = np.asarray(y_bin, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y_bin.sum()), int((~y_bin).sum())
    if n_pos == 0 or n_neg == 0:
        return np.array([]), np.array([]), np.array([])
    order = np.argsort(-scores, kind="mergesort")
    sorted_y = y_bin[order]
    sorted_s = scores[order]
    distinct = np.nonzero(np.diff(sorted_s))[0]
    cut = np.concatenate([distinct, [y_bin.size - 1]])
    tps = np.cumsum(sorted_y)[cut]
    fps = np.cumsum(~sorted_y)[cut]
    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    thresholds = np.concatenate([[np.inf], sorted_s[cut]])
    return fpr, tpr, thresholds


@dataclass
class EvalReport:
    confusion: np.ndarray
    accuracy: tuple  # (mean, std)
    f1: tuple
    precision: tuple
    per_class_auc: np.ndarray
    n_test: int
    class_names: tuple
    roc_points: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "n_test": self.n_test,
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "accuracy": {"mean": self.accuracy[0], "std": self.accuracy[1]},
            "f1": {"mean": self.f1[0], "std": self.f1[1]},
            "precision": {"mean": self.precision[0], "std": self.precision[1]},
            "per_class_auc": [None if np.isnan(a) else float(a) for a in self.per_class_auc],
        }


def report_from_predictions(y_true, probs, class_names, bootstrap_n=1000, seed=0) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    k = len(class_names)
    y_pred = np.argmax(probs, axis=1)
    confusion = confusion_matrix(y_true, y_pred, k)
    point = classification_metrics(confusion)
    rng = np.random.default_rng(seed)
    samples = {"accuracy": [], "precision": [], "f1": []}
    n = y_true.size
    for _ in range(bootstrap_n):
        idx = rng.integers(0, n, size=n)
        m = classification_metrics(confusion_matrix(y_true[idx], y_pred[idx], k))
        for key in samples:
            samples[key].append(m[key])
    stds = {key: float(np.std(np.asarray(vals))) for key, vals in samples.items()}
    auc = roc_auc_ovr(y_true, probs)
    roc_points = {c: roc_curve_points(y_true == c, probs[:, c]) for c in range(k)}
    return EvalReport(
        confusion,
        (point["accuracy"], stds["accuracy"]),
        (point["f1"], stds["f1"]),
        (point["precision"], stds["precision"]),
        auc,
        int(n),
        tuple(class_names),
        roc_points,
    )


def evaluate(model: Model, manifest: Manifest, task: LabelTask, cfg: TrainConfig = None,
             bootstrap_n: int = 1000, seed: int = 0, extraction_cfg=None) -> EvalReport:
    """Run inference on the manifest's test split (no augmentation) and score it."""
    cfg = cfg or TrainConfig(task=task.mode, target_depth=model.cfg.input_shape[2])
    entries = manifest.subset("test")
    if not entries:
        raise EvalError("manifest has no test split")
    vols = load_split_volumes(entries, cfg, model.cfg, extraction_cfg)
    y_true = np.array([task.map_label(e.label) for e in entries])
    probs = forward_eval(model, vols, max(cfg.batch_size, 4))
    return report_from_predictions(y_true, probs, task.class_names, bootstrap_n, seed)


def save_report(report: EvalReport, out_dir) -> None:
    """report.json + confusion.csv + per-class ROC point CSVs (fpr,tpr,threshold)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
    with open(os.path.join(out_dir, "confusion.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\predicted"] + list(report.class_names))
        for name, row in zip(report.class_names, report.confusion):
            writer.writerow([name] + [int(x) for x in row])
    for c, name in enumerate(report.class_names):
        fpr, tpr, thr = report.roc_points.get(c, (np.array([]),) * 3)
        with open(os.path.join(out_dir, f"roc_class{c}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in zip(fpr, tpr, thr):
                writer.writerow([f"{f:.6f}", f"{t:.6f}", th])
