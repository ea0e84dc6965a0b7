"""Metrics and reporting: accuracy, per-class P/R/F1, ROC/AUC, confusion
matrices, the last-three-epochs protocol, and feature export.

Accuracy, precision, recall, and F1 are reported as percentages in
[0, 100]; AUC is kept as a fraction in [0, 1] (the scale ROC points use).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .errors import ValidationError
from .noise import NoisyDataset
from .models import NoiseRobustModel

FEATURE_EXPORT_FORMAT = "feature-export-v1"


@dataclass
class MetricsReport:
    """Metrics of one frozen model snapshot on one test set.

    Per-class entries are ``None`` where undefined (class absent from the
    test set); such classes are excluded from the macro averages.
    """

    n_test: int
    accuracy: float
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    macro_precision: float = float("nan")
    macro_recall: float = float("nan")
    macro_f1: float = float("nan")
    auc: float | None = None              # binary tasks: positive class = 1
    auc_per_class: list = field(default_factory=list)  # one-vs-rest
    confusion_matrix: list = field(default_factory=list)
    epoch: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LastThreeSummary:
    """Mean accuracy of the last three epochs plus the report nearest that mean."""

    accuracy_last3_avg: float
    accuracies: list
    selected: MetricsReport

    def to_dict(self) -> dict:
        return {
            "accuracy_last3_avg": self.accuracy_last3_avg,
            "accuracies": self.accuracies,
            "selected_epoch": self.selected.epoch,
            "selected": self.selected.to_dict(),
        }


def predict_in_batches(model: NoiseRobustModel, images: np.ndarray,
                       batch_size: int = 256):
    """Eval-mode predictions and softmax probabilities over (N, H, W, C) images."""
    was_training = model.training
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            x = torch.from_numpy(np.ascontiguousarray(chunk.transpose(0, 3, 1, 2)))
            probs.append(torch.softmax(model(x), dim=1).numpy())
    if was_training:
        model.train()
    probs = np.concatenate(probs, axis=0)
    return probs.argmax(axis=1), probs


def extract_features(model: NoiseRobustModel, images: np.ndarray,
                     batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    feats = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            x = torch.from_numpy(np.ascontiguousarray(chunk.transpose(0, 3, 1, 2)))
            feats.append(model.encode(x).numpy())
    if was_training:
        model.train()
    return np.concatenate(feats, axis=0)


def confusion_counts(true_labels, predicted, num_classes: int) -> np.ndarray:
    """C x C counts; rows are true classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(np.asarray(true_labels), np.asarray(predicted)):
        cm[int(t), int(p)] += 1
    return cm


def per_class_metrics(cm: np.ndarray):
    """Per-class precision/recall/F1 (percent); None where the class is absent."""
    c = cm.shape[0]
    precision, recall, f1 = [], [], []
    for k in range(c):
        tp = cm[k, k]
        support = cm[k, :].sum()
        predicted = cm[:, k].sum()
        if support == 0:
            warnings.warn(f"class {k} absent from the test set; metrics undefined",
                          stacklevel=3)
            precision.append(None)
            recall.append(None)
            f1.append(None)
            continue
        p = tp / predicted if predicted > 0 else 0.0
        r = tp / support
        f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        precision.append(100.0 * p)
        recall.append(100.0 * r)
        f1.append(100.0 * f)
    return precision, recall, f1


def _macro(values) -> float:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else float("nan")


def roc_auc(scores, labels):
    """Empirical ROC curve and trapezoidal AUC for binary labels.

    Ties in the scores are grouped into a single threshold. Returns
    ``(points, auc)`` where points is an (R, 2) array of (FPR, TPR) pairs
    starting at (0, 0) and ending at (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length 1-D arrays")
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives == 0 or negatives == 0:
        raise ValidationError("ROC needs both classes present in the labels")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    # Keep only the last index of each tied score: one point per threshold.
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    keep = np.concatenate([boundary, [scores.size - 1]])
    tpr = np.concatenate([[0.0], tp[keep] / positives])
    fpr = np.concatenate([[0.0], fp[keep] / negatives])
    auc = float(np.trapezoid(tpr, fpr))
    return np.column_stack([fpr, tpr]), auc


def evaluate(model: NoiseRobustModel, dataset: NoisyDataset,
             batch_size: int = 256, epoch: int | None = None) -> MetricsReport:
    """Score one frozen snapshot against a labeled test set."""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty test set")
    true = dataset.true_labels
    predicted, probs = predict_in_batches(model, dataset.images, batch_size)
    cm = confusion_counts(true, predicted, dataset.num_classes)
    precision, recall, f1 = per_class_metrics(cm)
    accuracy = 100.0 * float(np.trace(cm)) / len(dataset)

    auc_per_class: list = []
    for k in range(dataset.num_classes):
        binary = (true == k).astype(np.int64)
        if binary.min() == binary.max():
            auc_per_class.append(None)
            continue
        _, auc_k = roc_auc(probs[:, k], binary)
        auc_per_class.append(auc_k)
    auc = auc_per_class[1] if dataset.num_classes == 2 else None

    return MetricsReport(
        n_test=len(dataset),
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=_macro(precision),
        macro_recall=_macro(recall),
        macro_f1=_macro(f1),
        auc=auc,
        auc_per_class=auc_per_class,
        confusion_matrix=cm.tolist(),
        epoch=epoch,
    )


def summarize_last_epochs(reports) -> LastThreeSummary:
    """Mean accuracy over the given reports; auxiliary metrics come from the
    report nearest the mean (ties resolved toward the latest epoch)."""
    reports = list(reports)
    if not reports:
        raise ValidationError("need at least one report to summarize")
    accuracies = [r.accuracy for r in reports]
    mean_acc = float(np.mean(accuracies))
    best = None
    for r in reports:
        gap = abs(r.accuracy - mean_acc)
        if best is None or gap < best[0] - 1e-12 or (
                abs(gap - best[0]) <= 1e-12 and (r.epoch or 0) >= (best[1].epoch or 0)):
            best = (gap, r)
    return LastThreeSummary(accuracy_last3_avg=mean_acc, accuracies=accuracies,
                            selected=best[1])


def average_last3(reports) -> LastThreeSummary:
    """The reporting protocol proper: exactly the last three epochs."""
    reports = list(reports)
    if len(reports) != 3:
        raise ValidationError(f"expected exactly 3 reports, got {len(reports)}")
    return summarize_last_epochs(reports)


def export_features(model: NoiseRobustModel, dataset: NoisyDataset, path,
                    batch_size: int = 256) -> None:
    """Write one row per sample: index, true label, given label, then the
    encoder feature vector, tab-separated. Re-exported files are bitwise
    identical for the same snapshot and dataset."""
    features = extract_features(model, dataset.images, batch_size)
    d = features.shape[1]
    lines = [f"# {FEATURE_EXPORT_FORMAT}",
             "# columns: index\ttrue_label\tgiven_label\tf0..f%d" % (d - 1)]
    for rec, row in zip(dataset.records, features):
        values = "\t".join(repr(float(v)) for v in row)
        lines.append(f"{rec.index}\t{rec.true_label}\t{rec.given_label}\t{values}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_confusion_csv(path, confusion_matrix) -> None:
    cm = np.asarray(confusion_matrix, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write("true\\pred," + ",".join(str(k) for k in range(cm.shape[1])) + "\n")
        for t, row in enumerate(cm):
            fh.write(f"{t}," + ",".join(str(int(v)) for v in row) + "\n")


def write_roc_csv(path, points) -> None:
    with open(path, "w") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in np.asarray(points):
            fh.write(f"{fpr!r},{tpr!r}\n")


def write_report(path, payload: dict) -> None:
    """Pretty-printed JSON: readable by humans, parseable by machines."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
