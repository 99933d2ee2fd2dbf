"""Confusion-matrix accounting, OA/AA/Kappa, and classification-map output.

OA is trace/total, AA is the mean per-class recall (rows with no samples
are excluded with a warning), and Kappa is (p_o - p_e) / (1 - p_e) with
p_e the chance agreement of the marginals.  Maps are binary PPM (P6),
byte-exact for a given checkpoint and cube.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .data import HsiCube, LabelMap, Sidecar, SplitAssignment, patch_batch
from .engine import Tensor
from .errors import DataError, DimensionMismatchError
from .model import Model


def confusion_matrix(truth, predicted, num_classes: Optional[int] = None) -> np.ndarray:
    """K x K counts; rows are true class, columns predicted (labels 1..K)."""
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise DataError(
            f"label vectors must be 1-d and equal length, got "
            f"{truth.shape} and {predicted.shape}")
    if truth.size == 0:
        raise DataError("cannot build a confusion matrix from zero pairs")
    if num_classes is None:
        num_classes = int(max(truth.max(), predicted.max()))
    for name, arr in (("truth", truth), ("predicted", predicted)):
        if arr.min() < 1 or arr.max() > num_classes:
            raise DataError(
                f"{name} labels must lie in 1..{num_classes}, got range "
                f"[{arr.min()}, {arr.max()}]")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth - 1, predicted - 1), 1)
    return cm


@dataclass(frozen=True)
class Metrics:
    oa: float
    aa: float
    kappa: float
    per_class_recall: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "oa": self.oa, "aa": self.aa, "kappa": self.kappa,
            "oa_pct": 100.0 * self.oa, "aa_pct": 100.0 * self.aa,
            "kappa_x100": 100.0 * self.kappa,
            "per_class_recall": list(self.per_class_recall),
        }


def metrics(cm: np.ndarray) -> Metrics:
    """OA, AA and Kappa from a confusion matrix of counts."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise DataError("confusion matrix is empty")
    row_sums = cm.sum(axis=1)
    col_sums = cm.sum(axis=0)
    oa = float(np.trace(cm) / total)
    nonempty = row_sums > 0
    if not nonempty.all():
        warnings.warn(
            f"{int((~nonempty).sum())} class(es) have no samples; excluded from AA")
    recalls = np.full(cm.shape[0], np.nan)
    recalls[nonempty] = np.diag(cm)[nonempty] / row_sums[nonempty]
    aa = float(recalls[nonempty].mean())
    p_e = float((row_sums * col_sums).sum() / total ** 2)
    if p_e >= 1.0:
        raise DataError("degenerate label distribution: chance agreement is 1")
    kappa = (oa - p_e) / (1.0 - p_e)
    return Metrics(oa=oa, aa=aa, kappa=float(kappa),
                   per_class_recall=tuple(recalls.tolist()))


def predict_pixels(model: Model, cube: HsiCube, indices: np.ndarray,
                   batch_size: int = 64) -> np.ndarray:
    """EVAL-mode class predictions (1..K) for linear pixel indices."""
    out = np.empty(len(indices), dtype=np.int64)
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        patches = patch_batch(cube, chunk, model.spec.patch_size)
        logits = model.forward(Tensor(patches), "EVAL").data
        out[start:start + len(chunk)] = logits.argmax(axis=1) + 1
    return out


def evaluate_split(model: Model, cube: HsiCube, labels: LabelMap,
                   split: SplitAssignment, part: str,
                   batch_size: int = 64) -> dict:
    """Predict every pixel of a partition and report metrics (x100 forms
    included) plus the per-class table and the raw confusion matrix."""
    if (cube.height, cube.width) != (labels.height, labels.width):
        raise DimensionMismatchError(
            f"cube {cube.height}x{cube.width} vs labels "
            f"{labels.height}x{labels.width}")
    if cube.bands != model.spec.bands:
        raise DimensionMismatchError(
            f"cube has {cube.bands} bands, model expects {model.spec.bands}")
    indices = split.part(part)
    truth = labels.labels.reshape(-1)[indices].astype(np.int64)
    predicted = predict_pixels(model, cube, indices, batch_size)
    cm = confusion_matrix(truth, predicted, num_classes=model.spec.classes)
    m = metrics(cm)
    per_class = []
    for cls in range(model.spec.classes):
        per_class.append({
            "class": cls + 1,
            "support": int(cm[cls].sum()),
            "recall": m.per_class_recall[cls],
        })
    report = m.to_dict()
    report.update({
        "part": part,
        "pixels": int(len(indices)),
        "per_class": per_class,
        "confusion_matrix": cm.tolist(),
    })
    return report


def write_metrics_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_map(model: Model, cube: HsiCube, labels: LabelMap, sidecar: Sidecar,
               mask_unlabeled: bool = False, batch_size: int = 64) -> bytes:
    """Classify the scene into a binary PPM (P6) image.

    Every pixel is predicted; with mask_unlabeled, unlabeled ground-truth
    positions render black instead.
    """
    if sidecar.num_classes < model.spec.classes:
        raise DataError(
            f"palette covers {sidecar.num_classes} classes, model predicts "
            f"{model.spec.classes}")
    if (cube.height, cube.width) != (labels.height, labels.width):
        raise DimensionMismatchError(
            f"cube {cube.height}x{cube.width} vs labels "
            f"{labels.height}x{labels.width}")
    all_pixels = np.arange(cube.height * cube.width, dtype=np.int64)
    predicted = predict_pixels(model, cube, all_pixels, batch_size)
    if mask_unlabeled:
        predicted = np.where(labels.labels.reshape(-1) == 0, 0, predicted)
    palette = np.zeros((sidecar.num_classes + 1, 3), dtype=np.uint8)
    palette[1:] = np.asarray(sidecar.palette, dtype=np.uint8)
    image = palette[predicted].reshape(cube.height, cube.width, 3)
    header = f"P6\n{cube.width} {cube.height}\n255\n".encode()
    return header + image.tobytes()


def write_map(path, ppm_bytes: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes)
