"""Segmentation quality metrics and the per-image evaluation record."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyMask, InvalidProbability, SchemaError
from .masks import as_mask, boundary


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")


def dice(a, b) -> float:
    """Dice coefficient ``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    a, b = as_mask(a, "a"), as_mask(b, "b")
    _same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def soft_dice_loss(pred, target, epsilon: float = 1.0):
    """``1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)``.

    Works on numpy arrays (validated, returns a float) and on torch tensors
    (unvalidated, differentiable, sums over every element).
    """
    if not isinstance(pred, np.ndarray) and hasattr(pred, "requires_grad"):
        inter = (pred * target).sum()
        return 1.0 - (2.0 * inter + epsilon) / (pred.sum() + target.sum() + epsilon)
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    _same_shape(pred, target)
    if np.any(pred < 0) or np.any(pred > 1) or np.any(np.isnan(pred)):
        raise InvalidProbability("predicted probabilities must lie in [0, 1]")
    inter = float((pred * target).sum())
    return 1.0 - (2.0 * inter + epsilon) / (float(pred.sum() + target.sum()) + epsilon)


def soft_dice_grad(pred, target, epsilon: float = 1.0) -> np.ndarray:
    """Analytic gradient of :func:`soft_dice_loss` with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    _same_shape(pred, target)
    num = 2.0 * float((pred * target).sum()) + epsilon
    den = float(pred.sum() + target.sum()) + epsilon
    return -(2.0 * target * den - num) / den**2


def _boundary_points(a, b):
    a, b = as_mask(a, "a"), as_mask(b, "b")
    _same_shape(a, b)
    if not a.any() or not b.any():
        raise EmptyMask("Hausdorff distance needs two non-empty masks")
    return boundary(a).astype(float), boundary(b).astype(float)


def _directed(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    dist, _ = cKDTree(dst).query(src, k=1)
    return np.asarray(dist, dtype=float)


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance (pixels) between the boundary pixel sets."""
    pa, pb = _boundary_points(a, b)
    return float(max(_directed(pa, pb).max(), _directed(pb, pa).max()))


def hausdorff95(a, b) -> float:
    """95th percentile of the pooled boundary-to-boundary distances (pixels)."""
    pa, pb = _boundary_points(a, b)
    pooled = np.concatenate([_directed(pa, pb), _directed(pb, pa)])
    return float(np.percentile(pooled, 95))


def hausdorff_or_sentinel(a, b, metric=None) -> float:
    """Hausdorff distance (or ``metric``), or the image diagonal when either mask is empty."""
    try:
        return (metric or hausdorff)(a, b)
    except EmptyMask:
        h, w = np.shape(a)
        return math.hypot(h, w)


EVAL_FIELDS = (
    "image_id", "method", "stage", "postproc",
    "dice", "hausdorff_px", "hausdorff_mm", "runtime_s", "hd95_px",
)
POSTPROC_ARMS = ("none", "post-dae", "crf")
SKIPPED = "SKIPPED"


@dataclass
class EvalRecord:
    """One evaluated (image, predictor stage, post-processing) combination.

    Metric fields are ``None`` when the arm was skipped; ``runtime_s`` is
    ``None`` when timings are kept out of the results table. ``hd95_px`` is a
    supplementary robust distance; reports aggregate the exact Hausdorff.
    """

    image_id: str
    method: str
    stage: str
    postproc: str
    dice: float | None
    hausdorff_px: float | None
    hausdorff_mm: float | None
    runtime_s: float | None = None
    hd95_px: float | None = None

    def __post_init__(self):
        if self.postproc not in POSTPROC_ARMS:
            raise ValueError(f"unknown postproc {self.postproc!r}")
        if self.dice is not None and not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice out of range: {self.dice}")
        if self.runtime_s is not None and self.runtime_s < 0:
            raise ValueError("runtime_s must be >= 0")

    @property
    def skipped(self) -> bool:
        return self.dice is None

    @property
    def sort_key(self):
        return (self.method, self.stage, self.image_id, POSTPROC_ARMS.index(self.postproc))

    @classmethod
    def measure(cls, image_id, method, stage, postproc, truth, pred, spacing,
                runtime_s=None) -> "EvalRecord":
        hd = hausdorff_or_sentinel(truth, pred)
        return cls(image_id, method, stage, postproc, dice(truth, pred), hd,
                   hd * spacing, runtime_s, hausdorff_or_sentinel(truth, pred, hausdorff95))

    @classmethod
    def skipped_arm(cls, image_id, method, stage, postproc) -> "EvalRecord":
        return cls(image_id, method, stage, postproc, None, None, None, None, None)

    def to_row(self) -> dict:
        def fmt(v):
            if v is None:
                return SKIPPED if self.skipped else ""
            return repr(float(v))

        row = {k: getattr(self, k) for k in EVAL_FIELDS[:4]}
        for k in EVAL_FIELDS[4:7]:
            row[k] = fmt(getattr(self, k))
        row["runtime_s"] = "" if self.runtime_s is None else repr(float(self.runtime_s))
        row["hd95_px"] = fmt(self.hd95_px)
        return row

    @classmethod
    def from_row(cls, row: dict) -> "EvalRecord":
        def parse(v):
            return None if v in ("", SKIPPED, None) else float(v)

        return cls(row["image_id"], row["method"], row["stage"], row["postproc"],
                   *(parse(row[k]) for k in EVAL_FIELDS[4:]))


def records_to_csv(records, path=None) -> str:
    """Serialize records (sorted) with the fixed header; optionally write to ``path``."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=EVAL_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in sorted(records, key=lambda r: r.sort_key):
        writer.writerow(rec.to_row())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_records(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != EVAL_FIELDS:
            raise SchemaError(f"{path}: expected header {','.join(EVAL_FIELDS)}")
        records = [EvalRecord.from_row(row) for row in reader]
    if not records:
        raise SchemaError(f"{path}: no records")
    return records
