"""Detection and segmentation evaluation: IoU matching and P/R/f1 sweeps.

Matching is greedy per frame and class: predictions in descending score order
claim the unmatched ground-truth object with the highest overlap at or above
the threshold. Counts aggregate globally over the dataset. In polygon-raster
mode overlaps come from pixel-grid rasterization of the masks, and the report
additionally carries per-class precision and its mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np
from matplotlib.path import Path as _MplPath

from .streams import (
    BBox,
    DetectionStream,
    GroundTruth,
    PolygonPoints,
    _require,
)

__all__ = [
    "DEFAULT_IOU_THRESHOLDS",
    "MaskMode",
    "MatchPolicy",
    "ThresholdMetrics",
    "MetricsReport",
    "box_iou",
    "mask_iou",
    "harmonic_f1",
    "evaluate",
]

DEFAULT_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 10))


class MaskMode(str, Enum):
    BOX = "box"
    POLYGON_RASTER = "polygon-raster"


@dataclass(frozen=True)
class MatchPolicy:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    mask_mode: MaskMode = MaskMode.BOX

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_thresholds", tuple(self.iou_thresholds))
        _require(len(self.iou_thresholds) > 0, "iou_thresholds must not be empty")
        for t in self.iou_thresholds:
            _require(0.0 < t < 1.0, f"iou thresholds must lie in (0, 1), got {t}")
        for a, b in zip(self.iou_thresholds, self.iou_thresholds[1:]):
            _require(a < b, f"iou thresholds must be strictly ascending, got {a} before {b}")
        if not isinstance(self.mask_mode, MaskMode):
            object.__setattr__(self, "mask_mode", MaskMode(self.mask_mode))


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _raster(polygon: PolygonPoints, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    centers = np.column_stack([xs.ravel(), ys.ravel()])
    return _MplPath(np.asarray(polygon, dtype=float)).contains_points(centers)


def mask_iou(a: PolygonPoints, b: PolygonPoints, resolution: tuple[int, int]) -> float:
    """Pixel-set IoU of two polygons rasterized with the center-in-polygon rule.

    A polygon covering no pixel centers has raster area zero and scores 0
    against anything but an identical polygon.
    """
    width, height = int(resolution[0]), int(resolution[1])
    _require(width > 0 and height > 0, f"resolution must be positive, got {resolution!r}")
    a = tuple(tuple(p) for p in a)
    b = tuple(tuple(p) for p in b)
    if a == b:
        return 1.0
    coords = np.asarray(a + b, dtype=float)
    x0 = max(0, math.floor(coords[:, 0].min()))
    x1 = min(width, math.ceil(coords[:, 0].max()) + 1)
    y0 = max(0, math.floor(coords[:, 1].min()))
    y1 = min(height, math.ceil(coords[:, 1].max()) + 1)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    xs, ys = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
    in_a = _raster(a, xs, ys)
    in_b = _raster(b, xs, ys)
    union = int(np.count_nonzero(in_a | in_b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(in_a & in_b)) / union


def harmonic_f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _safe_ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ThresholdMetrics:
    """Counts and derived rates at one IoU threshold."""

    iou: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    class_precision: Mapping[str, float] | None = None
    mean_precision: float | None = None

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "iou": self.iou,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }
        if self.class_precision is not None:
            record["class_precision"] = dict(self.class_precision)
            record["mean_precision"] = self.mean_precision
        return record


@dataclass(frozen=True)
class MetricsReport:
    mask_mode: MaskMode
    thresholds: tuple[ThresholdMetrics, ...]

    def at(self, iou: float) -> ThresholdMetrics:
        """Row at a given threshold; KeyError when the sweep did not include it."""
        for row in self.thresholds:
            if math.isclose(row.iou, iou, abs_tol=1e-9):
                return row
        raise KeyError(f"report has no IoU threshold {iou}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mask_mode": self.mask_mode.value,
            "thresholds": [row.to_dict() for row in self.thresholds],
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "MetricsReport":
        rows = []
        for row in record["thresholds"]:
            rows.append(ThresholdMetrics(
                iou=row["iou"],
                tp=row["tp"],
                fp=row["fp"],
                fn=row["fn"],
                precision=row["precision"],
                recall=row["recall"],
                f1=row["f1"],
                class_precision=row.get("class_precision"),
                mean_precision=row.get("mean_precision"),
            ))
        return cls(mask_mode=MaskMode(record["mask_mode"]), thresholds=tuple(rows))


def _overlap_matrix(
    dets: Sequence,
    gts: Sequence,
    mode: MaskMode,
    resolution: tuple[int, int],
) -> list[list[float]]:
    matrix: list[list[float]] = []
    for det in dets:
        row = []
        for gt in gts:
            if mode is MaskMode.BOX:
                row.append(box_iou(det.bbox, gt.bbox))
            else:
                det_poly = det.mask if det.mask is not None else det.bbox.as_polygon()
                gt_poly = gt.polygon if gt.polygon is not None else gt.bbox.as_polygon()
                row.append(mask_iou(det_poly, gt_poly, resolution))
        matrix.append(row)
    return matrix


def _greedy_match(matrix: list[list[float]], n_gt: int, threshold: float) -> tuple[int, int, int]:
    """One-to-one greedy matching over a score-ordered overlap matrix."""
    taken = [False] * n_gt
    tp = 0
    for row in matrix:
        best_gt = -1
        best_iou = -1.0
        for g, iou in enumerate(row):
            if taken[g] or iou < threshold:
                continue
            if iou > best_iou:
                best_iou, best_gt = iou, g
        if best_gt >= 0:
            assert not taken[best_gt]
            taken[best_gt] = True
            tp += 1
    return tp, len(matrix) - tp, n_gt - tp


def _infer_resolution(pred: DetectionStream, truth: GroundTruth) -> tuple[int, int]:
    max_x, max_y = 1.0, 1.0
    for fr in pred.frames:
        for det in fr.detections:
            max_x = max(max_x, det.bbox.x_max)
            max_y = max(max_y, det.bbox.y_max)
    for frame_index in truth.frames():
        for obj in truth.get(frame_index):
            max_x = max(max_x, obj.bbox.x_max)
            max_y = max(max_y, obj.bbox.y_max)
    return (math.ceil(max_x) + 1, math.ceil(max_y) + 1)


def evaluate(pred: DetectionStream, truth: GroundTruth, policy: MatchPolicy) -> MetricsReport:
    """Sweep the policy's thresholds and aggregate dataset-level counts.

    Frames present only in the ground truth contribute all their objects as
    false negatives; predictions of classes absent from the ground truth count
    as false positives.
    """
    resolution = pred.resolution or _infer_resolution(pred, truth)
    pred_by_frame = pred.by_index()
    frames = sorted(set(pred_by_frame) | set(truth.objects))
    gt_classes = set(truth.classes())

    # Per (frame, class): score-ordered detections and their overlap matrix.
    groups: list[tuple[str, list[list[float]], int, int]] = []
    for frame_index in frames:
        fr = pred_by_frame.get(frame_index)
        dets = list(fr.detections) if fr is not None else []
        gts = list(truth.get(frame_index))
        classes = sorted({d.class_id for d in dets} | {g.class_id for g in gts})
        for class_id in classes:
            class_dets = sorted(
                (d for d in dets if d.class_id == class_id),
                key=lambda d: -d.score,
            )
            class_gts = [g for g in gts if g.class_id == class_id]
            matrix = _overlap_matrix(class_dets, class_gts, policy.mask_mode, resolution)
            groups.append((class_id, matrix, len(class_dets), len(class_gts)))

    rows = []
    for threshold in policy.iou_thresholds:
        total_tp = total_fp = total_fn = 0
        per_class: dict[str, list[int]] = {}
        for class_id, matrix, _n_det, n_gt in groups:
            tp, fp, fn = _greedy_match(matrix, n_gt, threshold)
            total_tp += tp
            total_fp += fp
            total_fn += fn
            tally = per_class.setdefault(class_id, [0, 0, 0])
            tally[0] += tp
            tally[1] += fp
            tally[2] += fn

        precision = _safe_ratio(total_tp, total_tp + total_fp)
        recall = _safe_ratio(total_tp, total_tp + total_fn)
        class_precision: dict[str, float] | None = None
        mean_precision: float | None = None
        if policy.mask_mode is MaskMode.POLYGON_RASTER:
            # Average only over ground-truth classes with at least one
            # prediction; precision is undefined for the rest.
            class_precision = {
                class_id: tally[0] / (tally[0] + tally[1])
                for class_id, tally in sorted(per_class.items())
                if class_id in gt_classes and (tally[0] + tally[1]) > 0
            }
            mean_precision = (
                sum(class_precision.values()) / len(class_precision) if class_precision else 0.0
            )
        rows.append(ThresholdMetrics(
            iou=threshold,
            tp=total_tp,
            fp=total_fp,
            fn=total_fn,
            precision=precision,
            recall=recall,
            f1=harmonic_f1(precision, recall),
            class_precision=class_precision,
            mean_precision=mean_precision,
        ))

    return MetricsReport(mask_mode=policy.mask_mode, thresholds=tuple(rows))
