"""Detection-record ingestion and confusion-matrix construction.

Parses ground-truth and prediction CSVs, matches predictions to ground
truth greedily by confidence and IoU, and tallies the class-labeled
(per object) and proposition-labeled (per frame and band) matrices.

The frame universe is the union of frame tokens seen in the ground-truth
and prediction inputs; a frame with no ground-truth object in some band
counts once toward that band's empty/empty cell, and detections that
match no annotation are ignored.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cm import (
    EMPTY_LABEL,
    ConfusionMatrix,
    DistanceBands,
    DistanceParamCM,
    band_for_distance,
    class_label_set,
    prop_label_for,
    prop_label_set,
)

Box = tuple[float, float, float, float]

GT_HEADER = ["frame", "x_min", "y_min", "x_max", "y_max", "distance_m", "class"]
PRED_HEADER = ["frame", "x_min", "y_min", "x_max", "y_max", "class", "confidence"]

DEFAULT_IOU_THRESHOLD = 0.5


class IngestError(ValueError):
    """Bad detection input: malformed CSV or unknown labels."""


def _check_box(box: Box) -> None:
    x0, y0, x1, y1 = box
    if not all(math.isfinite(v) for v in box):
        raise ValueError(f"box coordinates must be finite: {box}")
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"degenerate box: {box}")


@dataclass(frozen=True)
class DetectionRecord:
    """One annotated ground-truth object."""

    frame: str
    box: Box
    distance_m: float
    true_class: str

    def __post_init__(self):
        _check_box(self.box)
        if not (math.isfinite(self.distance_m) and self.distance_m > 0):
            raise ValueError(f"distance must be positive and finite: {self.distance_m}")
        if self.true_class == EMPTY_LABEL:
            raise ValueError(f"ground truth may not carry the {EMPTY_LABEL!r} label")


@dataclass(frozen=True)
class PredictionRecord:
    """One detector output."""

    frame: str
    box: Box
    pred_class: str
    confidence: float

    def __post_init__(self):
        _check_box(self.box)
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1]: {self.confidence}")
        if self.pred_class == EMPTY_LABEL:
            raise ValueError(f"predictions may not carry the {EMPTY_LABEL!r} label")


@dataclass(frozen=True)
class MatchResult:
    """Per-frame assignment of predictions to ground truth.

    ``matched_class[i]`` is the class claimed by the prediction assigned
    to ground-truth object i, or the empty label when it was missed.
    """

    matched_class: tuple[str, ...]
    unmatched_predictions: tuple[int, ...]


def iou(box_a: Box, box_b: Box) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 when disjoint."""
    _check_box(box_a)
    _check_box(box_b)
    ix = min(box_a[2], box_b[2]) - max(box_a[0], box_b[0])
    iy = min(box_a[3], box_b[3]) - max(box_a[1], box_b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (box_a[2] - box_a[0]) * (box_a[3] - box_a[1])
    area_b = (box_b[2] - box_b[0]) * (box_b[3] - box_b[1])
    return inter / (area_a + area_b - inter)


def match_frame(
    gts: Sequence[DetectionRecord],
    preds: Sequence[PredictionRecord],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Greedy one-to-one matching within a single frame.

    Predictions are visited in descending confidence (input order breaks
    ties); each takes the still-unmatched ground truth with the highest
    IoU at or above the threshold, lower ground-truth index winning ties.
    """
    frames = {g.frame for g in gts} | {p.frame for p in preds}
    if len(frames) > 1:
        raise IngestError(f"records from multiple frames: {sorted(frames)}")
    matched = [EMPTY_LABEL] * len(gts)
    taken = [False] * len(gts)
    unmatched = []
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    for i in order:
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(preds[i].box, gt.box)
            if v >= iou_threshold and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            taken[best_j] = True
            matched[best_j] = preds[i].pred_class
        else:
            unmatched.append(i)
    return MatchResult(tuple(matched), tuple(unmatched))


def _group_by_frame(gts, preds, classes):
    class_set = set(classes)
    for g in gts:
        if g.true_class not in class_set:
            raise IngestError(f"unknown class {g.true_class!r} in ground truth (frame {g.frame})")
    for p in preds:
        if p.pred_class not in class_set:
            raise IngestError(f"unknown class {p.pred_class!r} in predictions (frame {p.frame})")
    frames = sorted({g.frame for g in gts} | {p.frame for p in preds})
    gt_by = {f: [] for f in frames}
    pred_by = {f: [] for f in frames}
    for g in gts:
        gt_by[g.frame].append(g)
    for p in preds:
        pred_by[p.frame].append(p)
    return frames, gt_by, pred_by


def build_class_cm(
    gts: Sequence[DetectionRecord],
    preds: Sequence[PredictionRecord],
    classes: Sequence[str],
    bands: DistanceBands,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> DistanceParamCM:
    """Class-labeled matrices: one count per ground-truth object.

    Each object lands in its distance band with its matched class (empty
    on a miss); a (frame, band) pair without objects counts once as
    empty/empty.
    """
    labels = class_label_set(classes)
    frames, gt_by, pred_by = _group_by_frame(gts, preds, classes)
    n = len(labels)
    counts = np.zeros((len(bands), n, n), dtype=np.int64)
    e = labels.index(EMPTY_LABEL)
    for f in frames:
        fgts = gt_by[f]
        result = match_frame(fgts, pred_by[f], iou_threshold)
        occupied = set()
        for gt, pred_class in zip(fgts, result.matched_class):
            b = band_for_distance(bands, gt.distance_m)
            counts[b, labels.index(pred_class), labels.index(gt.true_class)] += 1
            occupied.add(b)
        for b in range(len(bands)):
            if b not in occupied:
                counts[b, e, e] += 1
    return DistanceParamCM(bands, tuple(ConfusionMatrix(labels, c) for c in counts))


def build_prop_cm(
    gts: Sequence[DetectionRecord],
    preds: Sequence[PredictionRecord],
    classes: Sequence[str],
    bands: DistanceBands,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> DistanceParamCM:
    """Proposition-labeled matrices: one count per (frame, band) pair.

    The true label is the set of classes present among the band's ground
    truth; the predicted label is the set of classes claimed by the
    predictions matched to those objects.
    """
    labels = prop_label_set(classes)
    frames, gt_by, pred_by = _group_by_frame(gts, preds, classes)
    n = len(labels)
    counts = np.zeros((len(bands), n, n), dtype=np.int64)
    for f in frames:
        fgts = gt_by[f]
        result = match_frame(fgts, pred_by[f], iou_threshold)
        true_sets = {b: set() for b in range(len(bands))}
        pred_sets = {b: set() for b in range(len(bands))}
        for gt, pred_class in zip(fgts, result.matched_class):
            b = band_for_distance(bands, gt.distance_m)
            true_sets[b].add(gt.true_class)
            if pred_class != EMPTY_LABEL:
                pred_sets[b].add(pred_class)
        for b in range(len(bands)):
            i = labels.index(prop_label_for(labels, pred_sets[b]))
            j = labels.index(prop_label_for(labels, true_sets[b]))
            counts[b, i, j] += 1
    return DistanceParamCM(bands, tuple(ConfusionMatrix(labels, c) for c in counts))


def _read_csv(path, header: list[str]):
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            first = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if [h.strip() for h in first] != header:
            raise IngestError(
                f"{path}: line 1: expected header {','.join(header)!r}, got {','.join(first)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, row


def read_ground_truth_csv(path) -> list[DetectionRecord]:
    records = []
    for lineno, row in _read_csv(path, GT_HEADER):
        try:
            records.append(
                DetectionRecord(
                    frame=row[0].strip(),
                    box=(float(row[1]), float(row[2]), float(row[3]), float(row[4])),
                    distance_m=float(row[5]),
                    true_class=row[6].strip(),
                )
            )
        except ValueError as e:
            raise IngestError(f"{path}: line {lineno}: {e}") from None
    return records


def read_predictions_csv(path) -> list[PredictionRecord]:
    records = []
    for lineno, row in _read_csv(path, PRED_HEADER):
        try:
            records.append(
                PredictionRecord(
                    frame=row[0].strip(),
                    box=(float(row[1]), float(row[2]), float(row[3]), float(row[4])),
                    pred_class=row[5].strip(),
                    confidence=float(row[6]),
                )
            )
        except ValueError as e:
            raise IngestError(f"{path}: line {lineno}: {e}") from None
    return records
