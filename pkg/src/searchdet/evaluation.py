"""COCO-format dataset loading and average-precision computation.

AP per class is the exact area under the interpolated precision-recall
curve (precision envelope), computed from a greedy score-descending match:
each detection claims the unmatched ground-truth box of its image with the
highest IoU at or above the threshold. mAP averages over classes that have
at least one ground-truth instance. Sort order is made deterministic by
tie-breaking on (image id, bbox), so results depend only on scores, never
on input order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .images import box_iou, xywh_to_xyxy

IOU_5095 = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class ImageInfo:
    path: str
    height: int
    width: int


@dataclass(frozen=True)
class Annotation:
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]  # half-open xyxy
    mask: dict | None = None  # RLE, when present in the source


@dataclass(frozen=True)
class GroundTruth:
    images: dict[int, ImageInfo]
    annotations: tuple[Annotation, ...]
    categories: dict[int, str]

    def instances(self, category_id: int) -> int:
        return sum(1 for a in self.annotations if a.category_id == category_id)


def load_ground_truth(path: str | Path) -> GroundTruth:
    """Parse and validate a COCO annotation file; unknown fields are ignored."""
    raw = Path(path).read_text()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"malformed annotation JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return ground_truth_from_dict(doc)


def ground_truth_from_dict(doc: dict) -> GroundTruth:
    try:
        images = {
            int(im["id"]): ImageInfo(
                path=str(im.get("file_name", "")),
                height=int(im["height"]),
                width=int(im["width"]),
            )
            for im in doc["images"]
        }
        categories = {int(c["id"]): str(c["name"]) for c in doc["categories"]}
        annotations = []
        for ann in doc["annotations"]:
            annotations.append(
                Annotation(
                    image_id=int(ann["image_id"]),
                    category_id=int(ann["category_id"]),
                    bbox=xywh_to_xyxy(ann["bbox"]),
                    mask=ann.get("segmentation") if isinstance(ann.get("segmentation"), dict) else None,
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"annotation document missing or malformed field: {exc}") from exc

    problems = []
    for idx, ann in enumerate(annotations):
        if ann.image_id not in images:
            problems.append(f"annotation {idx} references missing image id {ann.image_id}")
            continue
        if ann.category_id not in categories:
            problems.append(f"annotation {idx} references missing category id {ann.category_id}")
            continue
        info = images[ann.image_id]
        x0, y0, x1, y1 = ann.bbox
        if x0 < 0 or y0 < 0 or x1 > info.width + 1e-6 or y1 > info.height + 1e-6 or x1 <= x0 or y1 <= y0:
            problems.append(f"annotation {idx} bbox {ann.bbox} outside image {ann.image_id} bounds")
    if problems:
        raise ValidationError("invalid ground truth: " + "; ".join(problems))
    return GroundTruth(images=images, annotations=tuple(annotations), categories=categories)


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    per_class_ap: dict[int, dict[float, float]]  # category -> iou threshold -> AP
    map50: float
    map5095: float
    counts: dict[int, dict[float, ClassCounts]]
    iou_thresholds: tuple[float, ...]
    pr_curves: dict[int, dict[float, tuple[tuple[float, ...], tuple[float, ...]]]] = field(
        default_factory=dict, compare=False, repr=False
    )

    def class_ap50(self, category_id: int) -> float:
        return self.per_class_ap[category_id][0.5]

    def to_dict(self) -> dict:
        return {
            "map50": self.map50,
            "map5095": self.map5095,
            "iou_thresholds": list(self.iou_thresholds),
            "per_class_ap": {
                str(cid): {f"{thr:.2f}": ap for thr, ap in sorted(aps.items())}
                for cid, aps in sorted(self.per_class_ap.items())
            },
            "counts": {
                str(cid): {
                    f"{thr:.2f}": {"tp": c.tp, "fp": c.fp, "fn": c.fn}
                    for thr, c in sorted(by_thr.items())
                }
                for cid, by_thr in sorted(self.counts.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["category_id", "iou_threshold", "ap", "tp", "fp", "fn"])
        for cid in sorted(self.per_class_ap):
            for thr in self.iou_thresholds:
                c = self.counts[cid][thr]
                writer.writerow([cid, f"{thr:.2f}", f"{self.per_class_ap[cid][thr]:.6f}", c.tp, c.fp, c.fn])
        return buf.getvalue()


def _interpolated_ap(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Exact area under the monotone (interpolated) precision envelope."""
    if recalls.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recalls, envelope):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return float(ap)


def _sorted_detections(dets: list[dict]) -> list[dict]:
    # deterministic: scores first, then stable content keys
    return sorted(
        dets,
        key=lambda d: (-float(d["score"]), int(d["image_id"]), tuple(float(v) for v in d["bbox"])),
    )


def evaluate(
    detections: list[dict],
    gt: GroundTruth,
    iou_thresholds=IOU_5095,
) -> EvalReport:
    """Score COCO-results records against ground truth.

    Detections must reference known image and category ids. Categories with
    zero ground-truth instances are excluded from the means.
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    if not thresholds:
        raise ValidationError("at least one IoU threshold is required")
    problems = []
    for idx, det in enumerate(detections):
        if int(det["image_id"]) not in gt.images:
            problems.append(f"detection {idx} references unknown image id {det['image_id']}")
        if int(det["category_id"]) not in gt.categories:
            problems.append(f"detection {idx} references unknown category id {det['category_id']}")
    if problems:
        raise ValidationError("invalid detections: " + "; ".join(problems))

    gt_by_class: dict[int, dict[int, list[tuple[float, float, float, float]]]] = {}
    for ann in gt.annotations:
        gt_by_class.setdefault(ann.category_id, {}).setdefault(ann.image_id, []).append(ann.bbox)

    per_class_ap: dict[int, dict[float, float]] = {}
    counts: dict[int, dict[float, ClassCounts]] = {}
    pr_curves: dict[int, dict[float, tuple[tuple[float, ...], tuple[float, ...]]]] = {}

    for cid in sorted(gt_by_class):
        class_gt = gt_by_class[cid]
        n_gt = sum(len(v) for v in class_gt.values())
        class_dets = _sorted_detections(
            [d for d in detections if int(d["category_id"]) == cid]
        )
        per_class_ap[cid] = {}
        counts[cid] = {}
        pr_curves[cid] = {}
        for thr in thresholds:
            matched: dict[int, list[bool]] = {img: [False] * len(b) for img, b in class_gt.items()}
            tp_flags = np.zeros(len(class_dets), dtype=bool)
            for i, det in enumerate(class_dets):
                img = int(det["image_id"])
                boxes = class_gt.get(img, [])
                best_iou, best_j = thr, -1
                for j, gt_box in enumerate(boxes):
                    if matched[img][j]:
                        continue
                    iou = box_iou(xywh_to_xyxy(det["bbox"]), gt_box)
                    if iou >= best_iou and (best_j < 0 or iou > best_iou):
                        best_iou, best_j = iou, j
                if best_j >= 0:
                    matched[img][best_j] = True
                    tp_flags[i] = True
            tp_cum = np.cumsum(tp_flags)
            fp_cum = np.cumsum(~tp_flags)
            recalls = tp_cum / n_gt
            precisions = tp_cum / np.maximum(tp_cum + fp_cum, 1)
            per_class_ap[cid][thr] = _interpolated_ap(recalls, precisions)
            tp_total = int(tp_cum[-1]) if len(class_dets) else 0
            counts[cid][thr] = ClassCounts(
                tp=tp_total,
                fp=len(class_dets) - tp_total,
                fn=n_gt - tp_total,
            )
            pr_curves[cid][thr] = (tuple(recalls.tolist()), tuple(precisions.tolist()))

    classes = sorted(per_class_ap)
    map50 = float(np.mean([per_class_ap[c][0.5] for c in classes])) if classes and 0.5 in thresholds else 0.0
    map5095 = (
        float(np.mean([np.mean([per_class_ap[c][t] for t in thresholds]) for c in classes]))
        if classes
        else 0.0
    )
    return EvalReport(
        per_class_ap=per_class_ap,
        map50=map50,
        map5095=map5095,
        counts=counts,
        iou_thresholds=thresholds,
        pr_curves=pr_curves,
    )
