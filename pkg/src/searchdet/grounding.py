"""Fusing verified regions with the binarized heatmap into scored detections.

A verified region becomes a detection when its mask overlaps at least one
true pixel of the binarized heatmap. The detection keeps the full region
mask and its tight bbox (the heatmap gates existence; the segmentation mask
carries the extent). Confidence is the cosine similarity between the region
embedding and the pooled adjusted query, mapped affinely onto [0, 1].
Near-duplicate boxes are deduplicated keeping the higher score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import QueryBundle, cosine_similarity
from .heatmap import Heatmap
from .images import box_iou, xyxy_to_xywh
from .regions import EmbeddedRegion

DEFAULT_DEDUPE_IOU = 0.9


@dataclass(frozen=True)
class Detection:
    label: str
    bbox: tuple[int, int, int, int]
    mask: np.ndarray
    score: float

    def __post_init__(self):
        self.mask.setflags(write=False)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


def dedupe_detections(detections: list[Detection], iou_threshold: float = DEFAULT_DEDUPE_IOU) -> list[Detection]:
    """Greedy suppression of boxes with pairwise IoU above the threshold.

    Higher scores win; ties keep the earlier detection. Idempotent.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(box_iou(detections[i].bbox, detections[j].bbox) <= iou_threshold for j in kept):
            kept.append(i)
    kept.sort()
    return [detections[i] for i in kept]


def ground(
    verified_regions: list[EmbeddedRegion],
    hm: Heatmap | None,
    bundle: QueryBundle,
    label: str,
    dedupe_iou: float = DEFAULT_DEDUPE_IOU,
) -> list[Detection]:
    """One detection per verified region that intersects the heatmap.

    ``hm`` must be binarized; passing None skips the heatmap gate entirely
    (the no-heatmap ablation).
    """
    if hm is not None and hm.binary is None:
        raise ValueError("heatmap must be binarized before grounding")
    pooled = bundle.pooled_query.vector
    detections: list[Detection] = []
    for er in verified_regions:
        mask = er.region.mask
        if hm is not None:
            if mask.shape != hm.values.shape:
                raise ValueError(
                    f"region mask shape {mask.shape} does not match heatmap {hm.values.shape}"
                )
            if not np.any(mask & hm.binary):
                continue
        score = (cosine_similarity(er.embedding.values, pooled) + 1.0) / 2.0
        detections.append(
            Detection(
                label=label,
                bbox=er.region.bbox,
                mask=mask,
                score=float(np.clip(score, 0.0, 1.0)),
            )
        )
    return dedupe_detections(detections, dedupe_iou)


def rle_encode(mask: np.ndarray) -> dict:
    """Uncompressed COCO RLE: column-major run lengths, starting with zeros."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    flat = m.flatten(order="F").astype(np.int8)
    counts: list[int] = []
    if flat.size:
        changes = np.flatnonzero(np.diff(flat)) + 1
        boundaries = np.concatenate(([0], changes, [flat.size]))
        runs = np.diff(boundaries).tolist()
        if flat[0] == 1:
            counts.append(0)  # RLE starts with the count of zeros
        counts.extend(int(r) for r in runs)
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for count in rle["counts"]:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    if pos != h * w:
        raise ValueError(f"RLE covers {pos} px, expected {h * w}")
    return flat.reshape((h, w), order="F")


def detections_to_coco(
    detections: list[Detection],
    image_id: int,
    category_id: int,
    include_masks: bool = True,
) -> list[dict]:
    """COCO results records: bbox as [x, y, w, h] plus optional RLE masks."""
    records = []
    for det in detections:
        rec = {
            "image_id": int(image_id),
            "category_id": int(category_id),
            "bbox": xyxy_to_xywh(det.bbox),
            "score": float(det.score),
        }
        if include_masks:
            rec["segmentation"] = rle_encode(det.mask)
        records.append(rec)
    return records
