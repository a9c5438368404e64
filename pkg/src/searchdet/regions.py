"""Class-agnostic region proposals and their masked-region embeddings.

The segmentation backend yields raw binary masks (optionally with a
stability score and a claimed bbox); proposals are normalized to carry the
tight bounding box of their own foreground, filtered by an area floor, and
capped at a maximum count ranked by area then stability.
"""

from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import Embedding, EmbeddingBackend
from .errors import BackendError, InputError
from .images import Raster, as_bool_mask, tight_bbox

DEFAULT_MIN_AREA_FRACTION = 0.0005  # 0.05% of image pixels
DEFAULT_MAX_MASKS = 100


@dataclass(frozen=True)
class RegionMask:
    """One binary segmentation mask with its tight half-open bbox and area."""

    mask: np.ndarray
    bbox: tuple[int, int, int, int]
    area: int
    stability_score: float | None = None

    def __post_init__(self):
        self.mask.setflags(write=False)
        if self.area <= 0 or self.area > self.mask.size:
            raise ValueError(f"area {self.area} out of range for mask of {self.mask.size} px")
        if self.bbox != tight_bbox(self.mask):
            raise ValueError("bbox is not the tight bounding box of the mask foreground")

    @classmethod
    def from_mask(cls, mask, stability_score: float | None = None) -> "RegionMask":
        m = as_bool_mask(mask)
        return cls(
            mask=m,
            bbox=tight_bbox(m),
            area=int(m.sum()),
            stability_score=stability_score,
        )


@dataclass(frozen=True)
class ProposedMask:
    """Raw backend output; bbox_hint (possibly loose) is recomputed away."""

    mask: np.ndarray
    stability_score: float | None = None
    bbox_hint: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class EmbeddedRegion:
    region: RegionMask
    embedding: Embedding


class SegmentationBackend(ABC):
    """Produces raw mask proposals for an image; single-flight per instance."""

    def __init__(self):
        self._lock = threading.Lock()

    @property
    @abstractmethod
    def backend_id(self) -> str: ...

    @abstractmethod
    def _generate(self, image: Raster) -> list[ProposedMask]: ...

    def generate(self, image: Raster) -> list[ProposedMask]:
        with self._lock:
            return self._generate(image)


class FixtureSegmentationBackend(SegmentationBackend):
    """Masks registered per image key, in memory or from a directory of PNGs.

    Directory layout: ``<root>/index.json`` with entries
    ``[{image_key, masks: [{path, stability_score, bbox?}]}]``; each path is a
    binary PNG relative to the root. A bbox in the index is treated as a
    hint only and never trusted.
    """

    def __init__(self, masks_by_key: dict[str, list[ProposedMask]] | None = None):
        super().__init__()
        self._masks: dict[str, list[ProposedMask]] = dict(masks_by_key or {})

    @property
    def backend_id(self) -> str:
        return "fixture-segmentation"

    def register(self, image_key: str, mask, stability_score: float | None = None,
                 bbox_hint=None) -> None:
        self._masks.setdefault(image_key, []).append(
            ProposedMask(mask=as_bool_mask(mask), stability_score=stability_score,
                         bbox_hint=tuple(bbox_hint) if bbox_hint else None)
        )

    def _generate(self, image: Raster) -> list[ProposedMask]:
        if image.key not in self._masks:
            raise BackendError(f"fixture has no masks registered for key '{image.key}'")
        return list(self._masks[image.key])

    @classmethod
    def from_dir(cls, root: str | Path) -> "FixtureSegmentationBackend":
        root = Path(root)
        index_path = root / "index.json"
        if not index_path.exists():
            raise BackendError(f"no index.json under {root}")
        index = json.loads(index_path.read_text())
        backend = cls()
        for entry in index:
            key = entry["image_key"]
            for spec in entry["masks"]:
                arr = np.asarray(Raster.from_file(root / spec["path"]).pixels[:, :, 0])
                backend.register(
                    key,
                    arr > 127,
                    stability_score=spec.get("stability_score"),
                    bbox_hint=spec.get("bbox"),
                )
        return backend


def propose_regions(
    image: Raster,
    backend: SegmentationBackend,
    min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
    max_masks: int = DEFAULT_MAX_MASKS,
) -> list[RegionMask]:
    """Normalized, filtered region proposals in the backend's order.

    Empty and sub-floor masks are dropped. When more than ``max_masks``
    remain, the largest (by area, then stability score) are kept, still in
    original order.
    """
    proposals = backend.generate(image)
    floor = min_area_fraction * image.height * image.width
    regions: list[RegionMask] = []
    for prop in proposals:
        m = as_bool_mask(prop.mask)
        if m.shape != (image.height, image.width):
            raise InputError(
                f"proposal mask shape {m.shape} does not match image "
                f"{image.height}x{image.width}"
            )
        if not m.any():
            continue
        region = RegionMask.from_mask(m, stability_score=prop.stability_score)
        if region.area >= floor:
            regions.append(region)
    if len(regions) > max_masks:
        ranked = sorted(
            range(len(regions)),
            key=lambda i: (
                -regions[i].area,
                -(regions[i].stability_score or 0.0),
                i,
            ),
        )
        keep = sorted(ranked[:max_masks])
        regions = [regions[i] for i in keep]
    return regions


def embed_regions(
    image: Raster,
    regions: list[RegionMask],
    backend: EmbeddingBackend,
    workers: int = 1,
) -> list[EmbeddedRegion]:
    """One EmbeddedRegion per input region, order preserved."""
    if workers > 1 and len(regions) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            embeddings = list(pool.map(lambda r: backend.embed_masked_region(image, r.mask), regions))
    else:
        embeddings = [backend.embed_masked_region(image, r.mask) for r in regions]
    return [EmbeddedRegion(region=r, embedding=e) for r, e in zip(regions, embeddings)]
