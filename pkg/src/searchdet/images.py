"""Raster loading and small mask/bbox helpers used throughout the pipeline.

Bounding boxes are half-open pixel rectangles ``(x_min, y_min, x_max, y_max)``
so that ``width == x_max - x_min``, matching numpy slicing. COCO-style
``[x, y, w, h]`` boxes convert via :func:`xyxy_to_xywh` / :func:`xywh_to_xyxy`.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

Box = tuple[float, float, float, float]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_text(text: str) -> str:
    return sha256_bytes(text.encode("utf-8"))


@dataclass(frozen=True)
class Raster:
    """An RGB image plus the stable key backends use to identify it.

    Images loaded from disk are keyed by the sha256 of the file bytes;
    programmatically built images carry an explicit key.
    """

    pixels: np.ndarray  # uint8, shape (H, W, 3)
    key: str

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise InputError(f"raster must be uint8 (H, W, 3), got {px.dtype} {px.shape}")
        px.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_bytes(cls, data: bytes, key: str | None = None) -> "Raster":
        try:
            with Image.open(io.BytesIO(data)) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise InputError(f"cannot decode image: {exc}") from exc
        return cls(pixels=arr, key=key or sha256_bytes(data))

    @classmethod
    def from_file(cls, path: str | Path) -> "Raster":
        data = Path(path).read_bytes()
        return cls.from_bytes(data)

    @classmethod
    def from_array(cls, arr: np.ndarray, key: str) -> "Raster":
        return cls(pixels=np.ascontiguousarray(arr, dtype=np.uint8), key=key)

    def save_png(self, path: str | Path) -> None:
        Image.fromarray(self.pixels).save(str(path), format="PNG")


def decode_image_bytes(data: bytes) -> tuple[np.ndarray, str]:
    """Decode to an RGB array; returns (pixels, format name). Raises InputError."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            fmt = (im.format or "png").lower()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"cannot decode image: {exc}") from exc
    return arr, fmt


def as_bool_mask(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise InputError(f"mask must be 2-D, got shape {m.shape}")
    return m.astype(bool)


def mask_sha256(mask: np.ndarray) -> str:
    """Content hash of a binary mask (0/1 bytes, row-major)."""
    m = as_bool_mask(mask)
    return sha256_bytes(np.ascontiguousarray(m, dtype=np.uint8).tobytes())


def tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Half-open bbox of the foreground; raises on an all-background mask."""
    m = as_bool_mask(mask)
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise InputError("mask has no foreground pixels")
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def box_iou(a: Box, b: Box) -> float:
    """IoU of two half-open boxes."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(inter / union) if union > 0 else 0.0


def xyxy_to_xywh(box: Box) -> list[float]:
    x0, y0, x1, y1 = box
    return [float(x0), float(y0), float(x1 - x0), float(y1 - y0)]


def xywh_to_xyxy(box) -> Box:
    x, y, w, h = box
    return (float(x), float(y), float(x + w), float(y + h))
