"""Per-pixel similarity heatmaps from patch features.

The heatmap path pools each exemplar's patch grid down to one mean-patch
vector, builds an adjusted query from those (attending with the input
image's own mean-patch vector), computes per-patch cosine similarity on the
input grid, and upsamples to pixel resolution. Binarization thresholds at
an empirical quantile so roughly the brightest ``1 - quantile`` fraction of
pixels survives.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .attention import adjusted_query
from .embeddings import PatchGrid

UPSAMPLE_MODES = ("bilinear", "nearest")


@dataclass(frozen=True)
class Heatmap:
    """Similarity values in [-1, 1] per pixel, plus an optional binarized form."""

    values: np.ndarray
    binary: np.ndarray | None = None
    threshold_used: float | None = None

    def __post_init__(self):
        self.values.setflags(write=False)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heatmap values must be finite")
        if self.binary is not None:
            self.binary.setflags(write=False)
            if self.binary.shape != self.values.shape:
                raise ValueError("binary mask shape mismatch")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def mean_patch_embedding(grid: PatchGrid) -> np.ndarray:
    """Average of all patch vectors in a grid."""
    feats = grid.features
    if feats.size == 0:
        raise ValueError("patch grid is empty")
    return feats.reshape(-1, feats.shape[-1]).mean(axis=0)


def exemplar_pooled_embeddings(positive_grids, negative_grids=()):
    """One mean-patch vector per exemplar image, positives and negatives apart."""
    pos = [mean_patch_embedding(g) for g in positive_grids]
    neg = [mean_patch_embedding(g) for g in negative_grids]
    if not pos:
        raise ValueError("at least one positive patch grid is required")
    return pos, neg


def heatmap_query(
    input_grid: PatchGrid,
    positive_grids,
    negative_grids=(),
    pooling: str = "attention",
) -> np.ndarray:
    """Adjusted query for the heatmap path, built in mean-patch space."""
    pos, neg = exemplar_pooled_embeddings(positive_grids, negative_grids)
    attention_q = mean_patch_embedding(input_grid)
    return adjusted_query(attention_q, pos, neg, pooling=pooling).vector


def _upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize; exact at patch centers."""
    h, w = grid.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _upsample_nearest(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = grid.shape
    ys = np.clip(((np.arange(out_h) + 0.5) * (h / out_h)).astype(int), 0, h - 1)
    xs = np.clip(((np.arange(out_w) + 0.5) * (w / out_w)).astype(int), 0, w - 1)
    return grid[np.ix_(ys, xs)]


def compute_heatmap(
    input_grid: PatchGrid,
    pooled_query,
    image_size: tuple[int, int] | None = None,
    upsample: str = "bilinear",
) -> Heatmap:
    """Cosine similarity of the query against each patch, upsampled to pixels.

    ``image_size`` defaults to the grid's declared image size. Values are
    clamped to [-1, 1] after interpolation.
    """
    if upsample not in UPSAMPLE_MODES:
        raise ValueError(f"upsample must be one of {UPSAMPLE_MODES}, got {upsample!r}")
    q = np.asarray(pooled_query, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("pooled query must be 1-D")
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("pooled query is the zero vector")
    feats = input_grid.features
    if feats.shape[-1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: grid d={feats.shape[-1]}, query d={q.shape[0]}")

    norms = np.linalg.norm(feats, axis=-1)
    dots = feats @ q
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0.0, dots / (norms * qn), 0.0)
    sims = np.clip(sims, -1.0, 1.0)

    out_h, out_w = image_size if image_size is not None else input_grid.image_size
    if out_h < feats.shape[0] or out_w < feats.shape[1]:
        raise ValueError("target size must be at least the patch grid size")
    if upsample == "nearest":
        up = _upsample_nearest(sims, out_h, out_w)
    else:
        up = _upsample_bilinear(sims, out_h, out_w)
    return Heatmap(values=np.clip(up, -1.0, 1.0))


def binarize(hm: Heatmap, quantile: float) -> Heatmap:
    """Threshold at the given empirical quantile; pixels >= threshold are true.

    The threshold is the lower-order-statistic quantile, so the global
    maximum is always kept for any quantile < 1 and raising the quantile
    never adds pixels.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must be in (0, 1), got {quantile}")
    threshold = float(np.quantile(hm.values, quantile, method="lower"))
    binary = hm.values >= threshold
    return Heatmap(values=hm.values, binary=binary, threshold_used=threshold)


def overlay_png(pixels: np.ndarray, hm: Heatmap, alpha: float = 0.55) -> bytes:
    """Blend a heatmap over an RGB image; returns PNG bytes for debug output."""
    from matplotlib import colormaps

    norm = (np.clip(hm.values, -1.0, 1.0) + 1.0) / 2.0
    colored = (colormaps["magma"](norm)[..., :3] * 255).astype(np.uint8)
    base = np.asarray(pixels, dtype=np.float64)
    blend = ((1 - alpha) * base + alpha * colored).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(blend).save(buf, format="PNG")
    return buf.getvalue()
