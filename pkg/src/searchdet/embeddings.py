"""Embedding backend interface, file-backed fixture backend, and disk cache.

A backend produces three embedding kinds at a single fixed dimension:
whole-image ("global"), per-patch grids ("patch"), and masked-region
("region", the global embedding of the image with everything outside the
mask zeroed). The fixture backend serves pre-registered vectors from a JSON
file keyed by image key (region entries use ``"<image key>#<mask sha256>"``),
which lets every pipeline stage run without model weights.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackendError, InputError
from .images import Raster, as_bool_mask, mask_sha256

EMBEDDING_KINDS = ("global", "patch", "region")
MIN_IMAGE_SIDE = 32


@dataclass(frozen=True)
class Embedding:
    """A fixed-dimension real vector from the vision backbone."""

    values: np.ndarray
    kind: str
    source_id: str

    def __post_init__(self):
        if self.kind not in EMBEDDING_KINDS:
            raise ValueError(f"kind must be one of {EMBEDDING_KINDS}, got {self.kind!r}")
        if self.values.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")
        self.values.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PatchGrid:
    """Patch features of shape (h_p, w_p, d) covering an image of image_size."""

    features: np.ndarray
    image_size: tuple[int, int]
    patch_stride: int

    def __post_init__(self):
        f = self.features
        if f.ndim != 3:
            raise ValueError(f"patch grid must be (h, w, d), got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("patch grid contains non-finite values")
        h_p, w_p = f.shape[:2]
        height, width = self.image_size
        if self.patch_stride < 1:
            raise ValueError("patch stride must be >= 1")
        for cells, extent, axis in ((h_p, height, "height"), (w_p, width, "width")):
            if cells * self.patch_stride < extent or (cells - 1) * self.patch_stride >= extent:
                raise ValueError(
                    f"grid does not cover image {axis} within one stride: "
                    f"{cells} cells x stride {self.patch_stride} vs {extent} px"
                )
        f.setflags(write=False)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.features.shape[:2]

    @property
    def dimension(self) -> int:
        return self.features.shape[2]


def _check_image(image: Raster) -> None:
    if min(image.height, image.width) < MIN_IMAGE_SIDE:
        raise InputError(
            f"image '{image.key}' is {image.width}x{image.height}; "
            f"min side is {MIN_IMAGE_SIDE} px"
        )


def _check_mask(image: Raster, mask: np.ndarray) -> np.ndarray:
    m = as_bool_mask(mask)
    if m.shape != (image.height, image.width):
        raise InputError(
            f"mask shape {m.shape} does not match image {image.height}x{image.width}"
        )
    if not m.any():
        raise InputError("mask has no foreground pixels")
    return m


class EmbeddingBackend(ABC):
    """Uniform interface over the vision backbone.

    Implementations must be deterministic for identical input bytes and
    configuration, and safe for concurrent read-only use.
    """

    @property
    @abstractmethod
    def backend_id(self) -> str: ...

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def _embed_global(self, image: Raster) -> np.ndarray: ...

    @abstractmethod
    def _embed_patches(self, image: Raster) -> PatchGrid: ...

    @abstractmethod
    def _embed_region(self, image: Raster, mask: np.ndarray) -> np.ndarray: ...

    def embed_global(self, image: Raster) -> Embedding:
        _check_image(image)
        return Embedding(values=self._embed_global(image), kind="global", source_id=image.key)

    def embed_patches(self, image: Raster) -> PatchGrid:
        _check_image(image)
        return self._embed_patches(image)

    def embed_masked_region(self, image: Raster, mask: np.ndarray) -> Embedding:
        _check_image(image)
        m = _check_mask(image, mask)
        if m.all():
            # masking away nothing is the identity: reuse the global vector
            values = self._embed_global(image)
        else:
            values = self._embed_region(image, m)
        return Embedding(
            values=values,
            kind="region",
            source_id=f"{image.key}#{mask_sha256(m)}",
        )


def region_key(image_key: str, mask: np.ndarray) -> str:
    """Fixture-file key for a masked-region entry."""
    return f"{image_key}#{mask_sha256(mask)}"


def _grid_stride(image_size: tuple[int, int], grid_shape: tuple[int, int]) -> int:
    stride = max(math.ceil(image_size[0] / grid_shape[0]), math.ceil(image_size[1] / grid_shape[1]))
    return max(stride, 1)


class FixtureEmbeddingBackend(EmbeddingBackend):
    """Serves registered vectors by key; unknown keys raise, never guess."""

    def __init__(self, dimension: int, entries: dict | None = None, patch_grids: dict | None = None):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self._dimension = int(dimension)
        self._entries: dict[str, np.ndarray] = {}
        self._grids: dict[str, np.ndarray] = {}
        for key, vec in (entries or {}).items():
            self.register(key, vec)
        for key, grid in (patch_grids or {}).items():
            self.register_patch_grid(key, grid)

    @property
    def backend_id(self) -> str:
        return f"fixture-d{self._dimension}"

    @property
    def dimension(self) -> int:
        return self._dimension

    def register(self, key: str, values) -> None:
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self._dimension,):
            raise ValueError(f"entry '{key}' has shape {vec.shape}, expected ({self._dimension},)")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"entry '{key}' contains non-finite values")
        self._entries[key] = vec

    def register_region(self, image_key: str, mask, values) -> None:
        self.register(region_key(image_key, np.asarray(mask)), values)

    def register_patch_grid(self, image_key: str, features) -> None:
        grid = np.asarray(features, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[2] != self._dimension:
            raise ValueError(
                f"patch grid for '{image_key}' must be (h, w, {self._dimension}), got {grid.shape}"
            )
        if not np.all(np.isfinite(grid)):
            raise ValueError(f"patch grid for '{image_key}' contains non-finite values")
        self._grids[image_key] = grid

    def has_entry(self, key: str) -> bool:
        return key in self._entries

    def entry(self, key: str) -> np.ndarray:
        return self._lookup(key)

    def _lookup(self, key: str) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise BackendError(f"fixture has no embedding registered for key '{key}'") from None

    def _embed_global(self, image: Raster) -> np.ndarray:
        return self._lookup(image.key)

    def _embed_patches(self, image: Raster) -> PatchGrid:
        try:
            grid = self._grids[image.key]
        except KeyError:
            raise BackendError(f"fixture has no patch grid registered for key '{image.key}'") from None
        size = (image.height, image.width)
        return PatchGrid(features=grid, image_size=size, patch_stride=_grid_stride(size, grid.shape[:2]))

    def _embed_region(self, image: Raster, mask: np.ndarray) -> np.ndarray:
        return self._lookup(region_key(image.key, mask))

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureEmbeddingBackend":
        doc = json.loads(Path(path).read_text())
        backend = cls(dimension=int(doc["dimension"]))
        for key, vec in doc.get("entries", {}).items():
            backend.register(key, vec)
        for key, spec in doc.get("patch_grids", {}).items():
            rows = np.asarray(spec["rows"], dtype=np.float64)
            if list(rows.shape[:2]) != list(spec["shape"]):
                raise ValueError(f"patch grid '{key}' shape field disagrees with rows")
            backend.register_patch_grid(key, rows)
        return backend

    def to_file(self, path: str | Path) -> None:
        doc = {
            "dimension": self._dimension,
            "entries": {k: v.tolist() for k, v in sorted(self._entries.items())},
            "patch_grids": {
                k: {"shape": list(g.shape[:2]), "rows": g.tolist()}
                for k, g in sorted(self._grids.items())
            },
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


class CachedEmbeddingBackend(EmbeddingBackend):
    """Content-addressed on-disk cache in front of another backend.

    Keys combine the inner backend id, the image key, and either "global",
    "patch", or the mask hash, so distinct configurations never collide.
    """

    def __init__(self, inner: EmbeddingBackend, cache_dir: str | Path):
        self._inner = inner
        self._root = Path(cache_dir) / inner.backend_id
        self._root.mkdir(parents=True, exist_ok=True)

    @property
    def backend_id(self) -> str:
        return self._inner.backend_id

    @property
    def dimension(self) -> int:
        return self._inner.dimension

    def _path(self, image_key: str, slot: str) -> Path:
        safe = image_key.replace("/", "_")
        return self._root / safe / f"{slot}.npy"

    def _load_or_compute(self, image_key: str, slot: str, compute) -> np.ndarray:
        path = self._path(image_key, slot)
        if path.exists():
            return np.load(path)
        values = compute()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, values)
        tmp.replace(path)
        return values

    def _embed_global(self, image: Raster) -> np.ndarray:
        return self._load_or_compute(image.key, "global", lambda: self._inner._embed_global(image))

    def _embed_patches(self, image: Raster) -> PatchGrid:
        grid = self._load_or_compute(image.key, "patch", lambda: self._inner._embed_patches(image).features)
        size = (image.height, image.width)
        return PatchGrid(features=grid, image_size=size, patch_stride=_grid_stride(size, grid.shape[:2]))

    def _embed_region(self, image: Raster, mask: np.ndarray) -> np.ndarray:
        return self._load_or_compute(
            image.key, mask_sha256(mask), lambda: self._inner._embed_region(image, mask)
        )
