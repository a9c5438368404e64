"""Real model backends: a ViT feature backbone and automatic mask generation.

Both wrappers import torch/transformers lazily and raise BackendError with
an actionable message when the stack or the weights are unavailable, so the
rest of the package stays importable on machines without them. Install the
``real`` extra to use these.
"""

from __future__ import annotations

import math

import numpy as np

from .embeddings import EmbeddingBackend, PatchGrid
from .errors import BackendError
from .images import Raster, tight_bbox
from .regions import ProposedMask, SegmentationBackend


def _require_torch():
    try:
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as exc:
        raise BackendError(
            "the real backend needs torch and transformers; install the 'real' extra"
        ) from exc


class DinoV2Backend(EmbeddingBackend):
    """CLS-token and patch features from a DINOv2 checkpoint.

    Images are resized so the shorter side matches the model input size,
    center-cropped, and normalized with the processor's statistics. The
    masked-region embedding zero-fills outside the mask before embedding;
    ``region_crop=True`` instead crops to the mask bbox with 10% padding
    (zero-fill dilutes small objects).
    """

    def __init__(self, model_id: str = "facebook/dinov2-base", input_size: int = 518,
                 region_crop: bool = False, device: str = "cpu"):
        _require_torch()
        import torch
        from transformers import AutoImageProcessor, AutoModel

        self._model_id = model_id
        self._input_size = input_size
        self._region_crop = region_crop
        self._device = device
        try:
            self._processor = AutoImageProcessor.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id).to(device).eval()
        except Exception as exc:
            raise BackendError(f"could not load model '{model_id}': {exc}") from exc
        self._torch = torch
        self._dimension = int(self._model.config.hidden_size)
        self._patch = int(getattr(self._model.config, "patch_size", 14))

    @property
    def backend_id(self) -> str:
        crop = "crop" if self._region_crop else "zerofill"
        return f"dinov2:{self._model_id}:{self._input_size}:{crop}"

    @property
    def dimension(self) -> int:
        return self._dimension

    def _prepare(self, pixels: np.ndarray):
        inputs = self._processor(
            images=pixels,
            size={"shortest_edge": self._input_size},
            crop_size={"height": self._input_size, "width": self._input_size},
            do_center_crop=True,
            return_tensors="pt",
        )
        return inputs.to(self._device)

    def _forward(self, pixels: np.ndarray):
        with self._torch.no_grad():
            out = self._model(**self._prepare(pixels))
        return out.last_hidden_state[0].cpu().numpy()

    def _embed_global(self, image: Raster) -> np.ndarray:
        return self._forward(image.pixels)[0].astype(np.float64)

    def _embed_patches(self, image: Raster) -> PatchGrid:
        tokens = self._forward(image.pixels)[1:]  # drop CLS
        side = int(round(math.sqrt(tokens.shape[0])))
        grid = tokens.reshape(side, side, -1).astype(np.float64)
        size = (image.height, image.width)
        stride = max(math.ceil(size[0] / side), math.ceil(size[1] / side))
        return PatchGrid(features=grid, image_size=size, patch_stride=stride)

    def _embed_region(self, image: Raster, mask: np.ndarray) -> np.ndarray:
        pixels = image.pixels.copy()
        pixels[~mask] = 0
        if self._region_crop:
            x0, y0, x1, y1 = tight_bbox(mask)
            pad_x = max(1, int(0.1 * (x1 - x0)))
            pad_y = max(1, int(0.1 * (y1 - y0)))
            y0, y1 = max(0, y0 - pad_y), min(image.height, y1 + pad_y)
            x0, x1 = max(0, x0 - pad_x), min(image.width, x1 + pad_x)
            pixels = pixels[y0:y1, x0:x1]
        return self._forward(pixels)[0].astype(np.float64)


class SamAutomaticBackend(SegmentationBackend):
    """Grid-prompted automatic mask generation via a SAM checkpoint."""

    def __init__(self, model_id: str = "facebook/sam-vit-base", points_per_side: int = 32,
                 device: str = "cpu"):
        super().__init__()
        _require_torch()
        from transformers import pipeline

        self._model_id = model_id
        self._points_per_side = points_per_side
        try:
            self._pipe = pipeline("mask-generation", model=model_id, device=device)
        except Exception as exc:
            raise BackendError(f"could not load segmentation model '{model_id}': {exc}") from exc

    @property
    def backend_id(self) -> str:
        return f"sam:{self._model_id}:pps{self._points_per_side}"

    def _generate(self, image: Raster) -> list[ProposedMask]:
        from PIL import Image

        out = self._pipe(Image.fromarray(image.pixels), points_per_batch=64,
                         points_per_side=self._points_per_side)
        masks = out.get("masks", [])
        scores = out.get("scores", [None] * len(masks))
        proposals = []
        for m, s in zip(masks, scores):
            arr = np.asarray(m, dtype=bool)
            proposals.append(ProposedMask(mask=arr, stability_score=float(s) if s is not None else None))
        return proposals
