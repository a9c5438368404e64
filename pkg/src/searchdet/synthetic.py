"""Seeded synthetic benchmark: planted objects, confounds, and fixtures.

Builds a small world in embedding space around three anchors: a target
concept, a confounding concept that co-occurs with it (in exemplar photos
and in scenes), and background concepts. Scenes are rectangle paintings
whose region masks, region embeddings, patch grids, and exemplar images are
all registered in fixture backends, so the complete pipeline runs on it
end to end:

* positive exemplars carry a large confound component; negative exemplars
  are near-pure confound, so subtracting them separates the target from
  confound regions by construction,
* every fourth scene has no target but a "mimic" region instead, whose
  masked-region embedding looks like the target while its patch features do
  not, so it survives selection and only the heatmap gate removes it,
* per-exemplar noise shrinks as more exemplars are pooled, so accuracy
  grows with the exemplar count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import FixtureEmbeddingBackend, region_key
from .evaluation import GroundTruth, ground_truth_from_dict
from .images import Raster, sha256_bytes
from .regions import FixtureSegmentationBackend
from .retrieval.engines import slugify

DEFAULT_LABEL = "surfboard"


@dataclass
class WorldParams:
    dimension: int = 16
    n_styles: int = 6
    style_gain: float = 0.7
    exemplar_noise: float = 0.45
    region_noise: float = 0.12
    patch_noise: float = 0.15
    patch_offset_style: float = 0.8  # shared per-exemplar style in patch grids
    patch_offset_noise: float = 0.8  # shared per-exemplar shot noise in patch grids
    pos_confound: tuple[float, float] = (0.25, 0.95)  # confound share in positives
    neg_confound: tuple[float, float] = (0.5, 0.9)  # confound strength in negatives
    target_confound: tuple[float, float] = (0.0, 0.2)  # confound share in target regions
    confound_leak: tuple[float, float] = (0.15, 0.45)  # target share in confound regions
    image_size: int = 96
    grid_cells: int = 12
    exemplar_size: int = 48
    exemplar_grid: int = 4
    n_images: int = 12
    no_target_stride: int = 4  # every k-th scene has a mimic instead of a target
    n_confounds: tuple[int, int] = (1, 2)


@dataclass
class SceneSpec:
    image: Raster
    region_kinds: list[str]  # parallel to registered masks: target|confound|background|sliver
    target_bbox: tuple[int, int, int, int] | None


@dataclass
class SyntheticBenchmark:
    label: str
    params: WorldParams
    scenes: list[SceneSpec]
    embedder: FixtureEmbeddingBackend
    segmenter: FixtureSegmentationBackend
    positives: list[Raster]
    negatives: list[Raster]
    gt: GroundTruth
    category_id: int = 1
    _world: "_World" = field(default=None, repr=False)

    def sample_exemplars(self, n_pos: int, n_neg: int, seed: int) -> tuple[list[Raster], list[Raster]]:
        """Fresh exemplar draws from the same world, registered in the fixture."""
        return self._world.make_exemplars(self, n_pos, n_neg, np.random.default_rng(seed), tag=f"s{seed}")


class _World:
    """Holds the anchor directions and samples embeddings off them."""

    def __init__(self, params: WorldParams, rng: np.random.Generator):
        p = params
        need = 2 + 3 + p.n_styles  # target, confound, backgrounds, styles
        if p.dimension < need:
            raise ValueError(f"dimension {p.dimension} too small for {need} anchors")
        basis, _ = np.linalg.qr(rng.standard_normal((p.dimension, p.dimension)))
        self.params = p
        self.target = basis[:, 0]
        self.confound = basis[:, 1]
        self.backgrounds = [basis[:, 2 + i] for i in range(3)]
        self.styles = basis[:, 5 : 5 + p.n_styles]

    def _style(self, rng) -> np.ndarray:
        g = rng.standard_normal(self.params.n_styles)
        g /= np.linalg.norm(g)
        return self.params.style_gain * (self.styles @ g)

    def _noise(self, rng, scale: float) -> np.ndarray:
        eps = rng.standard_normal(self.params.dimension)
        return scale * eps / np.linalg.norm(eps)

    @staticmethod
    def _unit(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    def positive_vec(self, rng) -> np.ndarray:
        gamma = rng.uniform(*self.params.pos_confound)
        return self._unit(
            self.target + gamma * self.confound + self._style(rng)
            + self._noise(rng, self.params.exemplar_noise)
        )

    def negative_vec(self, rng) -> np.ndarray:
        eta = rng.uniform(*self.params.neg_confound)
        return self._unit(
            eta * self.confound + self._style(rng) + self._noise(rng, self.params.exemplar_noise)
        )

    def target_region_vec(self, rng) -> np.ndarray:
        gamma = rng.uniform(*self.params.target_confound)
        return self._unit(
            self.target + gamma * self.confound + self._style(rng)
            + self._noise(rng, self.params.region_noise)
        )

    def confound_region_vec(self, rng) -> np.ndarray:
        rho = rng.uniform(*self.params.confound_leak)
        return self._unit(
            self.confound + rho * self.target + self._style(rng)
            + self._noise(rng, self.params.region_noise)
        )

    def background_region_vec(self, rng) -> np.ndarray:
        base = self.backgrounds[rng.integers(len(self.backgrounds))]
        return self._unit(base + self._style(rng) + self._noise(rng, self.params.region_noise))

    def patch(self, base: np.ndarray, rng, offset: np.ndarray | None = None) -> np.ndarray:
        vec = base + self._noise(rng, self.params.patch_noise)
        if offset is not None:
            vec = vec + offset
        return self._unit(vec)

    def make_exemplars(self, bench: "SyntheticBenchmark", n_pos: int, n_neg: int,
                       rng: np.random.Generator, tag: str) -> tuple[list[Raster], list[Raster]]:
        p = self.params
        g = p.exemplar_grid
        positives, negatives = [], []
        for side, count, out in (("pos", n_pos, positives), ("neg", n_neg, negatives)):
            for i in range(count):
                key = f"exemplar-{tag}-{side}{i}"
                pixels = rng.integers(0, 256, size=(p.exemplar_size, p.exemplar_size, 3), dtype=np.uint8)
                raster = Raster.from_array(pixels, key=key)
                if side == "pos":
                    gamma = rng.uniform(*p.pos_confound)
                    vec = self._unit(
                        self.target + gamma * self.confound + self._style(rng)
                        + self._noise(rng, p.exemplar_noise)
                    )
                    # photos of the object also show the confound: mix patches
                    bases = [self.target + gamma * self.confound] * (g * g * 2 // 3)
                    bases += [self.confound] * (g * g - len(bases))
                else:
                    vec = self.negative_vec(rng)
                    bases = [self.confound] * (g * g)
                # every patch of one exemplar shares that image's style and
                # shot noise, so pooling over exemplars averages it away
                offset = (
                    p.patch_offset_style / p.style_gain * self._style(rng)
                    + self._noise(rng, p.patch_offset_noise)
                )
                grid = np.asarray(
                    [self.patch(b, rng, offset=offset) for b in bases]
                ).reshape(g, g, p.dimension)
                bench.embedder.register(key, vec)
                bench.embedder.register_patch_grid(key, grid)
                out.append(raster)
        return positives, negatives


def _paint(pixels: np.ndarray, rect: tuple[int, int, int, int], color) -> None:
    x0, y0, x1, y1 = rect
    pixels[y0:y1, x0:x1] = color


def _rect_mask(size: int, rect: tuple[int, int, int, int]) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    x0, y0, x1, y1 = rect
    mask[y0:y1, x0:x1] = True
    return mask


def _sample_rect(rng, slot: tuple[int, int], half: int, lo: int = 20, hi: int = 36) -> tuple[int, int, int, int]:
    w = int(rng.integers(lo, hi))
    h = int(rng.integers(lo, hi))
    x0 = slot[0] * half + int(rng.integers(2, half - w - 2))
    y0 = slot[1] * half + int(rng.integers(2, half - h - 2))
    return (x0, y0, x0 + w, y0 + h)


def generate_benchmark(
    seed: int,
    params: WorldParams | None = None,
    label: str = DEFAULT_LABEL,
    n_pos: int = 5,
    n_neg: int = 5,
) -> SyntheticBenchmark:
    """Build a fully fixtured benchmark world for one seed."""
    p = params or WorldParams()
    rng = np.random.default_rng(seed)
    world = _World(p, rng)

    embedder = FixtureEmbeddingBackend(dimension=p.dimension)
    segmenter = FixtureSegmentationBackend()
    bench = SyntheticBenchmark(
        label=label,
        params=p,
        scenes=[],
        embedder=embedder,
        segmenter=segmenter,
        positives=[],
        negatives=[],
        gt=None,
        _world=world,
    )

    size = p.image_size
    cells = p.grid_cells
    stride = size // cells
    images_doc, annotations_doc = [], []
    ann_id = 1
    for idx in range(p.n_images):
        key = f"scene-{seed}-{idx:03d}"
        pixels = np.full((size, size, 3), 30, dtype=np.uint8)
        pixels += rng.integers(0, 20, size=pixels.shape, dtype=np.uint8)

        slots = [(0, 0), (1, 0), (0, 1), (1, 1)]
        rng.shuffle(slots)
        has_target = (idx + 1) % p.no_target_stride != 0
        n_conf = int(rng.integers(p.n_confounds[0], p.n_confounds[1] + 1))

        plan: list[str] = ["target" if has_target else "mimic"]
        plan.extend(["confound"] * n_conf)
        plan.append("background")
        plan = plan[: len(slots)]

        grid_bases = np.tile(world.backgrounds[0], (cells, cells, 1))
        kinds, masks, vecs = [], [], []
        target_bbox = None
        for kind, slot in zip(plan, slots):
            rect = _sample_rect(rng, slot, size // 2)
            mask = _rect_mask(size, rect)
            if kind == "target":
                vec = world.target_region_vec(rng)
                gamma = rng.uniform(*p.target_confound)
                base = world.target + gamma * world.confound
                color = (200, 60, 60)
                target_bbox = rect
            elif kind == "mimic":
                # looks like the target at region level, not at patch level
                vec = world.target_region_vec(rng)
                base = world.confound
                color = (200, 200, 60)
            elif kind == "confound":
                vec = world.confound_region_vec(rng)
                base = world.confound
                color = (60, 60, 200)
            else:
                vec = world.background_region_vec(rng)
                base = world.backgrounds[1]
                color = (60, 200, 60)
            _paint(pixels, rect, color)
            x0, y0, x1, y1 = rect
            gx0, gy0 = x0 // stride, y0 // stride
            gx1 = -(-x1 // stride)  # every cell the rect touches
            gy1 = -(-y1 // stride)
            grid_bases[gy0:gy1, gx0:gx1] = base
            kinds.append(kind)
            masks.append(mask)
            vecs.append(vec)

        # a sub-floor sliver exercises the area filter
        sliver = np.zeros((size, size), dtype=bool)
        sliver[0:2, 0:2] = True
        masks.append(sliver)
        kinds.append("sliver")
        vecs.append(None)

        raster = Raster.from_array(pixels, key=key)
        grid = np.asarray(
            [world.patch(grid_bases[r, c], rng) for r in range(cells) for c in range(cells)]
        ).reshape(cells, cells, p.dimension)

        scene_global = world._unit(
            (world.target if has_target else 0.2 * world.target)
            + world.confound
            + world.backgrounds[0]
            + world._noise(rng, 0.1)
        )
        embedder.register(key, scene_global)
        embedder.register_patch_grid(key, grid)
        for mask, vec in zip(masks, vecs):
            if vec is not None:
                embedder.register_region(key, mask, vec)
            segmenter.register(key, mask, stability_score=float(rng.uniform(0.8, 1.0)))

        bench.scenes.append(SceneSpec(image=raster, region_kinds=kinds, target_bbox=target_bbox))
        images_doc.append({"id": idx, "file_name": f"images/{key}.png", "height": size, "width": size})
        if target_bbox is not None:
            x0, y0, x1, y1 = target_bbox
            annotations_doc.append(
                {
                    "id": ann_id,
                    "image_id": idx,
                    "category_id": bench.category_id,
                    "bbox": [x0, y0, x1 - x0, y1 - y0],
                    "area": (x1 - x0) * (y1 - y0),
                    "iscrowd": 0,
                }
            )
            ann_id += 1

    bench.gt = ground_truth_from_dict(
        {
            "images": images_doc,
            "annotations": annotations_doc,
            "categories": [{"id": bench.category_id, "name": label}],
        }
    )
    positives, negatives = world.make_exemplars(bench, n_pos, n_neg, rng, tag="base")
    bench.positives = positives
    bench.negatives = negatives
    return bench


@dataclass(frozen=True)
class MaterializedBenchmark:
    root: Path
    annotations: Path
    images_dir: Path
    fixture_embeddings: Path
    fixture_masks: Path
    engine_dir: Path
    label: str
    negative_query: str


def materialize(bench: SyntheticBenchmark, root: str | Path,
                negative_query: str = "waves") -> MaterializedBenchmark:
    """Write a benchmark to disk as plain files, re-keyed by content hash.

    Produces everything the file-level pipeline consumes: scene PNGs plus a
    COCO annotation file, fixture embeddings JSON, a fixture mask directory,
    and an offline search-engine directory serving the exemplar images
    (positives under the label's slug, negatives under the negative query's).
    """
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    engine_dir = root / "engine"
    for d in (images_dir, masks_dir, engine_dir):
        d.mkdir(parents=True, exist_ok=True)

    out = FixtureEmbeddingBackend(dimension=bench.params.dimension)
    emb = bench.embedder

    def rekey_image(raster: Raster, path: Path) -> str:
        raster.save_png(path)
        return sha256_bytes(path.read_bytes())

    mask_index = []
    images_doc, annotations_doc = [], []
    ann_id = 1
    for idx, spec in enumerate(bench.scenes):
        png = images_dir / f"scene_{idx:03d}.png"
        sha = rekey_image(spec.image, png)
        out.register(sha, emb.embed_global(spec.image).values)
        out.register_patch_grid(sha, emb.embed_patches(spec.image).features)

        entry = {"image_key": sha, "masks": []}
        for mask_no, prop in enumerate(bench.segmenter.generate(spec.image)):
            mask_png = masks_dir / f"scene_{idx:03d}_{mask_no:02d}.png"
            Raster.from_array(
                np.repeat(prop.mask[:, :, None], 3, axis=2).astype(np.uint8) * 255,
                key="mask",
            ).save_png(mask_png)
            entry["masks"].append(
                {"path": mask_png.name, "stability_score": prop.stability_score}
            )
            old_key = region_key(spec.image.key, prop.mask)
            if emb.has_entry(old_key):
                out.register(region_key(sha, prop.mask), emb.entry(old_key))
        mask_index.append(entry)

        size = bench.params.image_size
        images_doc.append(
            {"id": idx, "file_name": f"images/{png.name}", "height": size, "width": size}
        )
        if spec.target_bbox is not None:
            x0, y0, x1, y1 = spec.target_bbox
            annotations_doc.append(
                {
                    "id": ann_id,
                    "image_id": idx,
                    "category_id": bench.category_id,
                    "bbox": [x0, y0, x1 - x0, y1 - y0],
                    "area": (x1 - x0) * (y1 - y0),
                    "iscrowd": 0,
                }
            )
            ann_id += 1

    for side, rasters, folder in (
        ("pos", bench.positives, engine_dir / slugify(bench.label)),
        ("neg", bench.negatives, engine_dir / slugify(negative_query)),
    ):
        folder.mkdir(parents=True, exist_ok=True)
        for i, raster in enumerate(rasters):
            sha = rekey_image(raster, folder / f"{side}_{i:02d}.png")
            out.register(sha, emb.embed_global(raster).values)
            out.register_patch_grid(sha, emb.embed_patches(raster).features)

    (masks_dir / "index.json").write_text(json.dumps(mask_index, indent=2) + "\n")
    fixture_path = root / "embeddings.json"
    out.to_file(fixture_path)
    annotations = root / "annotations.json"
    annotations.write_text(
        json.dumps(
            {
                "images": images_doc,
                "annotations": annotations_doc,
                "categories": [{"id": bench.category_id, "name": bench.label}],
            },
            indent=2,
        )
        + "\n"
    )
    return MaterializedBenchmark(
        root=root,
        annotations=annotations,
        images_dir=images_dir,
        fixture_embeddings=fixture_path,
        fixture_masks=masks_dir,
        engine_dir=engine_dir,
        label=bench.label,
        negative_query=negative_query,
    )
