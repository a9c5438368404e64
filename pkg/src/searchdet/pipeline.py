"""End-to-end detection: retrieve, embed, select, heat-map, ground.

``detect`` is the in-memory pipeline over already-loaded exemplar rasters;
``run_detect`` is the file-level entry the CLI uses (retrieval or manifest
replay, artifact writing, run metadata). Every stage failure is re-raised
as PipelineError carrying the stage name.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .attention import QueryBundle, build_query_bundle
from .config import ENV_LLM_ENDPOINT, ENV_SEARCH_API_KEY, RunConfig
from .embeddings import EmbeddingBackend, FixtureEmbeddingBackend
from .errors import ConfigError, PipelineError, SearchDetError
from .grounding import Detection, detections_to_coco, ground
from .heatmap import Heatmap, binarize, compute_heatmap, heatmap_query, overlay_png
from .images import Raster, sha256_bytes
from .regions import (
    EmbeddedRegion,
    FixtureSegmentationBackend,
    SegmentationBackend,
    embed_regions,
    propose_regions,
)
from .retrieval import (
    DirectoryImageSearch,
    ExemplarSet,
    HttpImageSearch,
    HttpLLMClient,
    LabelQuery,
    fetch_exemplars,
    load_manifest,
)
from .selection import SelectionResult, bin_distances, distance_matrix, dump_debug, reference_distribution, select_candidates, verify


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass
class DetectResult:
    detections: list[Detection]
    bundle: QueryBundle
    regions: list[EmbeddedRegion]
    selection: SelectionResult | None
    heatmap: Heatmap | None
    metadata: dict = field(default_factory=dict)


def detect(
    image: Raster,
    label: str,
    positives: list[Raster],
    negatives: list[Raster],
    embedder: EmbeddingBackend,
    segmenter: SegmentationBackend,
    config: RunConfig,
) -> DetectResult:
    """Run the detection pipeline for one (image, label) pair."""
    if not positives:
        raise PipelineError("exemplars", ValueError("at least one positive exemplar is required"))
    neg_rasters = negatives if config.use_negatives else []

    with _stage("embed-exemplars"):
        pos_globals = [embedder.embed_global(r).values for r in positives]
        neg_globals = [embedder.embed_global(r).values for r in neg_rasters]
        image_global = embedder.embed_global(image).values

    with _stage("query-generation"):
        bundle = build_query_bundle(image_global, pos_globals, neg_globals, pooling=config.pooling)

    with _stage("region-proposals"):
        regions = propose_regions(
            image,
            segmenter,
            min_area_fraction=config.min_area_fraction,
            max_masks=config.max_masks,
        )
        embedded = embed_regions(image, regions, embedder, workers=config.workers)

    selection: SelectionResult | None = None
    verified: list[EmbeddedRegion] = []
    if embedded:
        with _stage("mask-selection"):
            dm = distance_matrix(
                bundle.query_matrix(),
                [er.embedding.values for er in embedded],
                mode=config.distance,
            )
            ref = reference_distribution(bundle.query_matrix(), mode=config.distance)
            bins = bin_distances(dm)
            candidates = select_candidates(bins, config.dominance)
            selection = verify(
                candidates, dm, ref, config.sigma_mult, mean_mode=config.bin_mean, bins=bins
            )
            verified = [embedded[mask_id] for mask_id in selection.verified]

    hm: Heatmap | None = None
    if config.use_heatmap:
        with _stage("heatmap"):
            input_grid = embedder.embed_patches(image)
            pos_grids = [embedder.embed_patches(r) for r in positives]
            neg_grids = [embedder.embed_patches(r) for r in neg_rasters]
            pooled = heatmap_query(input_grid, pos_grids, neg_grids, pooling=config.pooling)
            hm = binarize(
                compute_heatmap(
                    input_grid,
                    pooled,
                    (image.height, image.width),
                    upsample=config.upsample,
                ),
                config.heatmap_quantile,
            )

    with _stage("grounding"):
        detections = ground(verified, hm, bundle, label, dedupe_iou=config.dedupe_iou)

    return DetectResult(
        detections=detections,
        bundle=bundle,
        regions=embedded,
        selection=selection,
        heatmap=hm,
        metadata={
            "label": label,
            "image_key": image.key,
            "embedding_backend": embedder.backend_id,
            "segmentation_backend": segmenter.backend_id,
            "n_regions": len(embedded),
            "n_verified": len(verified),
        },
    )


def build_embedding_backend(config: RunConfig) -> EmbeddingBackend:
    if config.backend == "fixture":
        if not config.fixture_embeddings:
            raise ConfigError("fixture backend requires fixture_embeddings")
        return FixtureEmbeddingBackend.from_file(config.fixture_embeddings)
    from .torch_backends import DinoV2Backend

    return DinoV2Backend(model_id=config.model_id, region_crop=config.region_crop)


def build_segmentation_backend(config: RunConfig) -> SegmentationBackend:
    if config.backend == "fixture":
        if not config.fixture_masks:
            raise ConfigError("fixture backend requires fixture_masks")
        return FixtureSegmentationBackend.from_dir(config.fixture_masks)
    from .torch_backends import SamAutomaticBackend

    return SamAutomaticBackend(model_id=config.sam_model_id)


def build_search_engine(config: RunConfig):
    import os

    if config.engine_dir:
        return DirectoryImageSearch(config.engine_dir)
    api_key = os.environ.get(ENV_SEARCH_API_KEY)
    if not api_key:
        raise ConfigError(
            f"set {ENV_SEARCH_API_KEY} for live search or point engine_dir at an image folder"
        )
    return HttpImageSearch(api_key=api_key)


def build_llm_client(config: RunConfig):
    import os

    endpoint = os.environ.get(ENV_LLM_ENDPOINT)
    if endpoint:
        return HttpLLMClient(endpoint=endpoint)
    return None  # static fallback inside generate_negative_queries


def obtain_exemplars(label: str, config: RunConfig) -> ExemplarSet:
    """Load a pinned manifest when given, otherwise fetch (cache-first)."""
    if config.manifest:
        return load_manifest(config.manifest)
    query = LabelQuery(label=label, context_hint=config.context_hint)
    return fetch_exemplars(
        query,
        n_pos=config.n_pos,
        n_neg=config.n_neg if config.use_negatives else 0,
        engine=build_search_engine(config),
        cache_dir=config.cache_dir,
        llm=build_llm_client(config),
        negative_query_count=config.negative_query_count,
        download_workers=config.download_workers,
    )


def canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run_detect(
    image_path: str | Path,
    label: str,
    config: RunConfig,
    out_dir: str | Path | None = None,
    write_overlay: bool = False,
    debug_dump: bool = False,
) -> DetectResult:
    """File-level detection run: writes detections.json and metadata.json.

    All emitted artifacts are deterministic for a fixed config, cache, and
    fixture state, so a rerun is byte-identical.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with _stage("load-image"):
        image = Raster.from_file(image_path)
    with _stage("retrieve"):
        exemplars = obtain_exemplars(label, config)
        positives = exemplars.load_positives()
        negatives = exemplars.load_negatives()

    embedder = build_embedding_backend(config)
    segmenter = build_segmentation_backend(config)
    result = detect(image, label, positives, negatives, embedder, segmenter, config)

    coco = detections_to_coco(result.detections, image_id=0, category_id=0)
    for rec in coco:
        rec["label"] = label
    (out / "detections.json").write_text(canonical_json(coco))

    from .retrieval.manifest import manifest_dict

    manifest_hash = sha256_bytes(canonical_json(manifest_dict(exemplars)).encode())
    metadata = {
        "config": config.to_dict(),
        "config_sha256": config.config_hash(),
        "manifest_sha256": manifest_hash,
        "negative_queries": list(exemplars.negative_queries),
        **result.metadata,
    }
    (out / "metadata.json").write_text(canonical_json(metadata))

    if write_overlay and result.heatmap is not None:
        (out / "heatmap_overlay.png").write_bytes(overlay_png(image.pixels, result.heatmap))
    if debug_dump and result.selection is not None:
        dm = distance_matrix(
            result.bundle.query_matrix(),
            [er.embedding.values for er in result.regions],
            mode=config.distance,
        )
        dump_debug(dm, bin_distances(dm), result.selection, out / "selection_debug.json")
    return result
