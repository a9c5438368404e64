"""Training-free open-vocabulary object detection from web-retrieved exemplars."""

from .attention import (
    AdjustedQuery,
    QueryBundle,
    adjusted_query,
    attention_pool,
    attention_weights,
    build_query_bundle,
    cosine_similarity,
)
from .embeddings import (
    CachedEmbeddingBackend,
    Embedding,
    EmbeddingBackend,
    FixtureEmbeddingBackend,
    PatchGrid,
)
from .errors import (
    BackendError,
    ConfigError,
    EmptyResultError,
    EvaluationError,
    FormatError,
    InputError,
    IntegrityError,
    PipelineError,
    RetrievalError,
    SearchDetError,
    ValidationError,
)
from .evaluation import EvalReport, GroundTruth, evaluate, load_ground_truth
from .grounding import Detection, detections_to_coco, ground, rle_decode, rle_encode
from .heatmap import Heatmap, binarize, compute_heatmap, exemplar_pooled_embeddings, heatmap_query
from .images import Raster
from .regions import (
    EmbeddedRegion,
    FixtureSegmentationBackend,
    RegionMask,
    SegmentationBackend,
    embed_regions,
    propose_regions,
)
from .selection import (
    DistanceMatrix,
    ReferenceDistribution,
    SelectionResult,
    bin_distances,
    distance_matrix,
    reference_distribution,
    select_and_verify,
    select_candidates,
    verify,
)

__version__ = "0.1.0"
