from .engines import DirectoryImageSearch, HttpImageSearch, ImageSearchEngine, SearchHit, slugify
from .fetch import fetch_exemplars, query_cache_dir
from .manifest import load_manifest, manifest_dict, pin_manifest
from .negatives import (
    GENERIC_NEGATIVES,
    STATIC_NEGATIVES,
    HttpLLMClient,
    LLMClient,
    ResponseCache,
    StaticLLMClient,
    generate_negative_queries,
)
from .types import ExemplarRecord, ExemplarSet, LabelQuery, RetrievalManifest
