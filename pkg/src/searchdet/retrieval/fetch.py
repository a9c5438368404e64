"""Fetching, deduplicating, and caching exemplar images.

Cache layout (one directory per label query):

    <cache_root>/<sha256(query)>/<rank>_<sha256(bytes)>.<ext>
    <cache_root>/<sha256(query)>/manifest.json

Downloads run on a bounded worker pool with exponential backoff; files are
written once to a temp name and renamed, so concurrent fetches of the same
query are safe. A warm cache (manifest present and intact) is served
without touching the network at all.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from ..errors import EmptyResultError, InputError, IntegrityError, RetrievalError
from ..images import decode_image_bytes, sha256_bytes, sha256_text
from .engines import ImageSearchEngine, SearchHit
from .manifest import MANIFEST_NAME, load_manifest, pin_manifest
from .negatives import LLMClient, ResponseCache, generate_negative_queries
from .types import ExemplarRecord, ExemplarSet, LabelQuery, RetrievalManifest

log = logging.getLogger(__name__)

MIN_SIDE = 32
DEFAULT_DOWNLOAD_WORKERS = 4
DEFAULT_NEGATIVE_QUERY_COUNT = 1


def query_cache_dir(cache_root: str | Path, query: LabelQuery) -> Path:
    return Path(cache_root) / sha256_text(f"{query.label}\n{query.context_hint}")


@dataclass
class _Downloaded:
    hit: SearchHit
    data: bytes
    sha256: str
    ext: str


def _download_one(engine: ImageSearchEngine, hit: SearchHit, retries: int, backoff: float) -> _Downloaded | None:
    for attempt in range(retries + 1):
        try:
            data = engine.fetch(hit.url)
            pixels, fmt = decode_image_bytes(data)
            if min(pixels.shape[:2]) < MIN_SIDE:
                log.info("skipping %s: %dx%d below %d px floor",
                         hit.url, pixels.shape[1], pixels.shape[0], MIN_SIDE)
                return None
            ext = {"jpeg": "jpg"}.get(fmt, fmt)
            return _Downloaded(hit=hit, data=data, sha256=sha256_bytes(data), ext=ext)
        except InputError as exc:
            log.info("skipping undecodable %s: %s", hit.url, exc)
            return None
        except Exception as exc:  # transient transport errors: back off and retry
            if attempt == retries:
                log.warning("giving up on %s after %d attempts: %s", hit.url, retries + 1, exc)
                return None
            time.sleep(backoff * (2**attempt))
    return None


def _download_ranked(
    engine: ImageSearchEngine,
    hits: list[SearchHit],
    want: int,
    workers: int,
    retries: int,
    backoff: float,
    taken_hashes: set[str],
) -> list[_Downloaded]:
    """Download hits concurrently, then keep the first ``want`` unique images
    in the hits' order (engine rank order survives the parallel fetch)."""
    if not hits or want <= 0:
        return []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda h: _download_one(engine, h, retries, backoff), hits))
    kept: list[_Downloaded] = []
    for item in results:
        if item is None or item.sha256 in taken_hashes:
            continue
        taken_hashes.add(item.sha256)
        kept.append(item)
        if len(kept) == want:
            break
    return kept


def _store(items: list[_Downloaded], set_dir: Path) -> list[ExemplarRecord]:
    records = []
    for rank, item in enumerate(items):
        name = f"{rank:03d}_{item.sha256}.{item.ext}"
        path = set_dir / name
        if not path.exists():
            tmp = path.with_name(name + ".part")
            tmp.write_bytes(item.data)
            tmp.replace(path)
        records.append(
            ExemplarRecord(
                rank=rank,
                source_url=item.hit.url,
                content_sha256=item.sha256,
                relative_path=name,
            )
        )
    return records


def _interleave(hit_lists: list[list[SearchHit]]) -> list[SearchHit]:
    """Round-robin merge so each negative query contributes evenly."""
    merged: list[SearchHit] = []
    for depth in range(max((len(h) for h in hit_lists), default=0)):
        for hits in hit_lists:
            if depth < len(hits):
                merged.append(hits[depth])
    return merged


def fetch_exemplars(
    query: LabelQuery,
    n_pos: int,
    n_neg: int,
    engine: ImageSearchEngine,
    cache_dir: str | Path,
    llm: LLMClient | None = None,
    negative_query_count: int = DEFAULT_NEGATIVE_QUERY_COUNT,
    download_workers: int = DEFAULT_DOWNLOAD_WORKERS,
    retries: int = 2,
    backoff: float = 0.25,
    refresh: bool = False,
) -> ExemplarSet:
    """Fetch up to ``n_pos`` positive and ``n_neg`` negative exemplar images.

    Positives keep the engine's rank order after decode/dedupe; negatives
    aggregate across all generated negative queries. A warm cache is
    replayed byte-identically with zero network calls. Zero decodable
    positives is an error; individual bad downloads are skipped and logged.
    """
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    if n_neg < 0:
        raise ValueError("n_neg must be >= 0")

    set_dir = query_cache_dir(cache_dir, query)
    manifest_path = set_dir / MANIFEST_NAME
    if manifest_path.exists() and not refresh:
        try:
            return load_manifest(manifest_path)
        except IntegrityError:
            log.warning("cache for '%s' is corrupt; refetching", query.label)

    set_dir.mkdir(parents=True, exist_ok=True)

    negative_queries: list[str] = []
    if negative_query_count > 0:
        try:
            negative_queries = generate_negative_queries(
                query.label,
                negative_query_count,
                client=llm,
                cache=ResponseCache(cache_dir),
            )
        except RetrievalError:
            if n_neg > 0:
                raise
            negative_queries = []

    search_margin = 4
    pos_hits = engine.search(query.search_text, limit=max(2 * n_pos, n_pos + search_margin))
    taken: set[str] = set()
    pos_items = _download_ranked(engine, pos_hits, n_pos, download_workers, retries, backoff, taken)
    if not pos_items:
        raise EmptyResultError(
            f"no decodable positive images for '{query.search_text}' "
            f"({len(pos_hits)} search hits)"
        )

    neg_items: list[_Downloaded] = []
    if n_neg > 0 and negative_queries:
        per_query = max(2 * n_neg, n_neg + search_margin)
        neg_hit_lists = [engine.search(nq, limit=per_query) for nq in negative_queries]
        neg_items = _download_ranked(
            engine, _interleave(neg_hit_lists), n_neg, download_workers, retries, backoff, set()
        )

    exemplars = ExemplarSet(
        query=query,
        positives=tuple(_store(pos_items, set_dir)),
        negatives=tuple(_store(neg_items, set_dir)),
        negative_queries=tuple(negative_queries),
        manifest=RetrievalManifest(
            engine_id=engine.engine_id,
            fetched_at=datetime.now(timezone.utc).isoformat(),
        ),
        base_dir=str(set_dir),
    )
    pin_manifest(exemplars, manifest_path)
    return exemplars
