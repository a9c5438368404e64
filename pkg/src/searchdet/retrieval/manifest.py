"""Manifest serialization: pin an exemplar set, reload it without searching."""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import FormatError, IntegrityError
from ..images import sha256_bytes
from .types import ExemplarRecord, ExemplarSet, LabelQuery, RetrievalManifest

MANIFEST_NAME = "manifest.json"


def manifest_dict(exemplars: ExemplarSet) -> dict:
    def records(items):
        return [
            {
                "rank": r.rank,
                "source_url": r.source_url,
                "content_sha256": r.content_sha256,
                "relative_path": r.relative_path,
            }
            for r in items
        ]

    return {
        "label": exemplars.query.label,
        "context_hint": exemplars.query.context_hint,
        "engine_id": exemplars.manifest.engine_id,
        "fetched_at": exemplars.manifest.fetched_at,
        "negative_queries": list(exemplars.negative_queries),
        "positives": records(exemplars.positives),
        "negatives": records(exemplars.negatives),
    }


def pin_manifest(exemplars: ExemplarSet, path: str | Path) -> Path:
    """Write a manifest sufficient to reconstruct the set from cached bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest_dict(exemplars), indent=2, sort_keys=True) + "\n")
    tmp.replace(path)
    return path


def load_manifest(path: str | Path, images_root: str | Path | None = None) -> ExemplarSet:
    """Reload a pinned exemplar set, verifying every cached image hash.

    Relative paths resolve against ``images_root`` (default: the manifest's
    own directory). Any hash mismatch or missing file raises IntegrityError.
    """
    path = Path(path)
    base = Path(images_root) if images_root is not None else path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from exc
    try:
        query = LabelQuery(label=doc["label"], context_hint=doc.get("context_hint", ""))
        exemplars = ExemplarSet(
            query=query,
            positives=tuple(_record(r) for r in doc["positives"]),
            negatives=tuple(_record(r) for r in doc["negatives"]),
            negative_queries=tuple(doc.get("negative_queries", [])),
            manifest=RetrievalManifest(engine_id=doc["engine_id"], fetched_at=doc["fetched_at"]),
            base_dir=str(base),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest {path} missing field: {exc}") from exc
    _verify_integrity(exemplars, base)
    return exemplars


def _record(doc: dict) -> ExemplarRecord:
    return ExemplarRecord(
        rank=int(doc["rank"]),
        source_url=str(doc["source_url"]),
        content_sha256=str(doc["content_sha256"]),
        relative_path=str(doc["relative_path"]),
    )


def _verify_integrity(exemplars: ExemplarSet, base: Path) -> None:
    for record in (*exemplars.positives, *exemplars.negatives):
        file_path = base / record.relative_path
        if not file_path.exists():
            raise IntegrityError(f"manifest references missing file {file_path}")
        digest = sha256_bytes(file_path.read_bytes())
        if digest != record.content_sha256:
            raise IntegrityError(
                f"{file_path} hashes to {digest[:12]}..., manifest says "
                f"{record.content_sha256[:12]}..."
            )
