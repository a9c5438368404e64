"""Value types for exemplar retrieval."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..errors import IntegrityError
from ..images import Raster, sha256_bytes


@dataclass(frozen=True)
class LabelQuery:
    """A free-text object label plus an optional dataset/context hint.

    The hint is appended to the search text; descriptive context ("aerial
    view of boat" instead of "boat") measurably improves retrieval.
    """

    label: str
    context_hint: str = ""

    def __post_init__(self):
        if not self.label.strip():
            raise ValueError("label must be non-empty")
        object.__setattr__(self, "label", self.label.strip())
        object.__setattr__(self, "context_hint", self.context_hint.strip())

    @property
    def search_text(self) -> str:
        return f"{self.label} {self.context_hint}".strip()


@dataclass(frozen=True)
class ExemplarRecord:
    """Provenance for one cached exemplar image."""

    rank: int
    source_url: str
    content_sha256: str
    relative_path: str

    def load(self, base_dir: str | Path) -> Raster:
        data = (Path(base_dir) / self.relative_path).read_bytes()
        digest = sha256_bytes(data)
        if digest != self.content_sha256:
            raise IntegrityError(
                f"cached image {self.relative_path} hashes to {digest[:12]}..., "
                f"manifest says {self.content_sha256[:12]}..."
            )
        return Raster.from_bytes(data)


@dataclass(frozen=True)
class RetrievalManifest:
    engine_id: str
    fetched_at: str  # RFC 3339


@dataclass(frozen=True)
class ExemplarSet:
    """Positive and negative exemplar images for one label, with provenance."""

    query: LabelQuery
    positives: tuple[ExemplarRecord, ...]
    negatives: tuple[ExemplarRecord, ...]
    negative_queries: tuple[str, ...]
    manifest: RetrievalManifest
    base_dir: str = field(compare=False, default="")

    def __post_init__(self):
        for name, records in (("positives", self.positives), ("negatives", self.negatives)):
            hashes = [r.content_sha256 for r in records]
            if len(set(hashes)) != len(hashes):
                raise ValueError(f"{name} contain duplicate content hashes")

    @property
    def label(self) -> str:
        return self.query.label

    def load_positives(self) -> list[Raster]:
        return [r.load(self.base_dir) for r in self.positives]

    def load_negatives(self) -> list[Raster]:
        return [r.load(self.base_dir) for r in self.negatives]
