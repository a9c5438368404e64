"""Attention-weighted query construction from exemplar embeddings.

Given an attention query vector and sets of positive/negative exemplar
embeddings, the adjusted query is built in four steps:

1. cosine similarity between the query and each exemplar embedding,
2. softmax over those similarities to get attention weights,
3. weighted sums of the positive and of the negative embeddings,
4. adjusted query = positive sum minus negative sum.

An empty negative set contributes a zero vector, so the positives-only
ablation runs through the same code path. ``pooling="mean"`` swaps the
softmax weights for uniform ones (the mean-pooling ablation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POOLING_MODES = ("attention", "mean")


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _as_matrix(vectors, dim: int | None, name: str) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError(f"{name} must be non-empty")
    mat = np.asarray([_as_vector(v, f"{name}[{i}]") for i, v in enumerate(vectors)])
    if dim is not None and mat.shape[1] != dim:
        raise ValueError(f"{name} dimension {mat.shape[1]} != query dimension {dim}")
    return mat


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Symmetric and invariant to positive rescaling of either operand.
    Zero vectors have no direction and are rejected.
    """
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def attention_weights(similarities) -> np.ndarray:
    """Softmax over a list of similarity scores.

    Weights are strictly positive, sum to 1, and preserve the input
    ordering (larger similarity, larger weight). No temperature.
    """
    s = np.asarray(similarities, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("similarities must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(s)):
        raise ValueError("similarities contain non-finite values")
    z = np.exp(s - s.max())
    return z / z.sum()


def attention_pool(query, embeddings, pooling: str = "attention") -> np.ndarray:
    """Weighted sum of ``embeddings``; weights come from softmaxed cosine
    similarities against ``query`` (or are uniform under ``pooling="mean"``).

    The result lies in the convex hull of the embeddings.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"pooling must be one of {POOLING_MODES}, got {pooling!r}")
    q = _as_vector(query, "query")
    mat = _as_matrix(embeddings, q.shape[0], "embeddings")
    if pooling == "mean":
        weights = np.full(mat.shape[0], 1.0 / mat.shape[0])
    else:
        sims = [cosine_similarity(q, row) for row in mat]
        weights = attention_weights(sims)
    return weights @ mat


@dataclass(frozen=True)
class AdjustedQuery:
    """An adjusted query vector plus the components it was built from."""

    vector: np.ndarray
    a_pos: np.ndarray
    a_neg: np.ndarray
    alpha_pos: np.ndarray
    alpha_neg: np.ndarray  # empty when no negatives were supplied

    def __post_init__(self):
        for arr in (self.vector, self.a_pos, self.a_neg, self.alpha_pos, self.alpha_neg):
            arr.setflags(write=False)


def adjusted_query(query, positives, negatives=(), pooling: str = "attention") -> AdjustedQuery:
    """Build the adjusted query: pooled positives minus pooled negatives.

    ``query`` is the attention query the similarities are computed against.
    With no negatives the negative side is the zero vector.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"pooling must be one of {POOLING_MODES}, got {pooling!r}")
    q = _as_vector(query, "query")
    pos = _as_matrix(positives, q.shape[0], "positives")

    def _weights(mat: np.ndarray) -> np.ndarray:
        if pooling == "mean":
            return np.full(mat.shape[0], 1.0 / mat.shape[0])
        return attention_weights([cosine_similarity(q, row) for row in mat])

    alpha_pos = _weights(pos)
    a_pos = alpha_pos @ pos
    if len(negatives) > 0:
        neg = _as_matrix(negatives, q.shape[0], "negatives")
        alpha_neg = _weights(neg)
        a_neg = alpha_neg @ neg
    else:
        alpha_neg = np.empty(0)
        a_neg = np.zeros_like(a_pos)
    return AdjustedQuery(
        vector=a_pos - a_neg,
        a_pos=a_pos,
        a_neg=a_neg,
        alpha_pos=alpha_pos,
        alpha_neg=alpha_neg,
    )


@dataclass(frozen=True)
class QueryBundle:
    """Per-exemplar adjusted queries (for mask selection) plus one pooled
    adjusted query (for the heatmap path and detection scoring)."""

    per_exemplar_queries: tuple[AdjustedQuery, ...]
    pooled_query: AdjustedQuery

    @property
    def m(self) -> int:
        return len(self.per_exemplar_queries)

    def query_matrix(self) -> np.ndarray:
        return np.asarray([aq.vector for aq in self.per_exemplar_queries])


def build_query_bundle(
    image_embedding,
    positive_embeddings,
    negative_embeddings=(),
    pooling: str = "attention",
) -> QueryBundle:
    """One adjusted query per positive exemplar, plus a pooled query.

    Each per-exemplar query uses that exemplar's own embedding as the
    attention query against the negatives, so with singleton positives the
    positive side is the exemplar itself. The pooled query attends with the
    input image's embedding over the full positive and negative sets.
    """
    per_exemplar = tuple(
        adjusted_query(e_pos, [e_pos], negative_embeddings, pooling=pooling)
        for e_pos in positive_embeddings
    )
    if not per_exemplar:
        raise ValueError("positive_embeddings must be non-empty")
    pooled = adjusted_query(
        image_embedding, positive_embeddings, negative_embeddings, pooling=pooling
    )
    return QueryBundle(per_exemplar_queries=per_exemplar, pooled_query=pooled)
