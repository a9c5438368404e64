"""Frequency-binned mask selection with reference-distribution verification.

Pipeline: compute all query-to-region Euclidean distances, sort them, chop
the sorted list into one bin of m entries per region, emit a region as a
candidate when it strictly dominates a bin (> 80% of its entries by
default), then verify each candidate by comparing its mean distance to the
mean of the pairwise query-to-query ("reference") distances: candidates
further than ``sigma_multiplier`` reference standard deviations are dropped.

Distances operate on L2-normalized copies by default so they are monotone
in cosine similarity; ``mode="raw"`` skips the normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DISTANCE_MODES = ("normalized", "raw")
MEAN_MODES = ("all", "bin")


def _normalized_rows(vectors, name: str) -> np.ndarray:
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} contains non-finite values")
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"{name} contains a zero vector")
    return mat / norms[:, None]


def _rows(vectors, name: str, mode: str) -> np.ndarray:
    if mode not in DISTANCE_MODES:
        raise ValueError(f"mode must be one of {DISTANCE_MODES}, got {mode!r}")
    mat = _normalized_rows(vectors, name)
    if mode == "raw":
        mat = np.asarray(vectors, dtype=np.float64)
    return mat


@dataclass(frozen=True)
class DistanceMatrix:
    """m x n distances between adjusted queries (rows) and region embeddings."""

    values: np.ndarray
    query_ids: tuple[int, ...]
    mask_ids: tuple[int, ...]
    mode: str = "normalized"

    def __post_init__(self):
        self.values.setflags(write=False)
        if self.values.shape != (len(self.query_ids), len(self.mask_ids)):
            raise ValueError("distance matrix shape does not match id lists")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("distances must be finite and non-negative")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def distance_matrix(queries, region_embeddings, mode: str = "normalized") -> DistanceMatrix:
    """Pairwise Euclidean distances, on L2-normalized operands by default."""
    q = _rows(queries, "queries", mode)
    r = _rows(region_embeddings, "region_embeddings", mode)
    if q.shape[1] != r.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {r.shape[1]}")
    diff = q[:, None, :] - r[None, :, :]
    values = np.sqrt(np.maximum(np.einsum("ijk,ijk->ij", diff, diff), 0.0))
    return DistanceMatrix(
        values=values,
        query_ids=tuple(range(q.shape[0])),
        mask_ids=tuple(range(r.shape[0])),
        mode=mode,
    )


@dataclass(frozen=True)
class ReferenceDistribution:
    """Pairwise distances among the queries; calibrates verification.

    ``mean``/``std`` are the population statistics over the m(m-1)/2 pairs.
    With fewer than two queries both are NaN and verification degenerates.
    """

    distances: np.ndarray
    mean: float
    std: float
    query_count: int

    def __post_init__(self):
        self.distances.setflags(write=False)
        expected = self.query_count * (self.query_count - 1) // 2
        if self.distances.size != expected:
            raise ValueError(
                f"expected {expected} pairwise distances for {self.query_count} queries, "
                f"got {self.distances.size}"
            )


def reference_distribution(queries, mode: str = "normalized") -> ReferenceDistribution:
    q = _rows(queries, "queries", mode)
    m = q.shape[0]
    pairs = [np.linalg.norm(q[i] - q[j]) for i in range(m) for j in range(i + 1, m)]
    dists = np.asarray(pairs, dtype=np.float64)
    if dists.size == 0:
        return ReferenceDistribution(distances=dists, mean=float("nan"), std=float("nan"), query_count=m)
    return ReferenceDistribution(
        distances=dists,
        mean=float(dists.mean()),
        std=float(dists.std()),  # population std: divides by the full pair count
        query_count=m,
    )


BinEntry = tuple[float, int, int]  # (distance, query id, mask id)


def bin_distances(dm: DistanceMatrix) -> list[list[BinEntry]]:
    """Sort all m*n distances ascending and partition into n bins of m entries.

    Ties are broken by (mask id, query id) ascending so the partition is
    deterministic.
    """
    entries = [
        (float(dm.values[i, j]), dm.query_ids[i], dm.mask_ids[j])
        for i in range(dm.m)
        for j in range(dm.n)
    ]
    entries.sort(key=lambda e: (e[0], e[2], e[1]))
    m = dm.m
    return [entries[k * m : (k + 1) * m] for k in range(dm.n)]


@dataclass(frozen=True)
class Candidate:
    bin_index: int
    mask_id: int
    dominance: float


def select_candidates(bins: list[list[BinEntry]], dominance_threshold: float = 0.8) -> list[Candidate]:
    """Emit (bin, mask, dominance) for each bin one mask strictly dominates.

    Dominance must exceed the threshold strictly (a bin split exactly at the
    threshold yields no candidate). A mask appearing as dominant in several
    bins is kept once, at its lowest bin index. Argmax ties go to the lowest
    mask id.
    """
    if not 0.0 < dominance_threshold <= 1.0:
        raise ValueError(f"dominance threshold must be in (0, 1], got {dominance_threshold}")
    candidates: list[Candidate] = []
    seen: set[int] = set()
    for k, entries in enumerate(bins):
        if not entries:
            continue
        counts: dict[int, int] = {}
        for _, _, mask_id in entries:
            counts[mask_id] = counts.get(mask_id, 0) + 1
        best_mask = min(counts, key=lambda j: (-counts[j], j))
        share = counts[best_mask] / len(entries)
        if share > dominance_threshold and best_mask not in seen:
            seen.add(best_mask)
            candidates.append(Candidate(bin_index=k, mask_id=best_mask, dominance=share))
    return candidates


@dataclass(frozen=True)
class SelectionResult:
    candidates: tuple[Candidate, ...]
    verified: tuple[int, ...]
    per_mask_mean: dict[int, float]
    deltas: dict[int, float]
    degenerate_reference: bool = False
    reference: ReferenceDistribution | None = field(default=None, compare=False)


def verify(
    candidates: list[Candidate],
    dm: DistanceMatrix,
    ref: ReferenceDistribution,
    sigma_multiplier: float = 3.0,
    mean_mode: str = "all",
    bins: list[list[BinEntry]] | None = None,
) -> SelectionResult:
    """Keep candidates whose mean distance sits within ``sigma_multiplier``
    reference standard deviations of the reference mean.

    ``mean_mode="all"`` averages a candidate's distances over every query.
    ``mean_mode="bin"`` instead averages the m distances of the bin that made
    it a candidate (an alternative reading; requires ``bins``).

    With fewer than two queries, or a zero-variance reference, there is no
    usable scale: all candidates are accepted and the result is flagged
    ``degenerate_reference``.
    """
    if mean_mode not in MEAN_MODES:
        raise ValueError(f"mean_mode must be one of {MEAN_MODES}, got {mean_mode!r}")
    if mean_mode == "bin" and bins is None:
        raise ValueError("mean_mode='bin' requires the bins")
    if sigma_multiplier <= 0:
        raise ValueError(f"sigma multiplier must be > 0, got {sigma_multiplier}")
    if ref.query_count != dm.m:
        raise ValueError(f"reference built from {ref.query_count} queries, matrix has {dm.m}")

    col_of = {mask_id: j for j, mask_id in enumerate(dm.mask_ids)}
    per_mask_mean: dict[int, float] = {}
    for cand in candidates:
        if mean_mode == "bin":
            per_mask_mean[cand.mask_id] = float(
                np.mean([d for d, _, _ in bins[cand.bin_index]])
            )
        else:
            per_mask_mean[cand.mask_id] = float(dm.values[:, col_of[cand.mask_id]].mean())

    degenerate = ref.query_count < 2 or ref.std == 0.0
    deltas: dict[int, float] = {
        mask_id: abs(mu - ref.mean) if ref.query_count >= 2 else float("nan")
        for mask_id, mu in per_mask_mean.items()
    }
    if degenerate:
        verified = tuple(c.mask_id for c in candidates)
    else:
        verified = tuple(
            c.mask_id for c in candidates if deltas[c.mask_id] <= sigma_multiplier * ref.std
        )
    return SelectionResult(
        candidates=tuple(candidates),
        verified=verified,
        per_mask_mean=per_mask_mean,
        deltas=deltas,
        degenerate_reference=degenerate,
        reference=ref,
    )


def select_and_verify(
    queries,
    region_embeddings,
    dominance_threshold: float = 0.8,
    sigma_multiplier: float = 3.0,
    mode: str = "normalized",
    mean_mode: str = "all",
) -> SelectionResult:
    """Run the full selection pipeline on raw vectors."""
    dm = distance_matrix(queries, region_embeddings, mode=mode)
    ref = reference_distribution(queries, mode=mode)
    bins = bin_distances(dm)
    candidates = select_candidates(bins, dominance_threshold)
    return verify(candidates, dm, ref, sigma_multiplier, mean_mode=mean_mode, bins=bins)


def dump_debug(
    dm: DistanceMatrix,
    bins: list[list[BinEntry]],
    result: SelectionResult,
    path: str | Path,
) -> None:
    """Write the selection internals as JSON for offline inspection."""
    doc = {
        "distances": dm.values.tolist(),
        "query_ids": list(dm.query_ids),
        "mask_ids": list(dm.mask_ids),
        "bins": [[[d, q, j] for d, q, j in b] for b in bins],
        "candidates": [
            {"bin_index": c.bin_index, "mask_id": c.mask_id, "dominance": c.dominance}
            for c in result.candidates
        ],
        "verified": list(result.verified),
        "per_mask_mean": {str(k): v for k, v in result.per_mask_mean.items()},
        "deltas": {str(k): v for k, v in result.deltas.items()},
        "degenerate_reference": result.degenerate_reference,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
