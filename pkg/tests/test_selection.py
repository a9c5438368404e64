"""Mask selection: distances, binning, dominance, and verification."""

import math

import numpy as np
import pytest

from searchdet.selection import (
    Candidate,
    DistanceMatrix,
    bin_distances,
    distance_matrix,
    reference_distribution,
    select_and_verify,
    select_candidates,
    verify,
)

from oracles import oracle_selection
from planted import make_planted_instance


def dm_from_values(values):
    values = np.asarray(values, dtype=np.float64)
    m, n = values.shape
    return DistanceMatrix(values=values, query_ids=tuple(range(m)), mask_ids=tuple(range(n)))


class TestDistanceMatrix:
    def test_parallel_vectors_distance_zero(self):
        dm = distance_matrix([[2, 0, 0]], [[5, 0, 0]])
        assert dm.values[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_vectors_sqrt2(self):
        dm = distance_matrix([[1, 0]], [[0, 3]])
        assert dm.values[0, 0] == pytest.approx(math.sqrt(2), abs=1e-9)

    def test_random_matches_bruteforce(self, rng):
        q = rng.standard_normal((3, 5))
        r = rng.standard_normal((4, 5))
        dm = distance_matrix(q, r)
        for i in range(3):
            for j in range(4):
                qi = q[i] / np.linalg.norm(q[i])
                rj = r[j] / np.linalg.norm(r[j])
                assert dm.values[i, j] == pytest.approx(np.linalg.norm(qi - rj), abs=1e-9)

    def test_scale_invariance(self, rng):
        q = rng.standard_normal((2, 4))
        r = rng.standard_normal((3, 4))
        dm1 = distance_matrix(q, r)
        dm2 = distance_matrix(5.0 * q, 0.25 * r)
        assert dm1.values == pytest.approx(dm2.values, abs=1e-12)

    def test_raw_mode_skips_normalization(self):
        dm = distance_matrix([[3, 0]], [[0, 4]], mode="raw")
        assert dm.values[0, 0] == pytest.approx(5.0, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            distance_matrix([[0, 0]], [[1, 0]])
        with pytest.raises(ValueError):
            distance_matrix([[1, 0]], [[0, 0]], mode="raw")

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            distance_matrix([[1, 0]], [[1, 0, 0]])


class TestReferenceDistribution:
    def test_stats_match_recomputation(self, rng):
        q = rng.standard_normal((5, 4))
        ref = reference_distribution(q)
        assert ref.distances.size == 10
        assert ref.mean == pytest.approx(float(ref.distances.mean()), abs=1e-9)
        assert ref.std == pytest.approx(float(ref.distances.std()), abs=1e-9)

    def test_single_query_is_empty(self):
        ref = reference_distribution([[1.0, 0.0]])
        assert ref.distances.size == 0
        assert math.isnan(ref.mean) and math.isnan(ref.std)


class TestBinning:
    def test_partition_by_construction(self):
        dm = dm_from_values([[0.1, 0.3, 0.5], [0.2, 0.4, 0.6]])
        bins = bin_distances(dm)
        assert [[e[0] for e in b] for b in bins] == [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]

    def test_single_query_singleton_bins(self):
        dm = dm_from_values([[0.5, 0.1, 0.3]])
        bins = bin_distances(dm)
        assert [[e[0] for e in b] for b in bins] == [[0.1], [0.3], [0.5]]

    def test_random_matches_sort_and_chunk(self, rng):
        values = rng.uniform(0, 2, size=(4, 6))
        dm = dm_from_values(values)
        bins = bin_distances(dm)
        flat = sorted(values.flatten())
        got = [e[0] for b in bins for e in b]
        assert got == pytest.approx(flat, abs=0.0)
        assert all(len(b) == 4 for b in bins)

    def test_tie_break_by_mask_then_query(self):
        dm = dm_from_values([[0.5, 0.5], [0.5, 0.5]])
        bins = bin_distances(dm)
        # (distance, query, mask): mask ascending first, then query
        assert bins[0] == [(0.5, 0, 0), (0.5, 1, 0)]
        assert bins[1] == [(0.5, 0, 1), (0.5, 1, 1)]


class TestSelectCandidates:
    def test_pure_bin_is_candidate(self):
        bins = [[(0.1, 0, 2), (0.2, 1, 2)], [(0.3, 0, 0), (0.4, 1, 1)]]
        cands = select_candidates(bins)
        assert cands == [Candidate(bin_index=0, mask_id=2, dominance=1.0)]

    def test_split_bin_below_threshold(self):
        bins = [[(0.1, 0, 0), (0.2, 1, 1)]]
        assert select_candidates(bins) == []

    def test_exact_dominance_is_rejected(self):
        # 4 of 5 entries from mask 7: exactly 0.8, strict inequality fails
        bins = [[(0.1, 0, 7), (0.2, 1, 7), (0.3, 2, 7), (0.4, 3, 7), (0.5, 4, 1)]]
        assert select_candidates(bins) == []

    def test_duplicate_mask_keeps_lowest_bin(self):
        bins = [
            [(0.1, 0, 3)],
            [(0.2, 0, 3)],
            [(0.3, 0, 1)],
        ]
        cands = select_candidates(bins)
        assert [(c.bin_index, c.mask_id) for c in cands] == [(0, 3), (2, 1)]

    def test_threshold_configurable(self):
        bins = [[(0.1, 0, 7), (0.2, 1, 7), (0.3, 2, 7), (0.4, 3, 7), (0.5, 4, 1)]]
        cands = select_candidates(bins, dominance_threshold=0.75)
        assert [(c.mask_id, c.dominance) for c in cands] == [(7, 0.8)]


def equidistant_raw_instance(mu_dj):
    """Three queries pairwise 0.5 apart plus a region at ``mu_dj`` from each.

    Raw-mode construction on scaled basis vectors: by symmetry every
    pairwise distance is computed from bit-identical operands, so the
    reference deviation is exactly zero (not just tiny).
    """
    a = 0.5 / math.sqrt(2)  # pairwise distance a*sqrt(2) == 0.5
    queries = np.eye(3) * a
    # region (b, b, b): sqrt((b - a)^2 + 2 b^2) == mu_dj for each query
    disc = math.sqrt(4 * a * a - 12 * (a * a - mu_dj**2))
    b = (2 * a + disc) / 6
    region = np.full(3, b)
    return queries, region[None, :]


class TestVerify:
    def test_degenerate_sigma_accepts_exact_mean(self):
        queries, regions = equidistant_raw_instance(0.5)
        dm = distance_matrix(queries, regions, mode="raw")
        assert dm.values[:, 0] == pytest.approx([0.5] * 3, abs=1e-12)
        ref = reference_distribution(queries, mode="raw")
        assert ref.mean == pytest.approx(0.5, abs=1e-12)
        assert ref.std == pytest.approx(0.0, abs=1e-12)
        res = verify([Candidate(0, 0, 1.0)], dm, ref)
        assert res.verified == (0,)
        assert res.degenerate_reference
        assert res.deltas[0] == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_sigma_accepts_offset_mean_with_warning(self):
        queries, regions = equidistant_raw_instance(0.6)
        dm = distance_matrix(queries, regions, mode="raw")
        assert dm.values[:, 0] == pytest.approx([0.6] * 3, abs=1e-12)
        ref = reference_distribution(queries, mode="raw")
        res = verify([Candidate(0, 0, 1.0)], dm, ref)
        # delta = 0.1 > 0 would reject, but the zero-variance rule admits it
        assert res.deltas[0] == pytest.approx(0.1, abs=1e-9)
        assert res.verified == (0,)
        assert res.degenerate_reference

    def test_single_query_degenerate(self):
        dm = distance_matrix([[1, 0]], [[1, 0.1]])
        ref = reference_distribution([[1, 0]])
        res = verify([Candidate(0, 0, 1.0)], dm, ref)
        assert res.verified == (0,)
        assert res.degenerate_reference

    def test_mismatched_reference_rejected(self, rng):
        dm = distance_matrix(rng.standard_normal((3, 2)), rng.standard_normal((2, 2)))
        ref = reference_distribution(rng.standard_normal((4, 2)))
        with pytest.raises(ValueError):
            verify([], dm, ref)

    def test_random_instance_matches_oracle(self, rng):
        queries = rng.standard_normal((4, 6))
        regions = rng.standard_normal((8, 6))
        res = select_and_verify(queries, regions)
        cands, verified = oracle_selection(queries.tolist(), regions.tolist())
        assert [(c.bin_index, c.mask_id) for c in res.candidates] == [(k, j) for k, j, _ in cands]
        assert list(res.verified) == verified

    def test_bin_mean_mode(self):
        # candidate bin holds the 2 smallest distances; "bin" mode averages them
        values = np.array([[0.1, 0.9], [0.2, 1.0]])
        dm = dm_from_values(values)
        bins = bin_distances(dm)
        cands = select_candidates(bins)
        ref = reference_distribution([[1.0, 0.0], [0.9, 0.1]])
        res_all = verify(cands, dm, ref, mean_mode="all")
        res_bin = verify(cands, dm, ref, mean_mode="bin", bins=bins)
        assert res_all.per_mask_mean[0] == pytest.approx(0.15, abs=1e-12)
        assert res_bin.per_mask_mean[0] == pytest.approx(0.15, abs=1e-12)
        assert res_bin.per_mask_mean[1] == pytest.approx(0.95, abs=1e-12)
        assert res_all.per_mask_mean[1] == pytest.approx(0.95, abs=1e-12)


class TestEndToEndProperties:
    def test_oracle_equivalence_batch(self, rng):
        for _ in range(100):
            m = int(rng.integers(1, 7))
            n = int(rng.integers(1, 13))
            d = int(rng.integers(2, 9))
            queries = rng.standard_normal((m, d))
            regions = rng.standard_normal((n, d))
            res = select_and_verify(queries, regions)
            cands, verified = oracle_selection(queries.tolist(), regions.tolist())
            assert [(c.bin_index, c.mask_id) for c in res.candidates] == [
                (k, j) for k, j, _ in cands
            ]
            assert list(res.verified) == verified

    def test_verified_subset_of_candidates(self, rng):
        for _ in range(50):
            res = select_and_verify(rng.standard_normal((4, 5)), rng.standard_normal((6, 5)))
            assert set(res.verified) <= {c.mask_id for c in res.candidates}
            assert set(c.mask_id for c in res.candidates) <= set(range(6))
            assert all(c.dominance > 0.8 for c in res.candidates)

    def test_permutation_invariance(self, rng):
        queries = rng.standard_normal((4, 6))
        regions = rng.standard_normal((7, 6))
        base = select_and_verify(queries, regions)
        perm = rng.permutation(7)
        permuted = select_and_verify(queries, regions[perm])
        # map permuted ids back to original identities
        back = {new: old for new, old in enumerate(perm)}
        assert {back[v] for v in permuted.verified} == set(base.verified)

    def test_planted_signal_recovered(self, rng):
        for trial in range(30):
            queries, regions, planted = make_planted_instance(
                np.random.default_rng(trial), m=5, n=10
            )
            res = select_and_verify(queries, regions)
            assert planted in {c.mask_id for c in res.candidates}
            assert planted in res.verified

    def test_no_signal_rejected(self, rng):
        for trial in range(30):
            queries, regions, _ = make_planted_instance(
                np.random.default_rng(1000 + trial), m=5, n=10, with_planted=False
            )
            ref = reference_distribution(queries)
            assert ref.std > 0
            res = select_and_verify(queries, regions)
            assert res.verified == ()
