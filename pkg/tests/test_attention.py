"""Query-construction math: similarities, softmax weights, pooling, adjustment."""

import numpy as np
import pytest

from searchdet.attention import (
    adjusted_query,
    attention_pool,
    attention_weights,
    build_query_bundle,
    cosine_similarity,
)

from oracles import oracle_adjusted_query


class TestCosineSimilarity:
    def test_identical_vectors(self, rng):
        for _ in range(20):
            v = rng.standard_normal(6)
            assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_hand_value(self):
        assert cosine_similarity([3, 4], [4, 3]) == pytest.approx(0.96, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0, 0], [0, 0, 2]) == 0.0

    def test_symmetry_and_scale_invariance(self, rng):
        for _ in range(200):
            a = rng.standard_normal(5)
            b = rng.standard_normal(5)
            c = rng.uniform(0.1, 10.0)
            assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
            assert cosine_similarity(c * a, b) == pytest.approx(cosine_similarity(a, b), abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity([0, 0], [1, 0])
        with pytest.raises(ValueError):
            cosine_similarity([1, 0], [0, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity([1, 0], [1, 0, 0])

    def test_range(self, rng):
        for _ in range(200):
            s = cosine_similarity(rng.standard_normal(8), rng.standard_normal(8))
            assert -1.0 <= s <= 1.0


class TestAttentionWeights:
    def test_singleton(self):
        assert attention_weights([3.7]) == pytest.approx([1.0], abs=1e-12)

    def test_two_values(self):
        w = attention_weights([1.0, 0.0])
        assert w == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_constant_input_is_uniform(self):
        w = attention_weights([0.4, 0.4, 0.4])
        assert w == pytest.approx([1 / 3] * 3, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            attention_weights([])

    def test_properties_random(self, rng):
        for _ in range(1000):
            sims = rng.uniform(-1, 1, size=rng.integers(1, 9))
            w = attention_weights(sims)
            assert np.all(w > 0)
            assert abs(w.sum() - 1.0) <= 1e-9
            assert np.array_equal(np.argsort(sims, kind="stable"), np.argsort(w, kind="stable"))


class TestAttentionPool:
    def test_single_embedding_identity(self):
        e = np.array([2.0, -1.0, 0.5])
        assert attention_pool([1, 0, 0], [e]) == pytest.approx(e, abs=1e-12)

    def test_identical_embeddings(self):
        e = [0.3, 0.7]
        out = attention_pool([1, 0], [e, e])
        assert out == pytest.approx(e, abs=1e-12)

    def test_hand_composed_value(self):
        out = attention_pool([1, 0], [[1, 0], [0, 1]])
        assert out == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_convex_hull(self, rng):
        # pooled vector is a convex combination: components bounded by extremes
        for _ in range(100):
            q = rng.standard_normal(4)
            mat = rng.standard_normal((5, 4))
            out = attention_pool(q, mat)
            assert np.all(out <= mat.max(axis=0) + 1e-12)
            assert np.all(out >= mat.min(axis=0) - 1e-12)

    def test_mean_mode(self, rng):
        q = rng.standard_normal(4)
        mat = rng.standard_normal((6, 4))
        out = attention_pool(q, mat, pooling="mean")
        assert out == pytest.approx(mat.mean(axis=0), abs=1e-12)

    def test_equal_similarities_reduce_to_mean(self):
        # all embeddings at the same angle to the query: weights coincide
        q = [1.0, 0.0, 0.0]
        mat = [[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 0.0, 1.0]]
        out = attention_pool(q, mat)
        assert out == pytest.approx(np.mean(mat, axis=0), abs=1e-9)

    def test_empty_and_mismatch_rejected(self):
        with pytest.raises(ValueError):
            attention_pool([1, 0], [])
        with pytest.raises(ValueError):
            attention_pool([1, 0], [[1, 0, 0]])


class TestAdjustedQuery:
    def test_singleton_sides(self):
        aq = adjusted_query([1, 0], [[1, 0]], [[0, 1]])
        assert aq.vector == pytest.approx([1.0, -1.0], abs=1e-12)

    def test_empty_negatives_convention(self):
        e = [0.2, 0.9]
        aq = adjusted_query([1, 0], [e], [])
        assert aq.vector == pytest.approx(e, abs=1e-12)
        assert aq.a_neg == pytest.approx([0.0, 0.0], abs=0.0)
        assert aq.alpha_neg.size == 0

    def test_vector_is_exact_difference(self, rng):
        for _ in range(50):
            aq = adjusted_query(
                rng.standard_normal(5),
                rng.standard_normal((3, 5)),
                rng.standard_normal((2, 5)),
            )
            assert np.array_equal(aq.vector, aq.a_pos - aq.a_neg)

    def test_weight_sums(self, rng):
        aq = adjusted_query(rng.standard_normal(4), rng.standard_normal((4, 4)),
                            rng.standard_normal((3, 4)))
        assert abs(aq.alpha_pos.sum() - 1.0) <= 1e-9
        assert abs(aq.alpha_neg.sum() - 1.0) <= 1e-9

    def test_oracle_equivalence_small(self, rng):
        for _ in range(200):
            q = rng.standard_normal(4)
            pos = rng.standard_normal((3, 4))
            neg = rng.standard_normal((2, 4))
            got = adjusted_query(q, pos, neg).vector
            want = oracle_adjusted_query(q.tolist(), pos.tolist(), neg.tolist())
            assert got == pytest.approx(want, abs=1e-6)

    def test_empty_positives_rejected(self):
        with pytest.raises(ValueError):
            adjusted_query([1, 0], [], [[1, 0]])


class TestQueryBundle:
    def test_single_positive_no_negatives(self):
        e = [0.5, 0.5]
        bundle = build_query_bundle([1, 0], [e], [])
        assert bundle.m == 1
        assert bundle.per_exemplar_queries[0].vector == pytest.approx(e, abs=1e-12)
        assert bundle.pooled_query.vector == pytest.approx(e, abs=1e-12)

    def test_identical_positives_pool_to_same(self):
        e = [0.1, -0.4, 0.2]
        bundle = build_query_bundle([1, 0, 0], [e, e, e], [])
        assert bundle.pooled_query.vector == pytest.approx(e, abs=1e-12)

    def test_per_exemplar_matches_oracle(self, rng):
        q_img = rng.standard_normal(4)
        pos = rng.standard_normal((3, 4))
        neg = rng.standard_normal((2, 4))
        bundle = build_query_bundle(q_img, pos, neg)
        assert bundle.m == 3
        for i in range(3):
            want = oracle_adjusted_query(pos[i].tolist(), [pos[i].tolist()], neg.tolist())
            assert bundle.per_exemplar_queries[i].vector == pytest.approx(want, abs=1e-6)
        want_pooled = oracle_adjusted_query(q_img.tolist(), pos.tolist(), neg.tolist())
        assert bundle.pooled_query.vector == pytest.approx(want_pooled, abs=1e-6)

    def test_mean_pooling_flows_through(self, rng):
        pos = rng.standard_normal((4, 3))
        neg = rng.standard_normal((2, 3))
        bundle = build_query_bundle(rng.standard_normal(3), pos, neg, pooling="mean")
        assert bundle.pooled_query.vector == pytest.approx(
            pos.mean(axis=0) - neg.mean(axis=0), abs=1e-12
        )
