import numpy as np
import pytest

from motret.index import EmbeddingStore, RankedList, knn_query, load_index, save_index
from motret.io_utils import FormatError


def brute_force_knn(entries, query, k):
    """Independent oracle: per-row python loop, sort by (-score, id)."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    scored = []
    for motion_id, vector in entries:
        v = np.asarray(vector, dtype=np.float64)
        v = v / np.linalg.norm(v)
        v = v.astype(np.float32).astype(np.float64)  # ingest rounds to f32
        score = min(1.0, max(-1.0, float(np.dot(v, q))))
        scored.append((motion_id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def random_entries(rng, n, d):
    return [(f"m{i:05d}", rng.standard_normal(d)) for i in range(n)]


class TestBuild:
    def test_empty_store(self):
        store = EmbeddingStore.build([])
        assert len(store) == 0
        result = knn_query(store, np.ones(4), k=3)
        assert result.items == ()

    def test_duplicate_id_rejected(self):
        entries = [("a", np.ones(3)), ("a", np.ones(3))]
        with pytest.raises(ValueError, match="'a'"):
            EmbeddingStore.build(entries)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            EmbeddingStore.build([("a", np.zeros(3))])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            EmbeddingStore.build([("a", np.ones(3)), ("b", np.ones(4))])

    def test_thousand_vectors_normalized(self):
        rng = np.random.default_rng(0)
        store = EmbeddingStore.build(random_entries(rng, 1000, 16))
        assert len(store) == 1000
        norms = np.linalg.norm(store._matrix.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, np.ones(1000), atol=1e-6)


class TestKnnQuery:
    def test_self_match_scores_one(self):
        vectors = np.eye(4, dtype=np.float64)
        store = EmbeddingStore.build([(f"m{i}", vectors[i]) for i in range(4)])
        result = knn_query(store, vectors[2], k=1)
        assert result.items[0] == ("m2", 1.0)

    def test_k_larger_than_store(self):
        rng = np.random.default_rng(1)
        store = EmbeddingStore.build(random_entries(rng, 5, 8))
        assert len(knn_query(store, rng.standard_normal(8), k=50)) == 5

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        entries = random_entries(rng, 300, 16)
        store = EmbeddingStore.build(entries)
        for _ in range(25):
            q = rng.standard_normal(16)
            got = knn_query(store, q, k=10)
            expected = brute_force_knn(entries, q, 10)
            assert [m for m, _ in got.items] == [m for m, _ in expected]
            np.testing.assert_allclose(
                [s for _, s in got.items], [s for _, s in expected], atol=0
            )

    def test_exact_ties_break_by_ascending_id(self):
        v = np.array([0.6, 0.8])
        entries = [("zz", v), ("aa", v), ("mm", v), ("bb", -v)]
        store = EmbeddingStore.build(entries)
        result = knn_query(store, v, k=4)
        assert result.ids() == ["aa", "mm", "zz", "bb"]

    def test_insertion_order_irrelevant(self):
        rng = np.random.default_rng(3)
        entries = random_entries(rng, 40, 8)
        q = rng.standard_normal(8)
        a = knn_query(EmbeddingStore.build(entries), q, k=10)
        b = knn_query(EmbeddingStore.build(entries[::-1]), q, k=10)
        assert a.items == b.items

    def test_scores_within_unit_interval(self):
        rng = np.random.default_rng(4)
        store = EmbeddingStore.build(random_entries(rng, 200, 4))
        for _ in range(20):
            result = knn_query(store, rng.standard_normal(4), k=200)
            scores = [s for _, s in result.items]
            assert all(-1.0 <= s <= 1.0 for s in scores)

    def test_results_are_sorted_prefix(self):
        rng = np.random.default_rng(5)
        entries = random_entries(rng, 100, 8)
        store = EmbeddingStore.build(entries)
        q = rng.standard_normal(8)
        full = knn_query(store, q, k=100)
        for k in (1, 7, 30):
            assert knn_query(store, q, k=k).items == full.items[:k]

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(6)
        store = EmbeddingStore.build(random_entries(rng, 4, 8))
        with pytest.raises(ValueError, match="dimension"):
            knn_query(store, np.ones(5), k=1)

    def test_zero_query_rejected(self):
        rng = np.random.default_rng(7)
        store = EmbeddingStore.build(random_entries(rng, 4, 8))
        with pytest.raises(ValueError, match="zero"):
            knn_query(store, np.zeros(8), k=1)

    def test_bad_k_rejected(self):
        store = EmbeddingStore.build([])
        with pytest.raises(ValueError, match="k must be"):
            knn_query(store, np.ones(3), k=0)


class TestRankedList:
    def test_decreasing_scores_enforced(self):
        with pytest.raises(ValueError, match="non-increasing"):
            RankedList(query_id="q", items=(("a", 0.1), ("b", 0.5)))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            RankedList(query_id="q", items=(("a", 0.5), ("a", 0.2)))


class TestSnapshot:
    def test_empty_round_trip(self, tmp_path):
        store = EmbeddingStore.build([])
        path = tmp_path / "empty.midx"
        save_index(store, path)
        again = load_index(path)
        assert len(again) == 0

    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(8)
        for trial in range(10):
            store = EmbeddingStore.build(random_entries(rng, int(rng.integers(1, 40)), 12))
            path = tmp_path / f"s{trial}.midx"
            save_index(store, path)
            again = load_index(path)
            assert again.ids == store.ids
            np.testing.assert_array_equal(again._matrix, store._matrix)
            save_index(again, path)  # second save produces identical bytes
            twice = load_index(path)
            np.testing.assert_array_equal(twice._matrix, store._matrix)

    def test_truncated_file_fails_closed(self, tmp_path):
        rng = np.random.default_rng(9)
        store = EmbeddingStore.build(random_entries(rng, 8, 6))
        path = tmp_path / "s.midx"
        save_index(store, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_index(path)

    def test_corrupt_header_fails_closed(self, tmp_path):
        path = tmp_path / "s.midx"
        path.write_bytes(b"XIDX" + b"\x00" * 16)
        with pytest.raises(FormatError, match="bad magic"):
            load_index(path)
