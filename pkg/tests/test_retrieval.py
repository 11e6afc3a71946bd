import numpy as np
import pytest

from viewfill import (
    CacheMismatch,
    DimensionMismatch,
    EmbeddingRecord,
    EmbeddingSet,
    EmptyIndexError,
    ProjectionHead,
    Ranking,
    RetrievalIndex,
    build_index,
    fnv1a64,
    head_checksum,
    l2_normalize,
    load_index,
    rank,
    save_index,
    serialize_head,
    top_k,
)


def _random_index(rng, n=50, dim=6, n_classes=4, duplicate_every=7):
    feats = rng.standard_normal((n, dim))
    for i in range(duplicate_every, n, duplicate_every):
        feats[i] = feats[i - duplicate_every]  # force exact distance ties
    feats = feats / np.linalg.norm(feats, axis=1)[:, None]
    ids = [f"g{rng.integers(10**9):09d}_{i}" for i in range(n)]
    labels = [int(rng.integers(n_classes)) for _ in range(n)]
    return RetrievalIndex(0, tuple(ids), tuple(labels), feats)


def _brute_force_order(index, query):
    dists = np.clip(2.0 * (1.0 - index.features @ query), 0.0, 4.0)
    return sorted(range(index.size), key=lambda i: (dists[i], index.ids[i]))


class TestRank:
    def test_angle_gallery(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        index = RetrievalIndex(0, ("same", "orth", "anti"), (0, 1, 2), feats)
        ranking = rank(index, np.array([1.0, 0.0]))
        assert ranking.ids == ("same", "orth", "anti")
        assert np.allclose(ranking.distances, [0.0, 2.0, 4.0], atol=1e-12)

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            index = _random_index(rng)
            query = l2_normalize(rng.standard_normal(index.dim))
            ranking = rank(index, query)
            expected = _brute_force_order(index, query)
            assert list(ranking.ids) == [index.ids[i] for i in expected]
            assert list(ranking.labels) == [index.labels[i] for i in expected]

    def test_tie_break_by_ascending_id(self):
        f = l2_normalize(np.array([1.0, 2.0, 3.0]))
        feats = np.stack([f, f, f])
        index = RetrievalIndex(0, ("zebra", "apple", "mango"), (0, 1, 2), feats)
        ranking = rank(index, f)
        assert ranking.ids == ("apple", "mango", "zebra")

    def test_insertion_order_irrelevant(self):
        rng = np.random.default_rng(18)
        index = _random_index(rng, n=20)
        perm = rng.permutation(20)
        shuffled = RetrievalIndex(
            0,
            tuple(index.ids[i] for i in perm),
            tuple(index.labels[i] for i in perm),
            index.features[perm],
        )
        query = l2_normalize(rng.standard_normal(index.dim))
        a, b = rank(index, query), rank(shuffled, query)
        assert a.ids == b.ids and a.labels == b.labels
        assert np.array_equal(a.distances, b.distances)

    def test_distances_sorted_and_bounded(self):
        rng = np.random.default_rng(19)
        index = _random_index(rng)
        ranking = rank(index, l2_normalize(rng.standard_normal(index.dim)))
        assert np.all(np.diff(ranking.distances) >= 0)
        assert np.all((ranking.distances >= 0) & (ranking.distances <= 4))

    def test_ids_are_a_permutation(self):
        rng = np.random.default_rng(20)
        index = _random_index(rng, n=30)
        ranking = rank(index, l2_normalize(rng.standard_normal(index.dim)))
        assert sorted(ranking.ids) == sorted(index.ids)

    def test_empty_index_raises_at_rank_time(self):
        index = RetrievalIndex(0, (), (), np.empty((0, 3)))
        assert index.size == 0  # constructing an empty index is legal
        with pytest.raises(EmptyIndexError):
            rank(index, np.ones(3))

    def test_query_dim_checked(self):
        rng = np.random.default_rng(21)
        index = _random_index(rng, dim=4)
        with pytest.raises(DimensionMismatch):
            rank(index, np.ones(5))


class TestTopK:
    def test_prefix(self):
        rng = np.random.default_rng(22)
        index = _random_index(rng, n=10)
        ranking = rank(index, l2_normalize(rng.standard_normal(index.dim)))
        sub = top_k(ranking, 3)
        assert sub.ids == ranking.ids[:3]
        assert np.array_equal(sub.distances, ranking.distances[:3])

    def test_clamp_warns(self):
        ranking = Ranking(("a", "b"), (0, 1), np.array([0.1, 0.2]))
        with pytest.warns(UserWarning, match="clamping"):
            clamped = top_k(ranking, 5)
        assert len(clamped) == 2

    def test_k_below_one_rejected(self):
        ranking = Ranking(("a",), (0,), np.array([0.1]))
        with pytest.raises(ValueError):
            top_k(ranking, 0)


class TestBuildIndex:
    def test_filters_by_view(self):
        rng = np.random.default_rng(23)
        records = tuple(
            EmbeddingRecord(f"r{i}", i % 2, i % 2, rng.standard_normal(4))
            for i in range(6)
        )
        gallery = EmbeddingSet(4, 2, 2, records)
        head = ProjectionHead(rng.standard_normal((4, 3)), 1)
        index = build_index(gallery, head)
        assert index.size == 3
        assert all(i in ("r1", "r3", "r5") for i in index.ids)
        assert np.allclose(np.linalg.norm(index.features, axis=1), 1.0, atol=1e-12)

    def test_empty_gallery_gives_empty_index(self):
        head = ProjectionHead(np.eye(3), 0)
        index = build_index(EmbeddingSet(3, 1, 2, ()), head)
        assert index.size == 0 and index.dim == 3

    def test_projection_matches_head(self):
        rng = np.random.default_rng(24)
        rec = EmbeddingRecord("x", 0, 0, rng.standard_normal(4))
        gallery = EmbeddingSet(4, 1, 2, (rec,))
        head = ProjectionHead(rng.standard_normal((4, 3)), 0)
        index = build_index(gallery, head)
        assert np.allclose(index.features[0], head.project(rec.vector), atol=1e-12)


class TestIndexValidation:
    def test_duplicate_ids(self):
        f = np.eye(2)
        with pytest.raises(ValueError, match="duplicate"):
            RetrievalIndex(0, ("a", "a"), (0, 1), f)

    def test_non_unit_features(self):
        with pytest.raises(ValueError, match="unit"):
            RetrievalIndex(0, ("a",), (0,), np.array([[2.0, 0.0]]))

    def test_length_disagreement(self):
        with pytest.raises(DimensionMismatch):
            RetrievalIndex(0, ("a", "b"), (0,), np.eye(2))


class TestIndexCache:
    def _head_and_index(self, rng, n=12, dim=5, d_out=4):
        head = ProjectionHead(rng.standard_normal((dim, d_out)), 0)
        records = tuple(
            EmbeddingRecord(f"id_{i:02d}_é", i % 3, 0, rng.standard_normal(dim))
            for i in range(n)
        )
        gallery = EmbeddingSet(dim, 1, 3, records)
        return head, build_index(gallery, head)

    def test_round_trip_close_to_fresh_build(self, tmp_path):
        rng = np.random.default_rng(25)
        head, index = self._head_and_index(rng)
        path = tmp_path / "cache.mvix"
        save_index(index, path, head)
        loaded = load_index(path, head)
        assert loaded.ids == index.ids and loaded.labels == index.labels
        assert loaded.view == index.view
        assert np.allclose(loaded.features, index.features, atol=1e-6)
        # the cached index must rank like the fresh one
        query = l2_normalize(rng.standard_normal(head.d_out))
        assert rank(loaded, query).ids == rank(index, query).ids

    def test_stale_checkpoint_detected(self, tmp_path):
        rng = np.random.default_rng(26)
        head, index = self._head_and_index(rng)
        path = tmp_path / "cache.mvix"
        save_index(index, path, head)
        other = ProjectionHead(head.weights + 0.001, head.view)
        with pytest.raises(CacheMismatch):
            load_index(path, other)

    def test_none_head_skips_staleness_check(self, tmp_path):
        rng = np.random.default_rng(27)
        head, index = self._head_and_index(rng)
        path = tmp_path / "cache.mvix"
        save_index(index, path, head)
        assert load_index(path, None).ids == index.ids

    def test_empty_index_round_trip(self, tmp_path):
        head = ProjectionHead(np.eye(3), 0)
        index = RetrievalIndex(0, (), (), np.empty((0, 3)))
        path = tmp_path / "empty.mvix"
        save_index(index, path, head)
        assert load_index(path, head).size == 0

    def test_checksum_is_fnv_of_checkpoint_bytes(self):
        head = ProjectionHead(np.eye(2), 0)
        assert head_checksum(head) == fnv1a64(serialize_head(head))

    def test_truncated_cache(self, tmp_path):
        rng = np.random.default_rng(28)
        head, index = self._head_and_index(rng)
        path = tmp_path / "t.mvix"
        save_index(index, path, head)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DimensionMismatch):
            load_index(path, head)

    def test_version_flip_rejected(self, tmp_path):
        from viewfill import FormatError

        rng = np.random.default_rng(29)
        head, index = self._head_and_index(rng)
        path = tmp_path / "v.mvix"
        save_index(index, path, head)
        data = bytearray(path.read_bytes())
        data[4] = 200
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            load_index(path, head)
