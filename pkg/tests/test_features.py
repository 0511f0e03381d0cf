import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earl.errors import ConfigError, DataError
from earl.features import (KnnIndex, ReservedSet, build_relational_features,
                           cosine_similarity, knn_weights, retrieve_topk,
                           select_reserved)
from earl.kg import KnowledgeGraph

from conftest import random_kg


def brute_force_features(kg):
    """Independent recount of head/tail frequencies straight off the triples."""
    out = np.zeros((kg.n_entities, 2 * kg.n_relations), dtype=np.int64)
    for h, r, t in kg.train:
        out[h, r] += 1
        out[t, kg.n_relations + r] += 1
    return out


class TestRelationalFeatures:
    def test_hand_counted_toy(self):
        kg = KnowledgeGraph.from_triples(
            [("A", "r1", "B"), ("A", "r1", "C"), ("B", "r2", "A")])
        feats = build_relational_features(kg)
        a = kg.entities.index["A"]
        assert feats.vector(a).tolist() == [2, 0, 0, 1]

    def test_isolated_entity_zero_vector(self):
        kg = KnowledgeGraph.from_triples([("A", "r1", "B")], test=[("A", "r1", "A")])
        kg.entities.add("LONER")
        kg.out_adj.append([])
        kg.in_adj.append([])
        feats = build_relational_features(kg)
        assert feats.vector(kg.entities.index["LONER"]).sum() == 0
        assert feats.norms[kg.entities.index["LONER"]] == 0.0

    def test_matches_brute_force_on_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            kg = random_kg(rng, n_entities=int(rng.integers(3, 25)),
                           n_relations=int(rng.integers(1, 6)),
                           n_triples=int(rng.integers(1, 60)))
            feats = build_relational_features(kg)
            assert np.array_equal(feats.dense(), brute_force_features(kg))

    def test_half_sums_split_head_tail(self, rng):
        kg = random_kg(rng, n_entities=20, n_relations=4, n_triples=50)
        feats = build_relational_features(kg)
        dense = feats.dense()
        n_r = kg.n_relations
        assert dense[:, :n_r].sum() == len(kg.train)
        assert dense[:, n_r:].sum() == len(kg.train)

    def test_cached_norms(self, rng):
        kg = random_kg(rng, n_entities=10, n_relations=3, n_triples=25)
        feats = build_relational_features(kg)
        for e in range(kg.n_entities):
            v = feats.vector(e).astype(float)
            assert feats.norms[e] == pytest.approx(np.sqrt(v @ v), rel=1e-12)


class TestReservedSelection:
    @pytest.mark.parametrize("n,expected", [(14505, 1450), (40559, 4055),
                                            (77951, 7795), (123143, 12314)])
    def test_ten_percent_floor(self, n, expected):
        assert select_reserved(n, 0.10, seed=1).size == expected

    def test_full_fraction_selects_everyone(self):
        res = select_reserved(17, 1.0, seed=0)
        assert res.size == 17
        assert np.array_equal(res.indices, np.arange(17))

    def test_zero_selection_rejected(self):
        with pytest.raises(ConfigError):
            select_reserved(5, 0.1, seed=0)

    def test_bad_fraction_rejected(self):
        with pytest.raises(ConfigError):
            select_reserved(10, 0.0, seed=0)
        with pytest.raises(ConfigError):
            select_reserved(10, 1.5, seed=0)

    def test_reproducible_and_sorted(self):
        a = select_reserved(1000, 0.1, seed=42)
        b = select_reserved(1000, 0.1, seed=42)
        c = select_reserved(1000, 0.1, seed=43)
        assert np.array_equal(a.indices, b.indices)
        assert not np.array_equal(a.indices, c.indices)
        assert np.all(np.diff(a.indices) > 0)
        assert a.mask.sum() == a.size
        assert np.array_equal(a.position[a.indices], np.arange(a.size))


class TestCosine:
    def test_spec_values(self):
        assert cosine_similarity([2, 0, 0, 1], [1, 0, 0, 0]) == pytest.approx(
            2 / np.sqrt(5), abs=1e-12)

    def test_identical_vectors(self):
        assert cosine_similarity([3, 1, 4], [3, 1, 4]) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_supports(self):
        assert cosine_similarity([1, 0], [0, 2]) == 0.0

    def test_zero_norm_defined_as_zero(self):
        assert cosine_similarity([0, 0], [1, 2]) == 0.0
        assert cosine_similarity([0, 0], [0, 0]) == 0.0

    def test_symmetry(self, rng):
        for _ in range(200):
            a = rng.integers(0, 5, size=8)
            b = rng.integers(0, 5, size=8)
            assert cosine_similarity(a, b) == pytest.approx(
                cosine_similarity(b, a), abs=1e-12)

    def test_range(self, rng):
        for _ in range(200):
            a = rng.integers(0, 6, size=6)
            b = rng.integers(0, 6, size=6)
            s = cosine_similarity(a, b)
            assert -1e-12 <= s <= 1.0 + 1e-12


def brute_force_topk(features, reserved, e, k):
    sims = []
    for ridx in reserved.indices:
        sims.append((int(ridx), cosine_similarity(features.vector(e), features.vector(ridx))))
    sims.sort(key=lambda p: (-p[1], p[0]))
    return sims[:min(k, len(sims))]


class TestTopK:
    def test_single_reserved(self, rng):
        kg = random_kg(rng, n_entities=8, n_relations=2, n_triples=15)
        feats = build_relational_features(kg)
        res = ReservedSet.from_indices([3], kg.n_entities)
        got = retrieve_topk(0, feats, res, k=1)
        assert len(got) == 1 and got[0][0] == 3

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            kg = random_kg(rng, n_entities=int(rng.integers(5, 30)),
                           n_relations=int(rng.integers(1, 5)),
                           n_triples=int(rng.integers(5, 70)))
            feats = build_relational_features(kg)
            n_res = int(rng.integers(1, kg.n_entities + 1))
            res = ReservedSet.from_indices(
                rng.choice(kg.n_entities, size=n_res, replace=False), kg.n_entities)
            k = int(rng.integers(1, 8))
            e = int(rng.integers(0, kg.n_entities))
            got = retrieve_topk(e, feats, res, k)
            want = brute_force_topk(feats, res, e, k)
            assert [g[0] for g in got] == [w[0] for w in want]
            assert np.allclose([g[1] for g in got], [w[1] for w in want], atol=1e-12)

    def test_zero_query_returns_index_order(self, rng):
        kg = KnowledgeGraph.from_triples([("A", "r", "B"), ("B", "r", "C")])
        kg.entities.add("Z")
        kg.out_adj.append([])
        kg.in_adj.append([])
        feats = build_relational_features(kg)
        res = ReservedSet.from_indices([0, 1, 2], kg.n_entities)
        got = retrieve_topk(kg.entities.index["Z"], feats, res, k=3)
        assert [g[0] for g in got] == [0, 1, 2]
        assert all(g[1] == 0.0 for g in got)

    def test_k_larger_than_reserved_truncates(self, rng):
        kg = random_kg(rng, n_entities=6, n_relations=2, n_triples=10)
        feats = build_relational_features(kg)
        res = ReservedSet.from_indices([1, 4], kg.n_entities)
        assert len(retrieve_topk(0, feats, res, k=10)) == 2

    def test_reserved_entity_may_retrieve_itself(self, rng):
        kg = random_kg(rng, n_entities=6, n_relations=2, n_triples=12)
        feats = build_relational_features(kg)
        res = ReservedSet.from_indices(list(range(6)), kg.n_entities)
        e = 2
        if feats.norms[e] > 0:
            got = retrieve_topk(e, feats, res, k=1)
            assert got[0] == (e, pytest.approx(1.0, abs=1e-12))


class TestKnnWeights:
    def test_single(self):
        assert knn_weights([0.37]).tolist() == [1.0]

    def test_symmetric_pair(self):
        assert np.allclose(knn_weights([0.5, 0.5]), [0.5, 0.5])

    def test_spec_softmax_value(self):
        w = knn_weights([1.0, 0.0])
        e = np.e
        assert np.allclose(w, [e / (e + 1), 1 / (e + 1)], atol=1e-4)
        assert w[0] == pytest.approx(0.7311, abs=1e-4)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            knn_weights([])

    @given(st.lists(st.floats(min_value=-1, max_value=1, allow_nan=False), min_size=1, max_size=20))
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one_and_positive(self, sims):
        w = knn_weights(sims)
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w > 0)

    @given(st.lists(st.floats(min_value=-1, max_value=1, allow_nan=False), min_size=2, max_size=12),
           st.randoms())
    @settings(max_examples=100, deadline=None)
    def test_permutation_equivariant(self, sims, pyrand):
        perm = list(range(len(sims)))
        pyrand.shuffle(perm)
        w = knn_weights(sims)
        w_perm = knn_weights([sims[i] for i in perm])
        assert np.allclose(w_perm, w[perm], atol=1e-12)


class TestKnnIndex:
    def _setup(self, seed=3, n_entities=25, n_relations=4, n_triples=70, frac=0.3, k=4):
        rng = np.random.default_rng(seed)
        kg = random_kg(rng, n_entities=n_entities, n_relations=n_relations,
                       n_triples=n_triples)
        feats = build_relational_features(kg)
        res = select_reserved(kg.n_entities, frac, seed=seed)
        return kg, feats, res, KnnIndex.build(feats, res, k)

    def test_rows_match_retrieve_topk(self):
        kg, feats, res, index = self._setup()
        for e in range(kg.n_entities):
            want = retrieve_topk(e, feats, res, index.k)
            got = index.neighbors(e)
            assert [g[0] for g in got] == [w[0] for w in want]

    def test_weight_matrix_rows_sum_to_one(self):
        kg, feats, res, index = self._setup()
        w = index.weight_matrix()
        assert w.shape == (kg.n_entities, res.size)
        assert np.allclose(np.asarray(w.sum(axis=1)).ravel(), 1.0, atol=1e-9)

    def test_cache_round_trip(self, tmp_path):
        kg, feats, res, index = self._setup()
        path = tmp_path / "knn.bin"
        index.save(path)
        loaded = KnnIndex.load(path, res)
        assert np.array_equal(loaded.neighbor_slots, index.neighbor_slots)
        assert np.array_equal(loaded.similarities,
                              index.similarities.astype(np.float32).astype(np.float64))
        assert loaded.n_relations == index.n_relations

    def test_cache_rejects_wrong_seed(self, tmp_path):
        kg, feats, res, index = self._setup()
        index.save(tmp_path / "knn.bin")
        other = select_reserved(kg.n_entities, 0.3, seed=99)
        with pytest.raises(DataError, match="seed"):
            KnnIndex.load(tmp_path / "knn.bin", other)

    def test_cache_rejects_garbage(self, tmp_path):
        path = tmp_path / "garbage.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        kg, feats, res, _ = self._setup()
        with pytest.raises(DataError, match="magic"):
            KnnIndex.load(path, res)

    def test_cache_rejects_truncation(self, tmp_path):
        kg, feats, res, index = self._setup()
        path = tmp_path / "knn.bin"
        index.save(path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 8])
        with pytest.raises(DataError, match="record count"):
            KnnIndex.load(path, res)

    def test_truncated_k(self):
        kg, feats, res, index = self._setup(k=4)
        smaller = index.truncated(2)
        assert smaller.k_effective == 2
        assert np.array_equal(smaller.neighbor_slots, index.neighbor_slots[:, :2])
        with pytest.raises(ConfigError):
            index.truncated(9)

    def test_empty_reserved_rejected(self):
        kg, feats, _, _ = self._setup()
        empty = ReservedSet.from_indices([], kg.n_entities)
        with pytest.raises(ConfigError):
            KnnIndex.build(feats, empty, 3)
