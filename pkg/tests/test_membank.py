import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lafite.membank import (
    CoreSet,
    EditConfig,
    MemoryBank,
    build_bank,
    edit_slice,
    edit_slices,
    edit_tensor,
    edit_weights,
    greedy_coreset,
    knn,
    knn_batch,
    load_coreset,
    query_cost_estimate,
    save_coreset,
)
from oracles import edit_reference, greedy_reference, knn_reference


def _bank(n, d, seed):
    return MemoryBank(np.random.default_rng(seed).normal(size=(n, d)).astype(np.float32))


class TestBank:
    def test_single_tensor(self):
        b = build_bank([np.zeros((2, 2, 3))])
        assert b.rows.shape == (4, 3)

    def test_two_tensors_sample_major(self):
        g = np.random.default_rng(0)
        ts = [g.normal(size=(3, 4, 2)).astype(np.float32) for _ in range(2)]
        b = build_bank(ts)
        assert b.n == 2 * 3 * 4
        np.testing.assert_array_equal(b.rows[12 + 5], ts[1][1, 1])

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            build_bank([np.zeros((2, 2, 3)), np.zeros((2, 2, 4))])


class TestGreedy:
    def test_keep_all(self):
        b = _bank(12, 3, 1)
        cs = greedy_coreset(b, 1.0)
        assert sorted(cs.indices.tolist()) == list(range(12))
        assert cs.indices.tolist() == greedy_reference(b.rows, 12)

    def test_one_dimensional(self):
        b = MemoryBank(np.array([[0.0], [1.0], [2.0], [10.0]], dtype=np.float32))
        cs = greedy_coreset(b, 0.5, 0)
        assert sorted(b.rows[cs.indices, 0].tolist()) == [0.0, 10.0]

    def test_matches_reference(self):
        g = np.random.default_rng(2)
        for trial in range(20):
            n = int(g.integers(2, 201))
            d = int(g.integers(1, 9))
            b = _bank(n, d, 100 + trial)
            r = float(g.uniform(0.05, 0.5))
            n_c = int(np.floor(n * r))
            if n_c == 0:
                continue
            assert greedy_coreset(b, r).indices.tolist() == greedy_reference(b.rows, n_c)

    def test_ties_go_to_lowest_index(self):
        b = MemoryBank(np.array([[0.0], [1.0], [-1.0], [1.0]], dtype=np.float32))
        assert greedy_coreset(b, 0.5).indices.tolist() == [0, 1]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(3, 80), st.integers(1, 6), st.integers(0, 10_000))
    def test_subset_and_greedy_property(self, n, d, seed):
        b = _bank(n, d, seed)
        cs = greedy_coreset(b, 0.5)
        np.testing.assert_array_equal(cs.rows, b.rows[cs.indices])
        assert len(set(cs.indices.tolist())) == len(cs.indices)
        X = b.rows.astype(np.float64)
        for i in range(1, cs.n):
            prior = X[cs.indices[:i]]
            mind = np.sqrt(((X[:, None, :] - prior[None]) ** 2).sum(-1)).min(axis=1)
            unchosen = np.setdiff1d(np.arange(n), cs.indices[: i + 1])
            if len(unchosen):
                assert mind[cs.indices[i]] >= mind[unchosen].max()

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            greedy_coreset(_bank(5, 2, 0), 0.1)
        with pytest.raises(ValueError):
            greedy_coreset(_bank(5, 2, 0), 1.5)


class TestKnn:
    def test_stored_row(self):
        b = _bank(20, 4, 3)
        cs = CoreSet(np.arange(20), b.rows)
        idx, d = knn(cs, b.rows[7], 1)[0]
        assert idx == 7 and d == 0.0

    def test_full_list(self):
        b = _bank(15, 3, 4)
        cs = CoreSet(np.arange(15), b.rows)
        q = np.random.default_rng(5).normal(size=3)
        res = knn(cs, q, 15)
        assert [i for i, _ in res] == [i for i, _ in knn_reference(b.rows, q, 15)]
        assert [d for _, d in res] == sorted(d for _, d in res)

    def test_matches_full_sort(self):
        g = np.random.default_rng(6)
        for trial in range(20):
            n, d, k = int(g.integers(5, 60)), int(g.integers(1, 33)), int(g.integers(1, 5))
            rows = g.normal(size=(n, d)).astype(np.float32)
            # duplicate rows force exact ties
            rows[n // 2] = rows[0]
            cs = CoreSet(np.arange(n), rows)
            q = g.normal(size=d).astype(np.float32)
            got = knn(cs, q, k)
            want = knn_reference(rows, q.astype(np.float64), k)
            assert [i for i, _ in got] == [i for i, _ in want]
            np.testing.assert_allclose([x for _, x in got], [x for _, x in want], rtol=1e-12)

    def test_partitioning_does_not_matter(self):
        g = np.random.default_rng(7)
        cs = CoreSet(np.arange(50), g.normal(size=(50, 8)).astype(np.float32))
        Q = g.normal(size=(30, 8)).astype(np.float32)
        idx, dist = knn_batch(cs, Q, 3)
        for parts in ([10, 20], [1] * 30, [7, 23]):
            edges = np.cumsum([0] + parts)
            for a, b in zip(edges[:-1], edges[1:]):
                i2, d2 = knn_batch(cs, Q[a:b], 3)
                np.testing.assert_array_equal(i2, idx[a:b])
                np.testing.assert_array_equal(d2, dist[a:b])

    def test_bad_k(self):
        cs = CoreSet(np.arange(3), np.zeros((3, 2), np.float32))
        with pytest.raises(ValueError):
            knn(cs, np.zeros(2), 4)


class TestEditing:
    def test_equidistant_neighbours(self):
        rows = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float32)
        cs = CoreSet(np.arange(3), rows)
        q = np.zeros(3, dtype=np.float32)
        np.testing.assert_allclose(edit_weights(np.ones(3), "verbatim"), [2 / 3] * 3)
        np.testing.assert_allclose(edit_weights(np.ones(3), "normalized"), [1 / 3] * 3)
        centroid = rows.mean(axis=0)
        np.testing.assert_allclose(edit_slice(q, cs, EditConfig(3, "verbatim")), 2 * centroid, rtol=1e-6)
        np.testing.assert_allclose(edit_slice(q, cs, EditConfig(3, "normalized")), centroid, rtol=1e-6)

    def test_stored_row_k1(self):
        rows = np.random.default_rng(8).normal(size=(10, 4)).astype(np.float32)
        cs = CoreSet(np.arange(10), rows)
        np.testing.assert_array_equal(edit_slice(rows[3], cs, EditConfig(1)), rows[3])

    @pytest.mark.parametrize("mode", ["verbatim", "normalized"])
    def test_formula_oracle(self, mode):
        g = np.random.default_rng(9)
        rows = g.normal(size=(10, 5)).astype(np.float32)
        cs = CoreSet(np.arange(10), rows)
        for _ in range(100):
            q = g.normal(size=5).astype(np.float32)
            got = edit_slice(q, cs, EditConfig(3, mode))
            want = edit_reference(q, rows, 3, mode)
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)

    @settings(max_examples=30)
    @given(st.integers(2, 6), st.integers(0, 1000))
    def test_normalized_is_convex(self, K, seed):
        g = np.random.default_rng(seed)
        d = g.uniform(0, 20, size=(4, K))
        w = edit_weights(d, "normalized")
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)

    def test_large_distances_are_stable(self):
        w = edit_weights(np.array([1000.0, 1001.0, 1500.0]), "normalized")
        assert np.isfinite(w).all()

    def test_tensor_identity_when_all_stored(self):
        x = np.random.default_rng(10).normal(size=(3, 3, 4)).astype(np.float32)
        cs = greedy_coreset(build_bank([x]), 1.0)
        np.testing.assert_array_equal(edit_tensor(x, cs, EditConfig(1)), x)

    def test_tensor_matches_slice_loop_and_permutation(self):
        g = np.random.default_rng(11)
        cs = CoreSet(np.arange(30), g.normal(size=(30, 4)).astype(np.float32))
        x = g.normal(size=(3, 5, 4)).astype(np.float32)
        cfg = EditConfig(3)
        out = edit_tensor(x, cs, cfg)
        for i in range(3):
            for j in range(5):
                np.testing.assert_array_equal(out[i, j], edit_slice(x[i, j], cs, cfg))
        perm = g.permutation(15)
        xp = x.reshape(15, 4)[perm].reshape(3, 5, 4)
        np.testing.assert_array_equal(edit_tensor(xp, cs, cfg).reshape(15, 4), out.reshape(15, 4)[perm])
        np.testing.assert_array_equal(edit_slices(x.reshape(15, 4), cs, cfg), out.reshape(15, 4))

    def test_batched_tensor(self):
        g = np.random.default_rng(12)
        cs = CoreSet(np.arange(30), g.normal(size=(30, 4)).astype(np.float32))
        xs = g.normal(size=(2, 3, 3, 4)).astype(np.float32)
        out = edit_tensor(xs, cs, EditConfig(2))
        np.testing.assert_array_equal(out[1], edit_tensor(xs[1], cs, EditConfig(2)))


class TestQueryCost:
    @pytest.mark.parametrize(
        "n_c, gflops", [(371609, 0.304), (90931, 0.074), (50000, 0.041)]
    )
    def test_reported_costs(self, n_c, gflops):
        assert query_cost_estimate(n_c, 272) / 1e9 == pytest.approx(gflops, rel=0.01)


def test_coreset_round_trip(tmp_path):
    cs = greedy_coreset(_bank(40, 3, 13), 0.25)
    save_coreset(cs, tmp_path)
    back = load_coreset(tmp_path)
    np.testing.assert_array_equal(back.indices, cs.indices)
    np.testing.assert_array_equal(back.rows, cs.rows)
