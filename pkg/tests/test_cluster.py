import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nerdlab.cluster import agglomerative_cluster, kmeans, linkage_tree
from nerdlab.errors import InvalidArgumentError
from nerdlab.rng import RngStream

from oracles import kmeans_bruteforce, naive_average_linkage, same_partition


def _dist(P):
    return np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))


class TestKMeans:
    def test_k_equals_n(self, rng):
        X = rng.normal((6, 2))
        res = kmeans(X, 6, rng)
        assert res.inertia == pytest.approx(0.0, abs=1e-20)
        assert sorted(res.labels) == list(range(6))

    def test_k_one(self, rng):
        X = rng.normal((15, 3))
        res = kmeans(X, 1, rng)
        np.testing.assert_allclose(res.centroids[0], X.mean(axis=0), atol=1e-12)
        assert res.inertia == pytest.approx(((X - X.mean(0)) ** 2).sum(), rel=1e-12)

    def test_two_blobs_match_bruteforce(self):
        gen = np.random.default_rng(2)
        X = np.vstack([gen.normal(size=(4, 2)) * 0.1, gen.normal(size=(4, 2)) * 0.1 + 10])
        res = kmeans(X, 2, RngStream(0))
        assert same_partition(res.labels, [0] * 4 + [1] * 4)
        best_inertia, best_labels = kmeans_bruteforce(X, 2)
        assert res.inertia == pytest.approx(best_inertia, rel=1e-10)
        assert same_partition(res.labels, best_labels)

    def test_deterministic(self):
        X = np.random.default_rng(1).normal(size=(20, 2))
        a = kmeans(X, 3, RngStream(4))
        b = kmeans(X, 3, RngStream(4))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_bad_k(self, rng):
        with pytest.raises(InvalidArgumentError):
            kmeans(np.zeros((3, 2)), 4, rng)

    def test_duplicate_points(self, rng):
        res = kmeans(np.zeros((5, 2)), 3, rng)
        assert res.inertia == 0.0

    @settings(max_examples=40)
    @given(st.integers(3, 25), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_inertia_non_increasing(self, n, k, seed):
        if k > n:
            return
        X = np.random.default_rng(seed).normal(size=(n, 2))
        res = kmeans(X, k, RngStream(seed), n_restarts=1)
        h = np.array(res.inertia_history)
        assert np.all(np.diff(h) <= 1e-9 * max(1.0, h.max(initial=0)))


class TestAgglomerative:
    def test_k_equals_n(self):
        D = _dist(np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_array_equal(agglomerative_cluster(D, 5), np.arange(5))

    def test_two_groups(self):
        P = np.array([[0, 0], [0.1, 0], [0, 0.1], [50, 50], [50.1, 50]])
        labels = agglomerative_cluster(_dist(P), 2)
        assert same_partition(labels, [0, 0, 0, 1, 1])

    @pytest.mark.parametrize("seed", range(10))
    def test_naive_replay_oracle(self, seed):
        D = _dist(np.random.default_rng(seed).normal(size=(6, 3)))
        np.testing.assert_array_equal(agglomerative_cluster(D, 3, "average"), naive_average_linkage(D, 3))

    def test_linkage_tree_shape(self):
        D = _dist(np.random.default_rng(3).normal(size=(7, 2)))
        merges = linkage_tree(D)
        assert len(merges) == 6
        heights = [m[2] for m in merges]
        assert heights == sorted(heights)  # average linkage is monotone
        assert merges[-1][3] == 7

    def test_ward_falls_back(self):
        D = _dist(np.random.default_rng(3).normal(size=(5, 2)))
        with pytest.warns(UserWarning):
            labels = agglomerative_cluster(D, 2, "ward")
        np.testing.assert_array_equal(labels, agglomerative_cluster(D, 2, "average"))

    def test_unknown_linkage(self):
        with pytest.raises(InvalidArgumentError):
            agglomerative_cluster(np.zeros((3, 3)), 2, "centroid")
