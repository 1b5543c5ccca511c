import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from proxydml.errors import ConfigError, UsageError
from proxydml.evaluation import cluster_quality, kmeans, nmi, recall_at_k

import oracles

label_lists = st.lists(st.integers(0, 4), min_size=2, max_size=40)


def blobs(rng, k=2, per=10, dim=2, sep=50.0):
    centers = rng.normal(size=(k, dim)) * sep
    labels = np.repeat(np.arange(k), per)
    return centers[labels] + rng.normal(size=(k * per, dim)), labels


class TestRecall:
    def test_separated_clusters(self):
        x, y = blobs(np.random.default_rng(0))
        assert recall_at_k(x, y, [1]).recall_at[1] == 1.0

    def test_singletons(self):
        x = np.random.default_rng(1).normal(size=(6, 2))
        r = recall_at_k(x, np.arange(6), [1, 2, 5])
        assert all(v == 0.0 for v in r.recall_at.values())

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.normal(size=(30, 3))
            y = rng.integers(0, 5, size=30)
            r = recall_at_k(x, y, [1, 2, 4, 8])
            for k in (1, 2, 4, 8):
                assert r.recall_at[k] == oracles.recall(x, y, k)

    def test_ties_broken_by_index(self):
        # point 0 sits midway between points 1 and 2; the lower index wins the tie
        x = np.array([[0.0], [-1.0], [1.0]])
        assert recall_at_k(x, [0, 1, 0], [1]).recall_at[1] == pytest.approx(1 / 3)
        assert recall_at_k(x, [0, 0, 1], [1]).recall_at[1] == pytest.approx(2 / 3)

    def test_k_bound(self):
        with pytest.raises(ConfigError):
            recall_at_k(np.zeros((4, 2)), [0, 0, 1, 1], [4])
        with pytest.raises(ConfigError):
            recall_at_k(np.zeros((1, 2)), [0], [1])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_in_k(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 25))
        r = recall_at_k(rng.normal(size=(n, 2)), rng.integers(0, 4, size=n), range(1, n))
        vals = [r.recall_at[k] for k in range(1, n)]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert vals == sorted(vals)


class TestKMeans:
    def test_k_equals_n(self):
        x = np.random.default_rng(3).normal(size=(7, 2))
        km = kmeans(x, 7)
        assert len(set(km.assignments.tolist())) == 7 and km.inertia == 0.0

    def test_single_cluster(self):
        x = np.random.default_rng(4).normal(size=(9, 3))
        km = kmeans(x, 1)
        assert np.allclose(km.centroids[0], x.mean(axis=0))

    def test_recovers_blobs(self):
        x, y = blobs(np.random.default_rng(5))
        assert nmi(kmeans(x, 2, seed=1).assignments, y) == 1.0

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            kmeans(np.zeros((3, 2)), 0)
        with pytest.raises(ConfigError):
            kmeans(np.zeros((3, 2)), 4)

    def test_duplicates(self):
        km = kmeans(np.zeros((5, 2)), 3)
        assert km.inertia == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_inertia_nonincreasing(self, seed, k):
        x = np.random.default_rng(seed).normal(size=(30, 2))
        h = kmeans(x, k, seed=seed).inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))

    def test_deterministic(self):
        x = np.random.default_rng(6).normal(size=(40, 3))
        a, b = kmeans(x, 4, seed=9), kmeans(x, 4, seed=9)
        assert np.array_equal(a.assignments, b.assignments) and a.inertia == b.inertia


class TestNMI:
    def test_identical(self):
        assert nmi([0, 0, 1, 2], [0, 0, 1, 2]) == 1.0

    def test_single_cluster_vs_balanced(self):
        assert nmi([0] * 6, [0, 0, 1, 1, 2, 2]) == 0.0

    def test_trivial_both(self):
        assert nmi([3, 3, 3], [1, 1, 1]) == 1.0

    def test_six_point_case(self):
        # Omega = {{0,1,2},{3,4,5}}, C = {{0,1},{2,3},{4,5}}
        a, c = [0, 0, 0, 1, 1, 1], [0, 0, 1, 1, 2, 2]
        # mutual information read off the contingency table [[2,1,0],[0,1,2]]
        mi = 2 * (2 / 6) * math.log((2 / 6) / (0.5 / 3)) + 2 * (1 / 6) * math.log((1 / 6) / (0.5 / 3))
        h_a, h_c = math.log(2), math.log(3)
        assert nmi(a, c) == pytest.approx(2 * mi / (h_a + h_c), abs=1e-12)
        assert nmi(a, c) == pytest.approx(oracles.nmi(a, c), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            nmi([0, 1], [0])

    @settings(max_examples=100, deadline=None)
    @given(label_lists, st.integers(0, 10_000))
    def test_oracles_symmetry_permutation(self, a, seed):
        rng = np.random.default_rng(seed)
        a = np.array(a)
        b = rng.integers(0, 3, size=a.size)
        v = nmi(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(oracles.nmi(a.tolist(), b.tolist()), abs=1e-9)
        if len(set(a.tolist())) > 1 or len(set(b.tolist())) > 1:
            assert v == pytest.approx(normalized_mutual_info_score(b, a, average_method="arithmetic"), abs=1e-9)
        assert nmi(b, a) == pytest.approx(v, abs=1e-12)
        perm = rng.permutation(10)
        assert nmi(perm[a], b) == pytest.approx(v, abs=1e-12)

    def test_cluster_quality_uses_class_count(self):
        x, y = blobs(np.random.default_rng(7), k=3)
        res = cluster_quality(x, y)
        assert len(set(res.assignments.tolist())) <= 3
        assert res.nmi == 1.0
