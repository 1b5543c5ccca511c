import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxydml import bounds
from proxydml.errors import ConfigError, DegenerateInputError

import helpers
import oracles


def unit_rows(rng, n, dim):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestNormalizeConfig:
    def test_unit_inputs(self):
        rng = np.random.default_rng(0)
        cfg = bounds.normalize_config(unit_rows(rng, 5, 3), unit_rows(rng, 2, 3))
        assert cfg.N_x == pytest.approx(1.0) and cfg.N_p == pytest.approx(1.0)
        assert cfg.alpha == pytest.approx(1.0)

    def test_alpha_from_norms(self):
        rng = np.random.default_rng(1)
        cfg = bounds.normalize_config(4 * unit_rows(rng, 5, 3), 2 * unit_rows(rng, 3, 3))
        assert cfg.alpha == pytest.approx(1 / 8, rel=1e-12)
        assert cfg.constant_norms()

    def test_norm_stats(self):
        rng = np.random.default_rng(2)
        x, p = rng.normal(size=(10, 4)), rng.normal(size=(3, 4))
        stats = bounds.normalize_config(x, p).norm_stats()
        nx = [math.sqrt(sum(v * v for v in row)) for row in x]
        assert stats["embedding"][0] == pytest.approx(np.mean(nx), rel=1e-12)
        assert stats["embedding"][1] == pytest.approx(np.std(nx), rel=1e-9)

    def test_unit_vectors_and_idempotence(self):
        rng = np.random.default_rng(3)
        cfg = bounds.normalize_config(rng.normal(size=(6, 3)) * 5, rng.normal(size=(2, 3)))
        assert np.all(np.abs(np.linalg.norm(cfg.unit_embeddings, axis=1) - 1) <= 1e-12)
        again = bounds.normalize_config(cfg.unit_embeddings, cfg.unit_proxies)
        # identical up to the last bit of rounding
        np.testing.assert_allclose(again.unit_embeddings, cfg.unit_embeddings, rtol=0, atol=1e-15)
        assert again.N_x == pytest.approx(1.0, abs=1e-12) and again.N_p == pytest.approx(1.0, abs=1e-12)

    def test_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            bounds.normalize_config(np.array([[0.0, 0.0], [1.0, 0.0]]), np.eye(2))


class TestOrdinal:
    def test_perfect_proxies(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 2))
        t = bounds.enumerate_triplets([0, 0, 1, 1, 2, 2])
        r = bounds.verify_ordinal_preservation(x, x, t, assign=np.arange(6))
        assert r.violations == 0 and r.epsilon_used == 0.0
        assert r.max_slack == pytest.approx(0.0, abs=1e-12)

    def test_hand_built_1d(self):
        x = np.array([[0.0], [1.0], [3.0]])
        p = np.array([[1.5], [3.5]])
        r = bounds.verify_ordinal_preservation(x, p, [[0, 1, 2]], assign=[0, 0, 1])
        # eps = max(1.5, 0.5, 0.5); gap = |(1 - 3) - (1.5 - 3.5)| = 0
        assert r.epsilon_used == 1.5
        assert r.max_slack == pytest.approx(3.0)
        assert r.details["order_checked"] == 0  # |1.5 - 3.5| = 2 < 2 eps

    def test_monte_carlo(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            c = helpers.free_config(rng)
            t = bounds.enumerate_triplets(c.labels)
            r = bounds.verify_ordinal_preservation(c.embeddings, c.proxies, t, c.assign)
            assert r.violations == 0 and r.max_slack >= -1e-9

    def test_squared_distances_would_fail(self):
        # the same display with squared distances breaks: the check needs a metric
        x = np.array([[0.0], [1.0], [10.0]])
        p = np.array([[1.5], [10.5]])
        eps_sq = 1.5 ** 2
        gap_sq = abs((1 - 100) - (1.5 ** 2 - 10.5 ** 2))
        assert gap_sq > 2 * eps_sq  # 9 > 4.5
        assert bounds.verify_ordinal_preservation(x, p, [[0, 1, 2]], assign=[0, 0, 1]).violations == 0


class TestRankingExpectation:
    def test_zero_epsilon(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(6, 2))
        t = bounds.enumerate_triplets([0, 0, 1, 1, 2, 2])
        r = bounds.verify_ranking_expectation_bound(x, x, t, assign=np.arange(6))
        assert r.details["prob_within_2eps"] == 0.0
        assert r.details["expected_ranking_loss"] == r.details["expected_proxy_ranking_loss"]

    def test_exhaustive_single_proxy_pair(self):
        x = np.array([[0.0], [0.4], [1.0], [1.3]])
        p = np.array([[0.2], [1.1]])
        labels = [0, 0, 1, 1]
        t = bounds.enumerate_triplets(labels)
        assign = np.array([0, 0, 1, 1])
        r = bounds.verify_ranking_expectation_bound(x, p, t, assign)
        eps = max(abs(x[i, 0] - p[assign[i], 0]) for i in range(4))
        lhs = np.mean([abs(x[a, 0] - x[y, 0]) > abs(x[a, 0] - x[z, 0]) for a, y, z in t])
        rank_p = np.mean([abs(x[a, 0] - p[assign[y], 0]) > abs(x[a, 0] - p[assign[z], 0]) for a, y, z in t])
        close = np.mean([abs(abs(x[a, 0] - p[assign[y], 0]) - abs(x[a, 0] - p[assign[z], 0])) <= 2 * eps
                         for a, y, z in t])
        assert r.details["expected_ranking_loss"] == pytest.approx(lhs)
        assert r.details["expected_proxy_ranking_loss"] == pytest.approx(rank_p)
        assert r.details["prob_within_2eps"] == pytest.approx(close)
        assert r.details["expectation_holds"] and r.violations == 0

    def test_monte_carlo(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            c = helpers.free_config(rng)
            t = bounds.enumerate_triplets(c.labels)
            r = bounds.verify_ranking_expectation_bound(c.embeddings, c.proxies, t, c.assign)
            assert r.violations == 0 and r.details["expectation_holds"]


class TestNCABound:
    def test_degenerate_equality(self):
        rng = np.random.default_rng(8)
        x = unit_rows(rng, 6, 3)
        a, y, z = [0, 2, 4], [1, 3, 5], [[2], [4], [0]]
        r = bounds.verify_nca_bound(x, x, a, y, z, assign=np.arange(6))
        assert r.epsilon_used == 0.0 and r.alpha_used == pytest.approx(1.0)
        assert r.violations == 0
        assert r.max_slack == pytest.approx(0.0, abs=1e-12)

    def test_hand_built_single_negative(self):
        # N_x = 2, N_p = 1, points in the plane
        def unit(deg):
            return np.array([math.cos(math.radians(deg)), math.sin(math.radians(deg))])

        x = 2 * np.array([unit(0), unit(20), unit(100)])
        p = np.array([unit(10), unit(95)])
        assign = np.array([0, 0, 1])
        r = bounds.verify_nca_bound(x, p, [0], [1], [[2]], assign)
        ux = x / 2
        eps = max(oracles.sqdist(ux[i], p[assign[i]]) for i in range(3))
        s, alpha = 0.5, 0.5
        # with one negative the NCA loss is d(x, y) - d(x, z)
        lhs = s * oracles.sqdist(ux[0], ux[1]) - s * oracles.sqdist(ux[0], ux[2])
        rhs = alpha * (s * oracles.sqdist(x[0], p[0]) - s * oracles.sqdist(x[0], p[1])) + 2 * math.sqrt(2 * eps)
        assert r.epsilon_used == pytest.approx(eps, rel=1e-12)
        assert r.max_slack == pytest.approx(rhs - lhs, rel=1e-12)
        assert r.details["tight_max_slack"] == pytest.approx(rhs - lhs - 2 * math.sqrt(2 * eps) + 2 * math.sqrt(eps))

    def test_precondition_failures_are_not_violations(self):
        rng = np.random.default_rng(9)
        c = helpers.free_config(rng)
        a, y, z = bounds.sample_labeled_triplets(rng, c.labels, 20, 1)
        r = bounds.verify_nca_bound(c.embeddings, c.proxies, a, y, z, c.assign)
        assert r.violations == 0 and r.precondition_failures == 20 and r.samples_checked == 0
        assert not r.details["preconditions"]["constant_norms"]

    def test_alpha_above_one_is_a_precondition_failure(self):
        rng = np.random.default_rng(10)
        c = bounds.random_constant_norm_config(rng, norm_x=0.5, norm_p=0.5)
        a, y, z = bounds.sample_labeled_triplets(rng, c.labels, 5, 1)
        r = bounds.verify_nca_bound(c.embeddings, c.proxies, a, y, z, c.assign)
        assert r.precondition_failures == 5 and not r.details["preconditions"]["alpha_le_one"]

    def test_monte_carlo(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            c = helpers.constant_norm_config(rng)
            m = int(rng.integers(1, 3))
            a, y, z = bounds.sample_labeled_triplets(rng, c.labels, 8, m)
            r = bounds.verify_nca_bound(c.embeddings, c.proxies, a, y, z, c.assign)
            assert r.precondition_failures == 0
            assert r.violations == 0 and r.max_slack >= -1e-9

    def test_full_squared_distance_breaks_the_constant(self):
        # with d = |a - b|^2 (scale 1) the stated constant is not enough
        rng = np.random.default_rng(335)
        c = helpers.constant_norm_config(rng)
        a, y, z = bounds.sample_labeled_triplets(rng, c.labels, 8, 1)
        assert bounds.verify_nca_bound(c.embeddings, c.proxies, a, y, z, c.assign, distance_scale=1.0).violations > 0
        assert bounds.verify_nca_bound(c.embeddings, c.proxies, a, y, z, c.assign).violations == 0


class TestTripletBound:
    def test_degenerate_equality(self):
        rng = np.random.default_rng(12)
        x = unit_rows(rng, 6, 3)
        t = bounds.enumerate_triplets([0, 0, 1, 1, 2, 2])
        r = bounds.verify_triplet_bound(x, x, t, 0.7, assign=np.arange(6))
        assert r.violations == 0 and r.max_slack == pytest.approx(0.0, abs=1e-12)

    def test_hand_built_1d(self):
        # points at +-2, proxies at +-1: unit vectors coincide with unit proxies
        x = np.array([[2.0], [2.0], [-2.0]])
        p = np.array([[1.0], [-1.0]])
        r = bounds.verify_triplet_bound(x, p, [[0, 1, 2]], margin=1.0, assign=[0, 0, 1])
        # unit: d(x,y) = 0, d(x,z) = 4 -> hinge(0.5*0 + 1 - 0.5*4) = 0
        # proxies: d(x,p_y) = 1, d(x,p_z) = 9 -> hinge(0.5 - 4.5 + 1) = 0; alpha = 1/2, eps = 0
        assert r.epsilon_used == 0.0
        assert r.max_slack == pytest.approx(0.5)

    def test_monte_carlo(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            c = helpers.constant_norm_config(rng)
            t = bounds.enumerate_triplets(c.labels)
            r = bounds.verify_triplet_bound(c.embeddings, c.proxies, t, float(rng.uniform(0, 2)), c.assign)
            assert r.violations == 0 and r.max_slack >= -1e-9

    def test_full_squared_distance_breaks_the_constant(self):
        rng = np.random.default_rng(18)
        c = helpers.constant_norm_config(rng)
        a, y, z = bounds.sample_labeled_triplets(rng, c.labels, 8, 1)
        t = np.column_stack([a, y, z[:, 0]])
        assert bounds.verify_triplet_bound(c.embeddings, c.proxies, t, 0.5, c.assign, distance_scale=1.0).violations
        assert bounds.verify_triplet_bound(c.embeddings, c.proxies, t, 0.5, c.assign).violations == 0


class TestTotalLoss:
    def test_enumeration_matches_oracle_count(self):
        labels = [0, 0, 1, 1, 1, 2]
        assert len(bounds.enumerate_triplets(labels)) == oracles.count_triplets(labels)

    def test_single_triplet_reduces_to_per_triplet_bound(self):
        x = 2 * np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]])
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = np.array([0, 0, 1])
        total = bounds.verify_total_loss_bound(x, labels, p, assign=labels, margin=1.0)
        per = bounds.verify_triplet_bound(x, p, bounds.enumerate_triplets(labels), 1.0, assign=labels)
        # two symmetric anchors in class 0, both share the proxy pair
        assert total.details["num_groups"] == 2
        assert total.max_slack >= per.max_slack - 1e-12

    def test_grouping_matches_ungrouped(self):
        rng = np.random.default_rng(14)
        c = bounds.random_constant_norm_config(rng, num_classes=2, per_class=2, dim=2)
        r = bounds.verify_total_loss_bound(c.embeddings, c.labels, c.proxies, c.assign)
        assert r.details["population"] == 8
        assert r.details["rhs"] == pytest.approx(r.details["rhs_ungrouped"], rel=1e-12)
        assert r.violations == 0

    def test_zero_epsilon_slack(self):
        rng = np.random.default_rng(15)
        dirs = unit_rows(rng, 3, 3)
        labels = np.array([0, 0, 1, 1, 2, 2])
        x, p = 2.0 * dirs[labels], 1.0 * dirs
        r = bounds.verify_total_loss_bound(x, labels, p, assign=labels, margin=1.0)
        t = bounds.enumerate_triplets(labels)
        s, alpha = 0.5, 0.5
        lhs = np.mean([max(0.0, s * oracles.sqdist(dirs[labels[a]], dirs[labels[y]])
                           - s * oracles.sqdist(dirs[labels[a]], dirs[labels[z]]) + 1.0) for a, y, z in t])
        prox = np.mean([max(0.0, s * oracles.sqdist(x[a], p[labels[y]])
                            - s * oracles.sqdist(x[a], p[labels[z]]) + 1.0) for a, y, z in t])
        assert r.epsilon_used == 0.0
        assert r.max_slack == pytest.approx(alpha * prox + (1 - alpha) * 1.0 - lhs, rel=1e-12)

    def test_nca_variant(self):
        rng = np.random.default_rng(16)
        c = helpers.constant_norm_config(rng)
        r = bounds.verify_total_loss_bound(c.embeddings, c.labels, c.proxies, c.assign, loss="nca")
        assert r.violations == 0
        with pytest.raises(ConfigError):
            bounds.verify_total_loss_bound(c.embeddings, c.labels, c.proxies, c.assign, loss="hinge")

    def test_population_too_large(self):
        rng = np.random.default_rng(17)
        c = bounds.random_constant_norm_config(rng, num_classes=3, per_class=4)
        with pytest.raises(ConfigError):
            bounds.verify_total_loss_bound(c.embeddings, c.labels, c.proxies, c.assign, max_triplets=10)
        r = bounds.verify_total_loss_bound(c.embeddings, c.labels, c.proxies, c.assign, max_triplets=10,
                                           sample=200)
        assert r.details["estimated"] and r.violations == 0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 100_000))
    def test_monte_carlo(self, seed):
        rng = np.random.default_rng(seed)
        c = helpers.constant_norm_config(rng)
        r = bounds.verify_total_loss_bound(c.embeddings, c.labels, c.proxies, c.assign,
                                           margin=float(rng.uniform(0, 2)))
        assert r.violations == 0 and r.max_slack >= -1e-9


class TestReport:
    def test_json_round_trip(self):
        rng = np.random.default_rng(19)
        c = helpers.constant_norm_config(rng)
        r = bounds.verify_triplet_bound(c.embeddings, c.proxies, bounds.enumerate_triplets(c.labels), 1.0, c.assign)
        d = json.loads(r.to_json())
        assert d["bound_name"] == "triplet" and d["violations"] <= d["samples_checked"]
        assert math.isfinite(d["max_slack"]) and math.isfinite(d["mean_slack"])
