"""Partition validation and heterogeneity-statistics tests.

Dispersion ratios are checked against directly computed ratios, and the
cross-cluster dissimilarity bound against a sampled spread oracle.
"""

import itertools
import math

import numpy as np
import pytest

from satfed.clustering import (
    DegenerateGradientError,
    VCPartition,
    cluster_heuristic,
    partition_from_csv,
    partition_objective,
    partition_to_csv,
    sampled_zeta_glob2,
    validate_partition,
    weights_from_sizes,
    zeta_glob2_bound,
    zeta_loc_min,
)
from satfed.constellation import static_timeline


class TestValidatePartition:
    def test_valid_two_pairs(self):
        p = VCPartition(assignment=[0, 0, 1, 1], n_clusters=2)
        assert validate_partition(p, 4) == []

    def test_singleton_cluster(self):
        p = VCPartition(assignment=[0, 0, 0, 1], n_clusters=2)
        out = validate_partition(p, 4)
        assert any("minimum is 2" in v for v in out)

    def test_unassigned_satellite(self):
        p = VCPartition(assignment=[0, 0, -1, 1, 1], n_clusters=2)
        out = validate_partition(p, 5)
        assert any("unassigned" in v for v in out)

    def test_wrong_length(self):
        p = VCPartition(assignment=[0, 0], n_clusters=1)
        assert validate_partition(p, 4) != []


class TestZetaLocMin:
    def test_identical_gradients_give_one(self):
        g = np.tile(np.array([1.0, 2.0, 3.0]), (5, 4, 1))
        np.testing.assert_allclose(zeta_loc_min(g, np.full(4, 0.25)), 1.0, rtol=1e-12)

    def test_orthogonal_equal_norm_gives_two(self):
        g = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        np.testing.assert_allclose(zeta_loc_min(g, [0.5, 0.5]), 2.0, rtol=1e-12)

    def test_matches_direct_ratio_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            g = rng.normal(size=(6, 3, 4))
            a = rng.random(3)
            a /= a.sum()
            want = -np.inf
            for p in range(6):
                num = sum(a[i] * g[p, i] @ g[p, i] for i in range(3))
                mean = sum(a[i] * g[p, i] for i in range(3))
                want = max(want, num / (mean @ mean))
            np.testing.assert_allclose(zeta_loc_min(g, a), want, rtol=1e-12)

    def test_always_at_least_one(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            members = int(rng.integers(2, 6))
            g = rng.normal(size=(4, members, 5))
            a = rng.random(members)
            a /= a.sum()
            assert zeta_loc_min(g, a) >= 1.0 - 1e-12

    def test_degenerate_mean_raises(self):
        g = np.array([[[1.0, 0.0], [-1.0, 0.0]]])
        with pytest.raises(DegenerateGradientError):
            zeta_loc_min(g, [0.5, 0.5])

    def test_bad_weights_rejected(self):
        g = np.ones((1, 2, 2))
        with pytest.raises(ValueError):
            zeta_loc_min(g, [0.7, 0.7])


class TestZetaGlob2Bound:
    def _uniform_weights(self, partition):
        sizes = np.ones(partition.n_sats)
        return weights_from_sizes(partition, sizes)

    def test_homogeneous_gradients_bound_zero(self):
        p = VCPartition(assignment=[0, 0, 1, 1], n_clusters=2)
        g = np.tile(np.array([1.0, -2.0]), (3, 4, 1))
        a, b = self._uniform_weights(p)
        stats = zeta_glob2_bound(p, g, a, b)
        np.testing.assert_allclose(stats.zeta_glob2_lb, 0.0, atol=1e-12)

    def test_single_cluster_bound_zero(self):
        p = VCPartition(assignment=[0, 0, 0, 0], n_clusters=1)
        rng = np.random.default_rng(3)
        g = rng.normal(size=(8, 4, 3))
        a, b = self._uniform_weights(p)
        stats = zeta_glob2_bound(p, g, a, b)
        np.testing.assert_allclose(stats.zeta_glob2_lb, 0.0, atol=1e-9)

    def test_bound_below_sampled_dissimilarity(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n, c = 8, int(rng.integers(2, 5))
            assignment = np.concatenate(
                [np.arange(c), rng.integers(0, c, size=n - c)]
            )
            rng.shuffle(assignment)
            p = VCPartition(assignment=assignment, n_clusters=c)
            if validate_partition(p, n):
                continue
            g = rng.normal(size=(6, n, 4)) + rng.normal(size=(1, n, 1))
            a, b = self._uniform_weights(p)
            stats = zeta_glob2_bound(p, g, a, b)
            assert stats.zeta_glob2_lb <= sampled_zeta_glob2(p, g, a, b) + 1e-9

    def test_weights_from_sizes(self):
        p = VCPartition(assignment=[0, 0, 1, 1, 1], n_clusters=2)
        a, b = weights_from_sizes(p, [10, 30, 20, 20, 20])
        np.testing.assert_allclose(a, [0.25, 0.75, 1 / 3, 1 / 3, 1 / 3])
        np.testing.assert_allclose(b, [0.4, 0.6])


class TestClusterHeuristic:
    def test_single_cluster(self):
        tl = static_timeline([(0.0, 0.1 * i) for i in range(5)], horizon=2)
        p = cluster_heuristic(tl, 0, None, 1)
        assert p.n_clusters == 1
        assert validate_partition(p, 5) == []

    def test_recovers_tight_geographic_groups(self):
        positions = [(0.0, 0.00), (0.0, 0.01), (0.0, 0.02),
                     (0.0, 2.00), (0.0, 2.01), (0.0, 2.02)]
        tl = static_timeline(positions, horizon=2)
        p = cluster_heuristic(tl, 0, None, 2)
        assert validate_partition(p, 6) == []
        groups = {tuple(sorted(p.members(c))) for c in range(2)}
        assert groups == {(0, 1, 2), (3, 4, 5)}

    def test_within_ten_percent_of_exhaustive(self):
        rng = np.random.default_rng(42)
        positions = [(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-1, 1)))
                     for _ in range(6)]
        tl = static_timeline(positions, horizon=2)
        heur = cluster_heuristic(tl, 0, None, 3)
        heur_val = partition_objective(tl, 0, heur)

        def pairings(items):
            if not items:
                yield []
                return
            first = items[0]
            for i in range(1, len(items)):
                rest = items[1:i] + items[i + 1:]
                for sub in pairings(rest):
                    yield [(first, items[i])] + sub

        best = math.inf
        count = 0
        for pairs in pairings(list(range(6))):
            assignment = np.zeros(6, dtype=int)
            for cid, (a, b) in enumerate(pairs):
                assignment[a] = assignment[b] = cid
            cand = VCPartition(assignment=assignment, n_clusters=3)
            best = min(best, partition_objective(tl, 0, cand))
            count += 1
        assert count == 15
        assert heur_val <= 1.10 * best + 1e-12

    def test_infeasible_target_rejected(self):
        tl = static_timeline([(0.0, 0.0), (0.0, 0.1), (0.0, 0.2)], horizon=2)
        with pytest.raises(ValueError):
            cluster_heuristic(tl, 0, None, 2)


class TestPartitionCSV:
    def test_round_trip(self, tmp_path):
        p = VCPartition(assignment=[1, 0, 0, 1, 1], n_clusters=2)
        f = tmp_path / "partition.csv"
        partition_to_csv(p, f)
        q = partition_from_csv(f)
        np.testing.assert_array_equal(p.assignment, q.assignment)
        assert q.n_clusters == 2
