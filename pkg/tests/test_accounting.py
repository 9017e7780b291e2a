"""Latency recursion, energy, compute-cost, and battery tests.

Dispatch arrivals are checked against path-sum oracles, aggregation against a
brute-force longest leaf-to-root path, and the compute example against an
independently evaluated arithmetic oracle.
"""

import numpy as np
import pytest

from satfed.accounting import (
    BatteryState,
    ComputeParams,
    InfeasibleEdgeError,
    LatencyReport,
    aggregation_latency,
    battery_step,
    dispatch_latency,
    phase_energy,
    train_cost,
)
from satfed.graph import DirectedForest, path_to_root

BITS = 8e6

# Frozen oracle values: tau = 2*1360*100/2.3e9, E = 1e-27*(2.3e9)^3*tau
TRAIN_TAU = 1.182608695652174e-04
TRAIN_ENERGY = 0.00143888


def _forest(adj, roots, direction, clusters=None):
    return DirectedForest(
        adj=np.array(adj), roots=np.array(roots), direction=direction,
        clusters=None if clusters is None else np.array(clusters),
    )


def _random_tree(rng, n, direction):
    adj = np.zeros((n, n), dtype=int)
    for v in range(1, n):
        parent = int(rng.integers(0, v))
        if direction == "downward":
            adj[parent, v] = 1
        else:
            adj[v, parent] = 1
    roots = np.zeros(n, dtype=int)
    roots[0] = 1
    return DirectedForest(adj=adj, roots=roots, direction=direction)


class TestDispatchLatency:
    def test_chain(self):
        adj = [[0, 1, 0], [0, 0, 1], [0, 0, 0]]
        rates = np.zeros((3, 3))
        rates[0, 1] = BITS / 1.0
        rates[1, 2] = BITS / 2.0
        rep = dispatch_latency(_forest(adj, [1, 0, 0], "downward"), rates, BITS)
        np.testing.assert_allclose(rep.arrivals, [0.0, 1.0, 3.0], atol=1e-12)
        np.testing.assert_allclose(rep.total, 3.0)

    def test_star_total_is_max_hop(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[0, 1:] = 1
        rates = np.zeros((4, 4))
        for i, secs in zip(range(1, 4), (1.0, 2.0, 3.0)):
            rates[0, i] = BITS / secs
        rep = dispatch_latency(_forest(adj, [1, 0, 0, 0], "downward"), rates, BITS)
        np.testing.assert_allclose(rep.total, 3.0)

    def test_arrivals_match_path_sums(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            f = _random_tree(rng, 8, "downward")
            rates = np.where(f.adj, rng.uniform(1e6, 1e8, size=(8, 8)), 0.0)
            rep = dispatch_latency(f, rates, BITS)
            for node in range(8):
                path = path_to_root(f, node)
                want = sum(
                    BITS / rates[u, v] for v, u in zip(path[:-1], path[1:])
                )
                np.testing.assert_allclose(rep.arrivals[node], want, rtol=1e-12)

    def test_zero_rate_edge(self):
        adj = [[0, 1], [0, 0]]
        with pytest.raises(InfeasibleEdgeError):
            dispatch_latency(_forest(adj, [1, 0], "downward"), np.zeros((2, 2)), BITS)

    def test_direction_checked(self):
        adj = [[0, 1], [0, 0]]
        with pytest.raises(ValueError, match="downward"):
            dispatch_latency(_forest(adj, [1, 0], "upward"), np.ones((2, 2)), BITS)


class TestAggregationLatency:
    def test_two_leaves_max(self):
        adj = np.zeros((3, 3), dtype=int)
        adj[1, 0] = adj[2, 0] = 1
        rates = np.zeros((3, 3))
        rates[1, 0] = BITS / 1.0
        rates[2, 0] = BITS / 3.0
        rep = aggregation_latency(_forest(adj, [1, 0, 0], "upward"), rates, BITS)
        np.testing.assert_allclose(rep.arrivals[0], 3.0)
        np.testing.assert_allclose(rep.total, 3.0)

    def test_chain_matches_downward_sum(self):
        adj = np.zeros((3, 3), dtype=int)
        adj[2, 1] = adj[1, 0] = 1
        rates = np.zeros((3, 3))
        rates[2, 1] = BITS / 2.0
        rates[1, 0] = BITS / 1.0
        rep = aggregation_latency(_forest(adj, [1, 0, 0], "upward"), rates, BITS)
        np.testing.assert_allclose(rep.total, 3.0)

    def test_matches_longest_path_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            f = _random_tree(rng, 8, "upward")
            rates = np.where(f.adj, rng.uniform(1e6, 1e8, size=(8, 8)), 0.0)
            rep = aggregation_latency(f, rates, BITS)
            best = 0.0
            for node in range(8):
                path = path_to_root(f, node)
                cost = sum(
                    BITS / rates[u, v] for u, v in zip(path[:-1], path[1:])
                )
                best = max(best, cost)
            np.testing.assert_allclose(rep.total, best, rtol=1e-12)

    def test_forest_total_is_max_over_roots(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[1, 0] = 1
        adj[3, 2] = 1
        rates = np.zeros((4, 4))
        rates[1, 0] = BITS / 1.0
        rates[3, 2] = BITS / 5.0
        f = DirectedForest(
            adj=adj, roots=np.array([1, 0, 1, 0]), direction="upward",
            clusters=np.array([0, 0, 1, 1]),
        )
        rep = aggregation_latency(f, rates, BITS)
        np.testing.assert_allclose(rep.total, 5.0)


class TestPhaseEnergy:
    def test_no_edges_zero(self):
        f = _forest([[0]], [1], "downward")
        assert phase_energy(f, np.zeros((1, 1)), BITS, 1.0) == 0.0

    def test_single_edge(self):
        adj = [[0, 1], [0, 0]]
        rates = np.array([[0.0, 8e9], [0.0, 0.0]])
        e = phase_energy(_forest(adj, [1, 0], "downward"), rates, 8e6, 1.0)
        np.testing.assert_allclose(e, 1e-3, rtol=1e-12)

    def test_matches_per_edge_sum(self):
        rng = np.random.default_rng(11)
        f = _random_tree(rng, 6, "downward")
        rates = np.where(f.adj, rng.uniform(1e7, 1e9, size=(6, 6)), 0.0)
        powers = rng.uniform(0.5, 2.0, size=6)
        want = sum(BITS / rates[u, v] * powers[u] for u, v in f.edges())
        np.testing.assert_allclose(phase_energy(f, rates, BITS, powers), want,
                                   rtol=1e-12)

    def test_additive_over_clusters(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[0, 1] = 1
        adj[2, 3] = 1
        rates = np.zeros((4, 4))
        rates[0, 1] = 1e7
        rates[2, 3] = 2e7
        forest = DirectedForest(
            adj=adj, roots=np.array([1, 0, 1, 0]), direction="downward",
            clusters=np.array([0, 0, 1, 1]),
        )
        total = phase_energy(forest, rates, BITS, 1.0)
        first = BITS / 1e7
        second = BITS / 2e7
        np.testing.assert_allclose(total, first + second, rtol=1e-12)


class TestTrainCost:
    def test_reference_arithmetic(self):
        params = ComputeParams()
        tau, energy = train_cost(params, e_n=2, minibatch_size=100, f=2.3e9)
        np.testing.assert_allclose(tau, TRAIN_TAU, rtol=1e-12)
        np.testing.assert_allclose(energy, TRAIN_ENERGY, rtol=1e-12)

    def test_zero_steps_free(self):
        assert train_cost(ComputeParams(), 0, 100, 1e9) == (0.0, 0.0)

    def test_over_frequency_rejected(self):
        with pytest.raises(ValueError):
            train_cost(ComputeParams(), 1, 100, 2.4e9)


class TestBattery:
    def test_cap_holds(self):
        state = BatteryState(level_j=500.0, cap_j=500.0)
        new, ok = battery_step(state, harvest_j=10.0, tx_energy_j=0.0,
                               compute_energy_j=0.0)
        assert ok and new.level_j == 500.0

    def test_simple_arithmetic(self):
        state = BatteryState(level_j=10.0, cap_j=500.0)
        new, ok = battery_step(state, harvest_j=1.0, tx_energy_j=3.0,
                               compute_energy_j=1.0)
        assert ok
        np.testing.assert_allclose(new.level_j, 7.0)

    def test_infeasible_flagged(self):
        state = BatteryState(level_j=10.0, cap_j=500.0)
        new, ok = battery_step(state, harvest_j=1.0, tx_energy_j=12.0,
                               compute_energy_j=0.0)
        assert not ok
        assert new.level_j == 0.0

    def test_level_always_in_range(self):
        rng = np.random.default_rng(42)
        state = BatteryState(level_j=250.0, cap_j=500.0)
        for _ in range(200):
            harvest = float(rng.uniform(0, 30))
            tx = float(rng.uniform(0, 20))
            compute = float(rng.uniform(0, 20))
            new, ok = battery_step(state, harvest, tx, compute)
            assert 0.0 <= new.level_j <= new.cap_j
            if ok:
                state = new

    def test_invalid_state_rejected(self):
        with pytest.raises(ValueError):
            BatteryState(level_j=-1.0, cap_j=500.0)
