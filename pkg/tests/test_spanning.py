"""Spanning-forest construction: greedy vs exhaustive, budgets, stability."""

import itertools
import math

import numpy as np
import pytest

from satfed.clustering import VCPartition
from satfed.constellation import sat_distance, static_timeline, timeline_from_arrays
from satfed.graph import cbm_to_adjacency
from satfed.link import CandidateLink, default_link_params, terminal_rate
from satfed.spanning import (
    InfeasibilityError,
    brute_force_optimum,
    build_forest,
    edge_cost,
    solution_to_csv,
    stability_filter,
    verify_solution,
)

# chosen so that edge_cost(RATE_UNIT, BITS, 1, 1, 1) == 2e-3, mirroring the
# worked arithmetic example
BITS = 8e6
RATE_UNIT = 8e9


def single_cluster(n):
    return VCPartition(assignment=np.zeros(n, dtype=int), n_clusters=1)


def make_candidates(rates):
    """Symmetric candidate set from {(a, b): rate}; terminal ids assigned by
    the partner's rank among each satellite's neighbours, so any subset keeps
    terminal exclusivity automatically."""
    neighbours = {}
    for a, b in rates:
        neighbours.setdefault(a, set()).add(b)
        neighbours.setdefault(b, set()).add(a)
    term = {}
    for sat, peers in neighbours.items():
        for i, peer in enumerate(sorted(peers)):
            term[(sat, peer)] = i
    out = []
    for (a, b), r in sorted(rates.items()):
        out.append(CandidateLink(a, term[(a, b)], b, term[(b, a)], r))
        out.append(CandidateLink(b, term[(b, a)], a, term[(a, b)], r))
    return tuple(out)


# ---- edge_cost ---- #


def test_edge_cost_zero_weights():
    assert edge_cost(8e9, 8e6, 1.0, 0.0, 0.0) == 0.0


def test_edge_cost_arithmetic():
    # 8e6/8e9 = 1e-3 s; energy = 1e-3 J at 1 W; both weighted by 1
    assert edge_cost(8e9, 8e6, 1.0, 1.0, 1.0) == pytest.approx(2e-3, rel=1e-12)


def test_edge_cost_infeasible_sentinel():
    assert edge_cost(0.0, 8e6, 1.0, 1.0, 1.0) == math.inf
    assert edge_cost(-5.0, 8e6, 1.0, 1.0, 1.0) == math.inf
    assert edge_cost(math.inf, 8e6, 1.0, 1.0, 1.0) == math.inf


# ---- build_forest ---- #


def test_star_through_dominant_hub():
    # hub links are 1000x faster than rim links, so every spanning tree that
    # avoids the hub is dominated
    rates = {(0, j): RATE_UNIT for j in range(1, 5)}
    for a, b in itertools.combinations(range(1, 5), 2):
        rates[(a, b)] = RATE_UNIT / 1000.0
    sol = build_forest(
        make_candidates(rates), single_cluster(5), model_bits=BITS
    )
    expected = np.zeros((5, 5), dtype=int)
    expected[0, 1:] = 1
    assert np.array_equal(sol.forest.adj, expected)
    assert sol.depth == 1
    assert sol.objective == pytest.approx(4 * 2e-3, rel=1e-12)
    assert verify_solution(sol) == []


def test_chain_candidates_give_chain():
    rates = {(i, i + 1): RATE_UNIT for i in range(4)}
    sol = build_forest(
        make_candidates(rates), single_cluster(5), model_bits=BITS
    )
    # every root yields the same 4-edge objective; the tie-break keeps the
    # lowest index, so the tree is the full chain from node 0
    assert sol.forest.roots[0] == 1
    assert sol.depth == 4
    expected = np.zeros((5, 5), dtype=int)
    for i in range(4):
        expected[i, i + 1] = 1
    assert np.array_equal(sol.forest.adj, expected)
    assert verify_solution(sol) == []


def test_chain_upward_direction():
    rates = {(i, i + 1): RATE_UNIT for i in range(4)}
    sol = build_forest(
        make_candidates(rates), single_cluster(5), direction="upward",
        model_bits=BITS,
    )
    assert sol.forest.roots[0] == 1
    assert sol.depth == 4
    # upward adjacency points child -> parent
    expected = np.zeros((5, 5), dtype=int)
    for i in range(4):
        expected[i + 1, i] = 1
    assert np.array_equal(sol.forest.adj, expected)
    assert verify_solution(sol) == []


def test_disconnected_cluster_raises():
    rates = {(0, 1): RATE_UNIT}
    with pytest.raises(InfeasibilityError, match="cluster 0"):
        build_forest(make_candidates(rates), single_cluster(4), model_bits=BITS)


def test_terminal_conflict_repaired_by_rewiring():
    # the cheap wiring of 0->1 burns terminal (1, 0), which 1->2 needs; the
    # only spanning solution swaps in the expensive alternative wiring
    cands = (
        CandidateLink(0, 0, 1, 0, 16e6),   # cost 1
        CandidateLink(0, 1, 1, 1, 3.2e6),  # cost 5, different terminals
        CandidateLink(1, 0, 2, 0, 16e6),   # cost 1
    )
    sol = build_forest(cands, single_cluster(3), model_bits=BITS)
    assert sol.objective == pytest.approx(6.0, rel=1e-12)
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 1] = expected[1, 2] = 1
    assert np.array_equal(sol.forest.adj, expected)
    assert verify_solution(sol) == []
    exact = brute_force_optimum(cands, single_cluster(3), model_bits=BITS)
    assert exact.objective == pytest.approx(sol.objective, rel=1e-12)


def test_unsatisfiable_terminal_conflict():
    # both outgoing links of satellite 0 demand the same terminal
    cands = (
        CandidateLink(0, 0, 1, 0, 16e6),
        CandidateLink(0, 0, 2, 0, 16e6),
    )
    with pytest.raises(InfeasibilityError):
        build_forest(cands, single_cluster(3), model_bits=BITS)


def test_explicit_roots_respected():
    rates = {(i, j): RATE_UNIT for i, j in itertools.combinations(range(4), 2)}
    sol = build_forest(
        make_candidates(rates), single_cluster(4), roots={0: 2},
        model_bits=BITS,
    )
    assert sol.forest.roots[2] == 1
    assert sol.forest.roots.sum() == 1
    assert verify_solution(sol) == []


# ---- brute_force_optimum ---- #


def test_brute_force_single_feasible_tree():
    # directed candidates admit exactly one arborescence (root 0 chain)
    cands = (
        CandidateLink(0, 0, 1, 0, RATE_UNIT),
        CandidateLink(1, 1, 2, 0, RATE_UNIT),
    )
    sol = brute_force_optimum(cands, single_cluster(3), model_bits=BITS)
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 1] = expected[1, 2] = 1
    assert np.array_equal(sol.forest.adj, expected)
    assert sol.objective == pytest.approx(2 * 2e-3, rel=1e-12)


def test_brute_force_uniform_costs():
    # all edges cost the same, so any forest costs (N - C) * cost
    parts = VCPartition(
        assignment=np.array([0, 0, 0, 1, 1, 1]), n_clusters=2
    )
    rates = {}
    for grp in ((0, 1, 2), (3, 4, 5)):
        for a, b in itertools.combinations(grp, 2):
            rates[(a, b)] = RATE_UNIT
    sol = brute_force_optimum(make_candidates(rates), parts, model_bits=BITS)
    assert sol.objective == pytest.approx((6 - 2) * 2e-3, rel=1e-12)
    greedy = build_forest(make_candidates(rates), parts, model_bits=BITS)
    assert greedy.objective == pytest.approx(sol.objective, rel=1e-12)


def test_brute_force_size_guard():
    rates = {(i, j): RATE_UNIT for i, j in itertools.combinations(range(7), 2)}
    with pytest.raises(ValueError, match="exhaustive"):
        brute_force_optimum(make_candidates(rates), single_cluster(7))


def _independent_optimum(rates, n, costs):
    """From-scratch exhaustive search over parent assignments (downward)."""
    best = math.inf
    for root in range(n):
        others = [v for v in range(n) if v != root]
        parent_choices = [
            [u for u in range(n) if u != v and ((u, v) in rates or (v, u) in rates)]
            for v in others
        ]
        if any(not ch for ch in parent_choices):
            continue
        for parents in itertools.product(*parent_choices):
            parent_of = dict(zip(others, parents))
            # acyclic iff every node walks up to the root
            ok = True
            for v in others:
                seen, cur = set(), v
                while cur != root:
                    if cur in seen:
                        ok = False
                        break
                    seen.add(cur)
                    cur = parent_of[cur]
                if not ok:
                    break
            if not ok:
                continue
            total = sum(costs[(parent_of[v], v)] for v in others)
            best = min(best, total)
    return best


def test_brute_force_matches_independent_search():
    rng = np.random.default_rng(20260822)
    checked = 0
    while checked < 10:
        rates = {}
        for a, b in itertools.combinations(range(5), 2):
            if rng.random() < 0.75:
                rates[(a, b)] = float(10 ** rng.uniform(8.0, 10.5))
        cands = make_candidates(rates)
        try:
            sol = brute_force_optimum(cands, single_cluster(5), model_bits=BITS)
        except InfeasibilityError:
            continue
        costs = {}
        for (a, b), r in rates.items():
            c = edge_cost(r, BITS, 1.0, 1.0, 1.0)
            costs[(a, b)] = costs[(b, a)] = c
        expected = _independent_optimum(rates, 5, costs)
        assert sol.objective == pytest.approx(expected, rel=1e-12)
        checked += 1


def test_greedy_vs_exact_on_seeded_corpus():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 30:
        rates = {}
        for a, b in itertools.combinations(range(5), 2):
            if rng.random() < 0.7:
                rates[(a, b)] = float(10 ** rng.uniform(8.0, 10.5))
        cands = make_candidates(rates)
        direction = "downward" if checked % 2 == 0 else "upward"
        try:
            exact = brute_force_optimum(
                cands, single_cluster(5), direction, model_bits=BITS
            )
        except InfeasibilityError:
            continue
        greedy = build_forest(
            cands, single_cluster(5), direction=direction, model_bits=BITS
        )
        assert greedy.objective >= exact.objective - 1e-12
        assert greedy.objective <= 1.5 * exact.objective
        for sol in (greedy, exact):
            assert verify_solution(sol) == []
            assert np.array_equal(cbm_to_adjacency(sol.cbm), sol.forest.adj)
        checked += 1


def test_terminal_budget_across_forest():
    # 8 satellites in one cluster, complete candidate graph, 4 terminals each
    rng = np.random.default_rng(3)
    rates = {
        (a, b): float(10 ** rng.uniform(9.0, 10.0))
        for a, b in itertools.combinations(range(8), 2)
    }
    sol = build_forest(
        make_candidates(rates), single_cluster(8), terminals_per_sat=8,
        model_bits=BITS,
    )
    assert verify_solution(sol) == []
    per_sat = {}
    for n, _, n2, _ in sol.cbm.links:
        per_sat[n] = per_sat.get(n, 0) + 1
        per_sat[n2] = per_sat.get(n2, 0) + 1
    assert max(per_sat.values()) <= 8


# ---- stability_filter ---- #


def test_stability_static_always_ok():
    # three satellites ~120 km apart on the equator stay feasible forever
    step = 120.0 / 6871.0
    tl = static_timeline([(0.0, 0.0), (0.0, step), (0.0, 2 * step)], horizon=10)
    p = default_link_params()
    rates = {(0, 1): RATE_UNIT, (1, 2): RATE_UNIT}
    sol = build_forest(make_candidates(rates), single_cluster(3), model_bits=BITS)
    assert stability_filter(tl, p, sol, 0, 10) == []


def test_stability_reports_crossing():
    # satellite 1 drifts away from satellite 0 and crosses the feasibility
    # range mid-window; every second after the crossing is reported
    horizon = 20
    lat = np.zeros((2, horizon + 1))
    lon = np.zeros((2, horizon + 1))
    lon[1] = np.linspace(4000.0, 6000.0, horizon + 1) / 6871.0
    tl = timeline_from_arrays(lat, lon)
    p = default_link_params()
    sol = build_forest(
        (CandidateLink(0, 0, 1, 0, RATE_UNIT),
         CandidateLink(1, 0, 0, 0, RATE_UNIT)),
        single_cluster(2), model_bits=BITS,
    )
    broken = stability_filter(tl, p, sol, 0, horizon)
    assert broken, "expected the drifting link to break"
    ts = [t for t, _ in broken]
    assert all(link == (0, 1) for _, link in broken)
    # once broken it stays broken (monotone drift)
    assert ts == list(range(min(ts), horizon))
    # the crossing happens strictly inside the window
    assert 0 < min(ts) < horizon


def test_stability_matches_per_second_oracle():
    rng = np.random.default_rng(11)
    horizon = 15
    lat = rng.uniform(-0.5, 0.5, (3, horizon + 1))
    lon = np.cumsum(rng.uniform(0.0, 0.4, (3, horizon + 1)), axis=1)
    tl = timeline_from_arrays(lat, lon)
    p = default_link_params()
    rates = {(0, 1): RATE_UNIT, (1, 2): RATE_UNIT}
    sol = build_forest(make_candidates(rates), single_cluster(3), model_bits=BITS)
    broken = stability_filter(tl, p, sol, 2, 12)
    expected = []
    for t in range(2, 14):
        for n, _, n2, _ in sorted(sol.cbm.links):
            d = sat_distance(tl, n, n2, t)
            v_r = sat_distance(tl, n, n2, t + 1) - d if t + 1 <= horizon else 0.0
            if terminal_rate(p, d, v_r) < p.min_rate_bps:
                expected.append((t, (n, n2)))
    assert broken == expected


def test_stability_window_outside_horizon():
    tl = static_timeline([(0.0, 0.0), (0.0, 0.01)], horizon=5)
    p = default_link_params()
    sol = build_forest(
        make_candidates({(0, 1): RATE_UNIT}), single_cluster(2), model_bits=BITS
    )
    with pytest.raises(ValueError, match="window"):
        stability_filter(tl, p, sol, 3, 10)


# ---- export ---- #


def test_solution_csv_export(tmp_path):
    rates = {(0, 1): RATE_UNIT, (1, 2): RATE_UNIT}
    sol = build_forest(make_candidates(rates), single_cluster(3), model_bits=BITS)
    path = tmp_path / "edges.csv"
    solution_to_csv(sol, path, phase="global_dispatch", t=42)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "from_sat,from_term,to_sat,to_term,phase,t"
    assert len(lines) == 3
    assert all(line.endswith("global_dispatch,42") for line in lines[1:])
