"""Multi-objective directed spanning trees and forests over link candidates.

Given the feasible terminal-pair candidates at an instant, build one rooted
arborescence per cluster minimizing an edge-separable cost (weighted transfer
latency plus transmit energy), while spending each satellite's laser
terminals at most once and each satellite pair at most once across the whole
forest. A constrained greedy with a single-swap repair pass does the work;
an exhaustive oracle covers small clusters.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .clustering import VCPartition
from .constellation import ConstellationTimeline, sat_distance
from .graph import DirectedForest, enumerate_arborescences, path_to_root, validate_tree
from .link import CBM, CandidateLink, LinkBudgetParams, terminal_rate

MAX_AUTO_ROOT_NODES = 32
MAX_BRUTE_CLUSTER = 6


class InfeasibilityError(ValueError):
    """A cluster cannot be spanned by the available candidates."""


def edge_cost(
    rate_bps: float,
    model_bits: float,
    tx_power_w: float,
    alpha2: float,
    alpha3: float,
) -> float:
    """Weighted cost of one transfer: alpha2 * seconds + alpha3 * joules.
    Infeasible links (no positive finite rate) cost +inf."""
    if not rate_bps or rate_bps <= 0 or math.isinf(rate_bps):
        return math.inf
    seconds = model_bits / rate_bps
    return alpha2 * seconds + alpha3 * seconds * tx_power_w


@dataclass(frozen=True, eq=False)
class SpanningSolution:
    """A realized forest: adjacency, the CBM wiring it, the edge-sum
    objective, and the deepest root-to-leaf hop count."""

    forest: DirectedForest
    cbm: CBM
    objective: float
    depth: int


def _tx_power(tx_power_w, sat: int) -> float:
    arr = np.asarray(tx_power_w, dtype=float)
    return float(arr) if arr.ndim == 0 else float(arr[sat])


def _candidate_cost(
    c: CandidateLink, model_bits: float, tx_power_w, alpha2: float, alpha3: float
) -> float:
    return edge_cost(c.rate_bps, model_bits, _tx_power(tx_power_w, c.sat_a),
                     alpha2, alpha3)


class _Budget:
    """Terminal and pair bookkeeping shared across the forest."""

    def __init__(self):
        self.terminals: set[tuple[int, int]] = set()
        self.pairs: set[tuple[int, int]] = set()

    def admissible(self, c: CandidateLink) -> bool:
        pair = (min(c.sat_a, c.sat_b), max(c.sat_a, c.sat_b))
        return (
            pair not in self.pairs
            and (c.sat_a, c.term_a) not in self.terminals
            and (c.sat_b, c.term_b) not in self.terminals
        )

    def claim(self, c: CandidateLink):
        self.pairs.add((min(c.sat_a, c.sat_b), max(c.sat_a, c.sat_b)))
        self.terminals.add((c.sat_a, c.term_a))
        self.terminals.add((c.sat_b, c.term_b))

    def release(self, c: CandidateLink):
        self.pairs.discard((min(c.sat_a, c.sat_b), max(c.sat_a, c.sat_b)))
        self.terminals.discard((c.sat_a, c.term_a))
        self.terminals.discard((c.sat_b, c.term_b))

    def snapshot(self):
        return set(self.terminals), set(self.pairs)

    def restore(self, snap):
        self.terminals, self.pairs = set(snap[0]), set(snap[1])


def _grow_cluster_tree(
    members: np.ndarray,
    root: int,
    direction: str,
    candidates: tuple[CandidateLink, ...],
    costs: dict,
    budget: _Budget,
) -> list[CandidateLink] | None:
    """Greedy cheapest-edge growth from the root; single-swap repair when a
    budget dead-end appears. Returns chosen candidates or None."""
    member_set = set(int(m) for m in members)
    # direction decides transmitter: downward parent->child, upward child->parent
    def fits(c, connected):
        if direction == "downward":
            return c.sat_a in connected and c.sat_b in member_set - connected
        return c.sat_b in connected and c.sat_a in member_set - connected

    def new_node(c):
        return c.sat_b if direction == "downward" else c.sat_a

    connected = {int(root)}
    chosen: list[CandidateLink] = []
    banned: set[int] = set()
    while connected != member_set:
        options = [
            c for c in candidates
            if id(c) not in banned and fits(c, connected) and budget.admissible(c)
        ]
        if options:
            best = min(options, key=lambda c: (costs[id(c)], c.sat_a, c.sat_b))
            budget.claim(best)
            chosen.append(best)
            connected.add(new_node(best))
            continue
        # repair: ban the priciest chosen edge, roll back to the root-reachable
        # core, and regrow with the freed budget (each dead-end bans one
        # candidate, so the loop terminates)
        if not chosen:
            return None
        victim = max(chosen, key=lambda c: costs[id(c)])
        banned.add(id(victim))
        for c in chosen:
            budget.release(c)
        kept: list[CandidateLink] = []
        kept_ids: set[int] = set()
        connected = {int(root)}
        changed = True
        while changed:
            changed = False
            for c in chosen:
                if c is not victim and id(c) not in kept_ids and fits(c, connected):
                    kept.append(c)
                    kept_ids.add(id(c))
                    connected.add(new_node(c))
                    changed = True
        for c in kept:
            budget.claim(c)
        chosen = kept
    return chosen


def _assemble(
    n_sats: int,
    terminals_per_sat: int,
    t: int,
    direction: str,
    partition: VCPartition,
    roots: dict[int, int],
    chosen: list[CandidateLink],
    costs: dict,
) -> SpanningSolution:
    adj = np.zeros((n_sats, n_sats), dtype=int)
    links = set()
    objective = 0.0
    for c in chosen:
        adj[c.sat_a, c.sat_b] = 1
        links.add((c.sat_a, c.term_a, c.sat_b, c.term_b))
        objective += costs[id(c)]
    root_vec = np.zeros(n_sats, dtype=int)
    for r in roots.values():
        root_vec[r] = 1
    forest = DirectedForest(
        adj=adj,
        roots=root_vec,
        direction=direction,
        clusters=partition.assignment.copy(),
    )
    depth = max(
        (len(path_to_root(forest, node)) - 1 for node in range(n_sats)), default=0
    )
    cbm = CBM(
        n_sats=n_sats,
        terminals_per_sat=terminals_per_sat,
        t=t,
        links=frozenset(links),
    )
    return SpanningSolution(forest=forest, cbm=cbm, objective=objective, depth=depth)


def build_forest(
    candidates: tuple[CandidateLink, ...],
    partition: VCPartition,
    roots="auto",
    direction: str = "downward",
    *,
    terminals_per_sat: int = 4,
    model_bits: float = 5.2e7,
    tx_power_w=1.0,
    alpha2: float = 1.0,
    alpha3: float = 1.0,
    t: int = 0,
) -> SpanningSolution:
    """Construct a rooted spanning forest, one tree per cluster.

    Args:
        candidates: admissible terminal pairs (directed; transmitter first).
        roots: "auto" tries every member as root (clusters up to 32 nodes)
            and keeps the cheapest tree; otherwise a {cluster_id: root} map.

    Raises:
        InfeasibilityError: some cluster cannot be spanned.
    """
    n_sats = partition.n_sats
    costs = {
        id(c): _candidate_cost(c, model_bits, tx_power_w, alpha2, alpha3)
        for c in candidates
    }
    usable = tuple(c for c in candidates if math.isfinite(costs[id(c)]))
    budget = _Budget()
    chosen_all: list[CandidateLink] = []
    chosen_roots: dict[int, int] = {}
    for cid in range(partition.n_clusters):
        members = partition.members(cid)
        cluster_cands = tuple(
            c for c in usable
            if partition.assignment[c.sat_a] == cid
            and partition.assignment[c.sat_b] == cid
        )
        if roots == "auto":
            if len(members) <= MAX_AUTO_ROOT_NODES:
                candidates_roots = [int(m) for m in members]
            else:
                outward = {
                    int(m): sum(
                        costs[id(c)]
                        for c in cluster_cands
                        if c.sat_a == m or c.sat_b == m
                    )
                    for m in members
                }
                candidates_roots = [min(outward, key=lambda m: (outward[m], m))]
        else:
            candidates_roots = [int(roots[cid])]

        best_edges, best_cost, best_root = None, math.inf, None
        for root in candidates_roots:
            snap = budget.snapshot()
            edges = _grow_cluster_tree(
                members, root, direction, cluster_cands, costs, budget
            )
            budget.restore(snap)
            if edges is None:
                continue
            total = sum(costs[id(c)] for c in edges)
            if total < best_cost - 1e-15 or (
                abs(total - best_cost) <= 1e-15 and (best_root is None or root < best_root)
            ):
                best_edges, best_cost, best_root = edges, total, root
        if best_edges is None:
            raise InfeasibilityError(
                f"cluster {cid} cannot be spanned from any candidate root"
            )
        for c in best_edges:
            budget.claim(c)
        chosen_all.extend(best_edges)
        chosen_roots[cid] = best_root
    return _assemble(
        n_sats, terminals_per_sat, t, direction, partition, chosen_roots,
        chosen_all, costs,
    )


def brute_force_optimum(
    candidates: tuple[CandidateLink, ...],
    partition: VCPartition,
    direction: str = "downward",
    *,
    terminals_per_sat: int = 4,
    model_bits: float = 5.2e7,
    tx_power_w=1.0,
    alpha2: float = 1.0,
    alpha3: float = 1.0,
    t: int = 0,
) -> SpanningSolution:
    """Exact minimum-cost forest by exhaustive enumeration (clusters <= 6).

    Enumerates every root and arborescence per cluster, then every
    combination across clusters that respects the shared terminal budget.

    Raises:
        ValueError: a cluster exceeds the size guard.
        InfeasibilityError: no valid combination exists.
    """
    n_sats = partition.n_sats
    costs = {
        id(c): _candidate_cost(c, model_bits, tx_power_w, alpha2, alpha3)
        for c in candidates
    }
    usable = tuple(c for c in candidates if math.isfinite(costs[id(c)]))

    per_cluster: list[list[tuple[float, int, list[CandidateLink]]]] = []
    for cid in range(partition.n_clusters):
        members = partition.members(cid)
        if len(members) > MAX_BRUTE_CLUSTER:
            raise ValueError(
                f"cluster {cid} has {len(members)} members; exhaustive search "
                f"supports <= {MAX_BRUTE_CLUSTER}"
            )
        index_of = {int(m): i for i, m in enumerate(members)}
        # every wiring of each ordered pair stays in play: a pricier terminal
        # assignment can be the only budget-feasible one
        pair_cands: dict[tuple[int, int], list[CandidateLink]] = {}
        for c in usable:
            if c.sat_a in index_of and c.sat_b in index_of:
                pair_cands.setdefault((c.sat_a, c.sat_b), []).append(c)
        for cands in pair_cands.values():
            cands.sort(key=lambda c: costs[id(c)])
        mask = np.zeros((len(members), len(members)), dtype=int)
        for a, b in pair_cands:
            mask[index_of[a], index_of[b]] = 1
        options = []
        for root_local in range(len(members)):
            for tree in enumerate_arborescences(mask, root_local, direction):
                edge_keys = [
                    (int(members[u]), int(members[v])) for u, v in tree.edges()
                ]
                best_combo = None
                for combo in itertools.product(
                    *(pair_cands[key] for key in edge_keys)
                ):
                    local_budget = _Budget()
                    ok = True
                    for c in combo:
                        if not local_budget.admissible(c):
                            ok = False
                            break
                        local_budget.claim(c)
                    if not ok:
                        continue
                    total = sum(costs[id(c)] for c in combo)
                    if best_combo is None or total < best_combo[0]:
                        best_combo = (total, list(combo))
                if best_combo is not None:
                    options.append(
                        (best_combo[0], int(members[root_local]), best_combo[1])
                    )
        if not options:
            raise InfeasibilityError(f"cluster {cid} admits no arborescence")
        options.sort(key=lambda item: (item[0], item[1]))
        per_cluster.append(options)

    # depth-first over clusters, cheapest options first, pruned by the best
    # complete forest found so far
    best: list = [math.inf, None]

    def descend(cid: int, budget: _Budget, acc: float, picked: list):
        if acc >= best[0]:
            return
        if cid == len(per_cluster):
            best[0] = acc
            best[1] = list(picked)
            return
        for total, root, chosen in per_cluster[cid]:
            if acc + total >= best[0]:
                break  # options are cost-sorted; nothing cheaper follows
            claimed = []
            ok = True
            for c in chosen:
                if not budget.admissible(c):
                    ok = False
                    break
                budget.claim(c)
                claimed.append(c)
            if ok:
                picked.append((total, root, chosen))
                descend(cid + 1, budget, acc + total, picked)
                picked.pop()
            for c in claimed:
                budget.release(c)

    descend(0, _Budget(), 0.0, [])
    if best[1] is None:
        raise InfeasibilityError("no budget-feasible forest combination")
    roots = {cid: item[1] for cid, item in enumerate(best[1])}
    chosen_all = [c for item in best[1] for c in item[2]]
    return _assemble(
        n_sats, terminals_per_sat, t, direction, partition, roots, chosen_all, costs,
    )


def stability_filter(
    tl: ConstellationTimeline,
    p: LinkBudgetParams,
    solution: SpanningSolution,
    t_start: int,
    duration_s: int,
) -> list[tuple[int, tuple[int, int]]]:
    """Re-check every forest link each second of [t_start, t_start+duration);
    return (t, (from_sat, to_sat)) entries whose rate drops below the minimum.

    Raises:
        ValueError: window extends beyond the horizon.
    """
    if t_start < 0 or t_start + duration_s > tl.horizon:
        raise ValueError("stability window outside horizon")
    broken = []
    edges = sorted(solution.cbm.links)
    for t in range(t_start, t_start + duration_s):
        for n, _, n2, _ in edges:
            d = sat_distance(tl, n, n2, t)
            v_r = (
                sat_distance(tl, n, n2, t + 1) - d if t + 1 <= tl.horizon else 0.0
            )
            if d <= 0 or terminal_rate(p, d, v_r) < p.min_rate_bps:
                broken.append((t, (n, n2)))
    return broken


def solution_to_csv(solution: SpanningSolution, path, phase: str, t: int) -> None:
    """Append-free edge-list export: from_sat,from_term,to_sat,to_term,phase,t."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from_sat", "from_term", "to_sat", "to_term", "phase", "t"])
        for n, m, n2, m2 in sorted(solution.cbm.links):
            writer.writerow([n, m, n2, m2, phase, t])


def verify_solution(solution: SpanningSolution, rates=None, min_rate_bps: float = 0.0) -> list[str]:
    """Structural self-check: the forest validates, the CBM validates, and the
    CBM realizes exactly the forest's adjacency."""
    from .graph import cbm_to_adjacency
    from .link import validate_cbm

    problems = list(validate_tree(solution.forest))
    rate_table = rates if rates is not None else {
        link: math.inf for link in solution.cbm.links
    }
    problems += validate_cbm(solution.cbm, rate_table, min_rate_bps)
    if not np.array_equal(cbm_to_adjacency(solution.cbm), solution.forest.adj):
        problems.append("CBM does not realize the forest adjacency")
    return problems
