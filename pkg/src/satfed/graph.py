"""Directed spanning trees and forests over satellite adjacency matrices.

Adjacency is a plain (N, N) 0/1 integer array; entry [n, n'] means an active
transmission link n -> n'. A downward forest carries models root-to-leaves
(every non-root receives from exactly one node); an upward forest carries
aggregates leaves-to-root (every non-root transmits to exactly one node).
Validity additionally requires the matrix-power path condition: within each
cluster, summing saturated powers of the adjacency gives exactly one directed
path between the root and every member.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .link import CBM

MAX_ENUM_NODES = 8


@dataclass(frozen=True, eq=False)
class DirectedForest:
    """A forest of rooted directed trees, one per cluster.

    adj: (N, N) 0/1 matrix of transmission links.
    roots: (N,) 0/1 indicator, exactly one root per cluster.
    direction: "downward" (root dispatches) or "upward" (root aggregates).
    clusters: per-node cluster id; None means a single global tree.
    """

    adj: np.ndarray
    roots: np.ndarray
    direction: str
    clusters: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "adj", np.asarray(self.adj, dtype=int))
        object.__setattr__(self, "roots", np.asarray(self.roots, dtype=int))
        if self.clusters is not None:
            object.__setattr__(self, "clusters", np.asarray(self.clusters, dtype=int))
        if self.direction not in ("downward", "upward"):
            raise ValueError(f"direction must be downward|upward, got {self.direction}")

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def cluster_ids(self) -> np.ndarray:
        if self.clusters is None:
            return np.zeros(self.n, dtype=int)
        return self.clusters

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.adj)
        return list(zip(rows.tolist(), cols.tolist()))


def cbm_to_adjacency(cbm: CBM) -> np.ndarray:
    """Collapse terminal wiring to satellite adjacency: [n, n'] = 1 iff any
    terminal pair from n to n' is active."""
    adj = np.zeros((cbm.n_sats, cbm.n_sats), dtype=int)
    for n, _, n2, _ in cbm.links:
        adj[n, n2] = 1
    return adj


def _saturating_path_counts(adj: np.ndarray, cap: int) -> np.ndarray:
    """Sum of adj^q for q = 1..n-1 with entries clipped at ``cap`` after each
    multiply, so only "zero / exactly one / more than one" survives."""
    n = adj.shape[0]
    power = adj.copy()
    total = adj.copy()
    for _ in range(max(0, n - 2)):
        power = np.clip(power @ adj, 0, cap)
        total = np.clip(total + power, 0, cap)
    return total


def validate_tree(f: DirectedForest) -> list[str]:
    """Check forest structure; return a list of violations (empty = valid).

    Checks, per cluster: exactly one root; edges stay inside the cluster;
    edge count = members - 1; in-degree (downward) or out-degree (upward) of
    one for non-roots and zero for the root; and the path condition — the
    saturated power sum counts exactly one directed path between root and
    every non-root.
    """
    violations: list[str] = []
    adj = f.adj
    n = f.n
    if adj.shape != (n, n):
        return [f"adjacency must be square, got {adj.shape}"]
    if np.any((adj != 0) & (adj != 1)):
        violations.append("adjacency entries must be 0/1")
    if np.any(np.diag(adj) != 0):
        violations.append("adjacency diagonal must be zero")
    clusters = f.cluster_ids()
    for u, v in f.edges():
        if clusters[u] != clusters[v]:
            violations.append(f"edge {u}->{v} crosses clusters")
    for cid in np.unique(clusters):
        members = np.flatnonzero(clusters == cid)
        roots = [int(m) for m in members if f.roots[m] == 1]
        if len(roots) != 1:
            violations.append(f"cluster {cid}: expected 1 root, found {len(roots)}")
            continue
        root = roots[0]
        sub = adj[np.ix_(members, members)]
        edge_count = int(sub.sum())
        if edge_count != len(members) - 1:
            violations.append(
                f"cluster {cid}: {edge_count} edges for {len(members)} nodes"
            )
        degrees = sub.sum(axis=0) if f.direction == "downward" else sub.sum(axis=1)
        root_idx = int(np.flatnonzero(members == root)[0])
        for idx, member in enumerate(members):
            want = 0 if idx == root_idx else 1
            kind = "in" if f.direction == "downward" else "out"
            if degrees[idx] != want:
                violations.append(
                    f"cluster {cid}: node {int(member)} has {kind}-degree "
                    f"{int(degrees[idx])}, expected {want}"
                )
        counts = _saturating_path_counts(sub, cap=len(members))
        for idx, member in enumerate(members):
            if idx == root_idx:
                continue
            paths = (
                counts[root_idx, idx]
                if f.direction == "downward"
                else counts[idx, root_idx]
            )
            if paths != 1:
                violations.append(
                    f"cluster {cid}: node {int(member)} has {int(paths)} paths "
                    f"to/from root, expected 1"
                )
    return violations


def enumerate_arborescences(
    adj_mask: np.ndarray, root: int, direction: str
) -> list[DirectedForest]:
    """All spanning arborescences of the admissible edge set, rooted at
    ``root``. Exact but exponential; guarded to n <= 8.

    Raises:
        ValueError: more than 8 nodes.
    """
    adj_mask = np.asarray(adj_mask, dtype=int)
    n = adj_mask.shape[0]
    if n > MAX_ENUM_NODES:
        raise ValueError(f"enumeration supports n <= {MAX_ENUM_NODES}, got {n}")
    non_roots = [v for v in range(n) if v != root]
    if direction == "downward":
        choices = [[u for u in range(n) if u != v and adj_mask[u, v]] for v in non_roots]
    elif direction == "upward":
        choices = [[u for u in range(n) if u != v and adj_mask[v, u]] for v in non_roots]
    else:
        raise ValueError(f"direction must be downward|upward, got {direction}")
    if any(not c for c in choices):
        return []

    out = []
    roots = np.zeros(n, dtype=int)
    roots[root] = 1
    for parents in itertools.product(*choices):
        parent_of = dict(zip(non_roots, parents))
        ok = True
        for v in non_roots:
            seen = set()
            node = v
            while node != root:
                if node in seen:
                    ok = False
                    break
                seen.add(node)
                node = parent_of[node]
            if not ok:
                break
        if not ok:
            continue
        adj = np.zeros((n, n), dtype=int)
        for v, u in parent_of.items():
            if direction == "downward":
                adj[u, v] = 1
            else:
                adj[v, u] = 1
        out.append(DirectedForest(adj=adj, roots=roots.copy(), direction=direction))
    return out


def path_to_root(f: DirectedForest, node: int) -> list[int]:
    """The unique node sequence from ``node`` to its cluster root (inclusive);
    the root itself yields the zero-edge path [root].

    Raises:
        ValueError: the forest is malformed (no unique next hop, or a cycle).
    """
    path = [int(node)]
    current = int(node)
    for _ in range(f.n):
        if f.roots[current] == 1:
            return path
        if f.direction == "downward":
            nxt = np.flatnonzero(f.adj[:, current])
        else:
            nxt = np.flatnonzero(f.adj[current, :])
        if len(nxt) != 1:
            raise ValueError(
                f"node {current}: expected exactly one next hop, found {len(nxt)}"
            )
        current = int(nxt[0])
        path.append(current)
    raise ValueError(f"no path to root from node {node} (cycle suspected)")


def adjacency_to_csv(adj: np.ndarray, path) -> None:
    """Write a 0/1 adjacency matrix as CSV."""
    np.savetxt(path, np.asarray(adj, dtype=int), fmt="%d", delimiter=",")


def adjacency_from_csv(path) -> np.ndarray:
    """Read a 0/1 adjacency matrix from CSV."""
    adj = np.loadtxt(path, delimiter=",", dtype=int)
    return np.atleast_2d(adj)
