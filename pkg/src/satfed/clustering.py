"""Virtual-constellation partitioning and data-heterogeneity statistics.

Satellites are grouped into clusters ("virtual constellations") of at least
two members. Heterogeneity enters the convergence analysis through two
quantities estimated here from gradient probes: the per-cluster dispersion
ratio (how much member gradients disagree inside a cluster) and a lower bound
on the cross-cluster dissimilarity derived from it.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .constellation import ConstellationTimeline, pairwise_distances


class DegenerateGradientError(ValueError):
    """The weighted mean gradient vanished at a probe point, so the
    dispersion ratio is undefined there."""


@dataclass(frozen=True, eq=False)
class VCPartition:
    """Cluster assignment: per-satellite cluster id in [0, n_clusters);
    -1 marks an unassigned satellite (always a validation error)."""

    assignment: np.ndarray
    n_clusters: int

    def __post_init__(self):
        object.__setattr__(
            self, "assignment", np.asarray(self.assignment, dtype=int)
        )

    @property
    def n_sats(self) -> int:
        return len(self.assignment)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster_id)

    def sizes(self) -> np.ndarray:
        return np.array(
            [len(self.members(c)) for c in range(self.n_clusters)], dtype=int
        )


@dataclass(frozen=True)
class HeterogeneityStats:
    """Dispersion statistics over a shared probe set."""

    zeta_loc_min: tuple[float, ...]  # per-cluster dispersion ratio
    zeta_loc_hat: float              # max over clusters
    zeta_glob2_lb: float             # lower bound on cross-cluster dissimilarity


def validate_partition(p: VCPartition, n_sats: int) -> list[str]:
    """Diagnostics for coverage, id validity, and the min-size-2 rule."""
    violations: list[str] = []
    if len(p.assignment) != n_sats:
        violations.append(
            f"assignment covers {len(p.assignment)} satellites, expected {n_sats}"
        )
        return violations
    for sat, cid in enumerate(p.assignment):
        if cid < 0:
            violations.append(f"satellite {sat} unassigned")
        elif cid >= p.n_clusters:
            violations.append(f"satellite {sat} assigned to invalid cluster {cid}")
    for cid in range(p.n_clusters):
        size = len(p.members(cid))
        if size < 2:
            violations.append(f"cluster {cid} has {size} members, minimum is 2")
    return violations


def _probe_ratios(grads: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Per-probe ratio (sum_n a_n ||g_n||^2) / ||sum_n a_n g_n||^2."""
    grads = np.asarray(grads, dtype=float)
    num = np.einsum("n,pnd->p", a, grads**2)
    mean = np.einsum("n,pnd->pd", a, grads)
    den = np.einsum("pd,pd->p", mean, mean)
    if np.any(den <= 1e-300):
        raise DegenerateGradientError(
            "weighted mean gradient vanished at a probe point"
        )
    return num / den


def zeta_loc_min(cluster_grads: np.ndarray, a_n: np.ndarray) -> float:
    """Smallest dispersion constant compatible with the cluster's gradients.

    Args:
        cluster_grads: (probes, members, dim) gradient samples at shared
            probe points.
        a_n: member weights, non-negative, summing to 1.

    Returns:
        max over probes of (sum a_n ||g_n||^2) / ||sum a_n g_n||^2, always >= 1.

    Raises:
        DegenerateGradientError: the weighted mean gradient is zero somewhere.
    """
    a = np.asarray(a_n, dtype=float)
    if abs(a.sum() - 1.0) > 1e-9 or np.any(a < 0):
        raise ValueError("weights must be non-negative and sum to 1")
    return float(np.max(_probe_ratios(cluster_grads, a)))


def weights_from_sizes(
    partition: VCPartition, data_sizes: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Default analysis weights: a_n = D_n / D_cluster, b_c = D_cluster / D."""
    sizes = np.asarray(data_sizes, dtype=float)
    a = np.zeros(partition.n_sats)
    b = np.zeros(partition.n_clusters)
    total = sizes.sum()
    for cid in range(partition.n_clusters):
        members = partition.members(cid)
        cluster_total = sizes[members].sum()
        a[members] = sizes[members] / cluster_total
        b[cid] = cluster_total / total
    return a, b


def zeta_glob2_bound(
    partition: VCPartition,
    all_grads: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
) -> HeterogeneityStats:
    """Lower-bound the cross-cluster dissimilarity from gradient probes.

    Args:
        partition: valid cluster assignment.
        all_grads: (probes, n_sats, dim) gradients at shared probe points.
        a: per-satellite weights, summing to 1 within each cluster.
        b: per-cluster weights, summing to 1.

    Returns:
        HeterogeneityStats with the per-cluster dispersion ratios, their max,
        and the bound max over probes of
        (sum_c b_c sum_n a_n ||g_n||^2 - zhat * ||sum_c b_c sum_n a_n g_n||^2) / zhat.
    """
    all_grads = np.asarray(all_grads, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("cluster weights must sum to 1")
    per_cluster = []
    for cid in range(partition.n_clusters):
        members = partition.members(cid)
        per_cluster.append(zeta_loc_min(all_grads[:, members, :], a[members]))
    zhat = max(per_cluster)

    n_probes = all_grads.shape[0]
    weights = a * b[partition.assignment]          # b_c * a_n per satellite
    s1 = np.einsum("n,pnd->p", weights, all_grads**2)
    mean = np.einsum("n,pnd->pd", weights, all_grads)
    s2 = np.einsum("pd,pd->p", mean, mean)
    values = (s1 - zhat * s2) / zhat
    return HeterogeneityStats(
        zeta_loc_min=tuple(per_cluster),
        zeta_loc_hat=float(zhat),
        zeta_glob2_lb=float(values.max()) if n_probes else 0.0,
    )


def sampled_zeta_glob2(
    partition: VCPartition,
    all_grads: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
) -> float:
    """Directly sampled dissimilarity: max over probes of
    sum_c b_c ||mean_c||^2 - ||global mean||^2 (the cross-cluster spread with
    unit proportionality constant)."""
    all_grads = np.asarray(all_grads, dtype=float)
    best = -np.inf
    for p in range(all_grads.shape[0]):
        cluster_means = []
        for cid in range(partition.n_clusters):
            members = partition.members(cid)
            w = np.asarray(a, dtype=float)[members]
            cluster_means.append(np.einsum("n,nd->d", w, all_grads[p, members, :]))
        cluster_means = np.asarray(cluster_means)
        global_mean = np.einsum("c,cd->d", b, cluster_means)
        spread = float(
            np.dot(b, np.einsum("cd,cd->c", cluster_means, cluster_means))
            - global_mean @ global_mean
        )
        best = max(best, spread)
    return best


# ---- partition construction ---- #


def partition_objective(
    tl: ConstellationTimeline,
    t: int,
    partition: VCPartition,
    data_stats: np.ndarray | None = None,
    w_geo: float = 1.0,
    w_grad: float = 1.0,
) -> float:
    """Weighted sum of intra-cluster geographic spread and gradient
    dissimilarity; the quantity cluster_heuristic minimizes."""
    dist = pairwise_distances(tl, t)
    scale = dist.max() if dist.max() > 0 else 1.0
    geo = 0.0
    for cid in range(partition.n_clusters):
        members = partition.members(cid)
        if len(members) < 2:
            geo += 10.0  # penalize degenerate clusters hard
            continue
        sub = dist[np.ix_(members, members)]
        geo += float(sub.sum()) / (len(members) * (len(members) - 1)) / scale
    grad_term = 0.0
    if data_stats is not None and w_grad > 0:
        n = partition.n_sats
        a = np.zeros(n)
        for cid in range(partition.n_clusters):
            members = partition.members(cid)
            a[members] = 1.0 / len(members)
        try:
            per = [
                zeta_loc_min(data_stats[:, partition.members(c), :],
                             a[partition.members(c)])
                for c in range(partition.n_clusters)
            ]
            grad_term = max(per) - 1.0
        except DegenerateGradientError:
            grad_term = 10.0
    return w_geo * geo + w_grad * grad_term


def cluster_heuristic(
    tl: ConstellationTimeline,
    t: int,
    data_stats: np.ndarray | None,
    c_target: int,
    w_geo: float = 1.0,
    w_grad: float = 1.0,
    max_passes: int = 8,
) -> VCPartition:
    """Build a valid partition by farthest-point seeding plus swap descent.

    Args:
        data_stats: optional (probes, n_sats, dim) gradient probes; when given,
            the objective also penalizes intra-cluster gradient dissimilarity.
        c_target: number of clusters; needs 2 * c_target <= N.

    Raises:
        ValueError: infeasible c_target.
    """
    n = tl.n_sats
    if c_target < 1 or 2 * c_target > n:
        raise ValueError(f"c_target={c_target} infeasible for {n} satellites")
    if c_target == 1:
        return VCPartition(assignment=np.zeros(n, dtype=int), n_clusters=1)

    dist = pairwise_distances(tl, t)
    # farthest-point seeding
    seeds = [int(np.argmax(dist.sum(axis=1)))]
    while len(seeds) < c_target:
        remaining = [i for i in range(n) if i not in seeds]
        seeds.append(max(remaining, key=lambda i: min(dist[i, s] for s in seeds)))
    assignment = np.array(
        [int(np.argmin([dist[i, s] for s in seeds])) for i in range(n)], dtype=int
    )
    for cid, seed in enumerate(seeds):
        assignment[seed] = cid

    # repair: grow clusters below the minimum size from the largest clusters
    def sizes():
        return np.bincount(assignment, minlength=c_target)

    while sizes().min() < 2:
        small = int(np.argmin(sizes()))
        donors = np.flatnonzero(sizes() > 2)
        candidates = [i for i in range(n) if assignment[i] in donors]
        mover = min(candidates, key=lambda i: dist[i, seeds[small]])
        assignment[mover] = small

    partition = VCPartition(assignment=assignment, n_clusters=c_target)
    best = partition_objective(tl, t, partition, data_stats, w_geo, w_grad)

    # local descent: single moves and pairwise swaps that keep validity
    for _ in range(max_passes):
        improved = False
        for i in range(n):
            for cid in range(c_target):
                if cid == assignment[i] or sizes()[assignment[i]] <= 2:
                    continue
                trial = assignment.copy()
                trial[i] = cid
                cand = VCPartition(assignment=trial, n_clusters=c_target)
                val = partition_objective(tl, t, cand, data_stats, w_geo, w_grad)
                if val < best - 1e-12:
                    assignment, best, improved = trial, val, True
        for i, j in itertools.combinations(range(n), 2):
            if assignment[i] == assignment[j]:
                continue
            trial = assignment.copy()
            trial[i], trial[j] = trial[j], trial[i]
            cand = VCPartition(assignment=trial, n_clusters=c_target)
            val = partition_objective(tl, t, cand, data_stats, w_geo, w_grad)
            if val < best - 1e-12:
                assignment, best, improved = trial, val, True
        if not improved:
            break
    return VCPartition(assignment=assignment, n_clusters=c_target)


# ---- import/export ---- #


def partition_to_csv(partition: VCPartition, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sat_id", "cluster_id"])
        for sat, cid in enumerate(partition.assignment):
            writer.writerow([sat, int(cid)])


def partition_from_csv(path) -> VCPartition:
    pairs = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "sat_id":
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields")
            pairs[int(row[0])] = int(row[1])
    n = max(pairs) + 1 if pairs else 0
    assignment = np.full(n, -1, dtype=int)
    for sat, cid in pairs.items():
        assignment[sat] = cid
    n_clusters = int(assignment.max()) + 1 if n else 0
    return VCPartition(assignment=assignment, n_clusters=n_clusters)
