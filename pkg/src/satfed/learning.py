"""Federated rounds over spanning forests.

Implements the five-phase round: global model dispatch down a spanning tree,
local SGD, hierarchical gradient aggregation up per-cluster trees with
cluster-model refreshes in between, and a final global aggregation that folds
every satellite's whole-round cumulative gradient into the next global model.
A flat (tree-free) unfolding of the same update serves as the correctness
oracle, and event-driven ground-station baselines share the trace schema.

Conventions fixed here so runs replay bitwise:
- child contributions are added in ascending node order during aggregation;
- full-batch SGD bypasses index sampling and uses the exact gradient;
- batteries settle at phase-cap boundaries, crediting harvest over the
  integer seconds elapsed since the previous settlement.
"""

from __future__ import annotations

import csv
import heapq
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accounting import (
    BatteryState,
    ComputeParams,
    aggregation_latency,
    dispatch_latency,
    train_cost,
)
from .clustering import VCPartition
from .constellation import (
    ConstellationTimeline,
    gateway_distance,
    gateway_slant_km,
    harvested_energy,
    pairwise_distances,
    sat_distance,
)
from .graph import validate_tree
from .link import (
    RF_TX_POWER_W,
    LinkBudgetParams,
    feasible_cbm_candidates,
    rf_rate,
    terminal_rate,
)
from .losses import global_grad, global_loss
from .rng import substream
from .schedule import CapacityError, PhaseCaps, default_caps, make_tti_grid, plan_round
from .spanning import InfeasibilityError, build_forest

MODEL_MAGIC = b"SFEDMDL1"
TRACE_HEADER = "k,ell,phase,t_start,latency_s,energy_j,loss,grad_norm,battery_min"
BASELINE_KINDS = ("async", "buffered", "opportunistic", "sink_sync")


# ---- core update steps ---- #


def local_sgd(oracle, w0, e: int, frac: float, eta: float, rng, t: float = 0.0):
    """Run ``e`` mini-batch SGD steps from ``w0``.

    Batch size is ceil(frac * D), drawn without replacement within a step and
    independently across steps. Returns (endpoint model, cumulative gradient)
    where the cumulative gradient is (w0 - w_e) / eta, i.e. the quantity a
    satellite reports upward.
    """
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"batch fraction must be in (0, 1], got {frac}")
    if eta <= 0.0:
        raise ValueError(f"step size must be > 0, got {eta}")
    if e < 0:
        raise ValueError("iteration count must be >= 0")
    w0 = np.asarray(w0, dtype=float)
    w = w0.copy()
    d = oracle.dataset_size
    batch = math.ceil(frac * d)
    for _ in range(int(e)):
        if batch >= d:
            g = oracle.grad(w, t)  # full batch: exact gradient, no sampling
        else:
            idx = rng.choice(d, size=batch, replace=False)
            g = oracle.minibatch_grad(w, idx, t)
        w = w - eta * g
    return w, (w0 - w) / eta


def tree_aggregate(forest, contributions, weights) -> dict[int, np.ndarray]:
    """Leaf-to-root accumulation: value(n) = w_n * v_n + sum(children).

    Children are folded in ascending node index so the floating-point result
    is reproducible. Returns {root: aggregated vector} per tree of the forest.

    Raises:
        ValueError: forest invalid or not upward, or negative weights.
    """
    if forest.direction != "upward":
        raise ValueError("tree_aggregate expects an upward forest")
    problems = validate_tree(forest)
    if problems:
        raise ValueError(f"invalid aggregation forest: {problems[0]}")
    contributions = np.asarray(contributions, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = forest.n
    if contributions.shape[0] != n or weights.shape != (n,):
        raise ValueError("contributions/weights do not match the forest size")
    if (weights < 0).any():
        raise ValueError("aggregation weights must be >= 0")
    # upward adjacency points child -> parent, so column p lists p's children
    children = [np.flatnonzero(forest.adj[:, p]) for p in range(n)]

    def subtree(node: int) -> np.ndarray:
        val = weights[node] * contributions[node]
        for child in children[node]:
            val = val + subtree(int(child))
        return val

    return {int(r): subtree(int(r)) for r in np.flatnonzero(forest.roots)}


def apply_vc_update(w_bar, aggregated, eta: float, d_c: float) -> np.ndarray:
    """Cluster-model refresh between local rounds: w' = w - eta * agg / D_c."""
    if d_c <= 0:
        raise ValueError("cluster data size must be > 0")
    return np.asarray(w_bar, dtype=float) - eta * np.asarray(aggregated) / d_c


def apply_global_update(w, aggregated, eta: float, xi: float, d_total: float) -> np.ndarray:
    """Global refresh with the boost coefficient: w' = w - eta * xi * agg / D."""
    if d_total <= 0:
        raise ValueError("total data size must be > 0")
    return np.asarray(w, dtype=float) - eta * xi * np.asarray(aggregated) / d_total


def boost_coefficient(data_sizes, node_steps, local_rounds: int) -> float:
    """xi = sum_n D_n * L * e_n / D (e_n = per-node SGD iteration count)."""
    sizes = np.asarray(data_sizes, dtype=float)
    steps = np.broadcast_to(np.asarray(node_steps, dtype=float), sizes.shape)
    return float((sizes * local_rounds * steps).sum() / sizes.sum())


def flat_oracle(
    partition: VCPartition,
    gradients,
    data_sizes,
    cluster_steps,
    eta: float,
) -> np.ndarray:
    """Tree-free unfolding of one round's model delta.

    gradients is (N, L, M): the per-local-round cumulative gradient of each
    satellite. The delta is

        -eta * [sum_c' D_c' L e_c' / D]
             * sum_c (D_c / (D e_c L)) sum_l sum_{n in c} (D_n / D_c) g[n, l]

    computed with plain weighted sums and no topology at all.
    """
    g = np.asarray(gradients, dtype=float)
    if g.ndim != 3:
        raise ValueError("gradients must be (N, L, M)")
    n, local_rounds, m = g.shape
    sizes = np.asarray(data_sizes, dtype=float)
    e_c = np.asarray(cluster_steps, dtype=float)
    d_total = sizes.sum()
    xi = boost_coefficient(sizes, e_c[partition.assignment], local_rounds)
    inner = np.zeros(m)
    for cid in range(partition.n_clusters):
        members = partition.members(cid)
        d_c = sizes[members].sum()
        cluster_sum = np.zeros(m)
        for ell in range(local_rounds):
            for idx in members:
                cluster_sum = cluster_sum + (sizes[idx] / d_c) * g[idx, ell]
        inner = inner + (d_c / (d_total * e_c[cid] * local_rounds)) * cluster_sum
    return -eta * xi * inner


def protocol_round_delta(
    partition: VCPartition,
    vc_up,
    global_up,
    gradients,
    data_sizes,
    cluster_steps,
    eta: float,
    w_start=None,
) -> np.ndarray:
    """One round's model delta via the actual tree mechanics.

    Takes the per-local-round cumulative gradients as given (no SGD), runs
    the cluster aggregation/refresh cycle and the global aggregation, and
    returns w_new - w_start. Must agree with flat_oracle on the same inputs;
    that identity is the protocol's correctness check.
    """
    g = np.asarray(gradients, dtype=float)
    n, local_rounds, m = g.shape
    sizes = np.asarray(data_sizes, dtype=float)
    e_c = np.asarray(cluster_steps, dtype=float)
    w = np.zeros(m) if w_start is None else np.asarray(w_start, dtype=float)
    d_c = {
        cid: sizes[partition.members(cid)].sum()
        for cid in range(partition.n_clusters)
    }
    # after global dispatch every cluster starts from the global model
    wbar = {cid: w.copy() for cid in range(partition.n_clusters)}
    for ell in range(local_rounds - 1):
        agg = tree_aggregate(vc_up, g[:, ell, :], sizes)
        for root, val in agg.items():
            cid = int(partition.assignment[root])
            wbar[cid] = apply_vc_update(wbar[cid], val, eta, d_c[cid])
    hat = np.empty((n, m))
    for i in range(n):
        cid = int(partition.assignment[i])
        hat[i] = (w - wbar[cid]) / eta + g[i, local_rounds - 1]
    weights = sizes / (e_c[partition.assignment] * local_rounds)
    agg = tree_aggregate(global_up, hat, weights)
    ((_, val),) = agg.items()
    xi = boost_coefficient(sizes, e_c[partition.assignment], local_rounds)
    w_new = apply_global_update(w, val, eta, xi, sizes.sum())
    return w_new - w


# ---- run configuration and traces ---- #


@dataclass(frozen=True, eq=False)
class FedSpanConfig:
    """Everything one simulation run needs; validation happens on creation."""

    timeline: ConstellationTimeline
    partition: VCPartition
    oracles: tuple
    link: LinkBudgetParams
    rounds: int
    dim: int
    local_rounds: int = 2
    cluster_steps: tuple = ()  # e_c per cluster; empty -> all 1
    step_size: float = 0.01  # scalar or per-round sequence
    batch_frac: float = 1.0
    seed: int = 0
    caps: PhaseCaps | None = None
    compute: ComputeParams = field(default_factory=ComputeParams)
    cpu_freq: float | None = None
    model_bits: float = 5.2e7
    tx_power_w: float = 1.0
    terminals_per_sat: int = 4
    battery_init_j: float = 500.0
    battery_cap_j: float = 500.0
    battery_policy: str = "skip"  # or "abort"
    alpha2: float = 1.0
    alpha3: float = 1.0
    t_start: int = 0
    init_model: object = None
    tti_policy: str = "even"

    def __post_init__(self):
        n = self.partition.n_sats
        if len(self.oracles) != n:
            raise ValueError(f"need {n} oracles, got {len(self.oracles)}")
        if self.timeline.n_sats != n:
            raise ValueError("timeline and partition disagree on satellite count")
        steps = self.cluster_steps or tuple([1] * self.partition.n_clusters)
        if len(steps) != self.partition.n_clusters:
            raise ValueError("cluster_steps must have one entry per cluster")
        if any(int(e) < 0 for e in steps):
            raise ValueError("SGD counts must be >= 0")
        object.__setattr__(self, "cluster_steps", tuple(int(e) for e in steps))
        if self.rounds < 0 or self.local_rounds < 1:
            raise ValueError("rounds must be >= 0 and local_rounds >= 1")
        if self.battery_policy not in ("skip", "abort"):
            raise ValueError("battery_policy must be 'skip' or 'abort'")
        if not 0.0 < self.batch_frac <= 1.0:
            raise ValueError("batch_frac must be in (0, 1]")
        for o in self.oracles:
            if o.dim != self.dim:
                raise ValueError("oracle dimensionality differs from dim")

    def eta(self, k: int) -> float:
        if np.ndim(self.step_size) == 0:
            return float(self.step_size)
        return float(self.step_size[k])


@dataclass(frozen=True)
class TraceRow:
    k: int
    ell: int
    phase: str
    t_start: float
    latency_s: float
    energy_j: float
    loss: float
    grad_norm: float
    battery_min: float


@dataclass(frozen=True)
class RoundStats:
    k: int
    t_init: float
    t_end: float
    eta: float
    local_rounds: int
    loss_start: float
    loss_end: float
    grad_sq_norm: float
    idle_s: float
    transfer_s: float
    energy_j: float
    battery_min_j: float
    participants: int


@dataclass(eq=False)
class RunTrace:
    rows: list
    rounds: list
    final_model: np.ndarray
    aborted: tuple | None = None  # (k, phase, reason)


def write_trace(trace: RunTrace, path) -> None:
    """Emit the per-phase trace CSV (schema = TRACE_HEADER)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER.split(","))
        for r in trace.rows:
            writer.writerow([
                r.k, r.ell, r.phase, repr(r.t_start), repr(r.latency_s),
                repr(r.energy_j), repr(r.loss), repr(r.grad_norm),
                repr(r.battery_min),
            ])


def write_round_stats(trace: RunTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "k", "t_init", "t_end", "eta", "local_rounds", "loss_start",
            "loss_end", "grad_sq_norm", "idle_s", "transfer_s", "energy_j",
            "battery_min_j", "participants",
        ])
        for s in trace.rounds:
            writer.writerow([
                s.k, repr(s.t_init), repr(s.t_end), repr(s.eta),
                s.local_rounds, repr(s.loss_start), repr(s.loss_end),
                repr(s.grad_sq_norm), repr(s.idle_s), repr(s.transfer_s),
                repr(s.energy_j), repr(s.battery_min_j), s.participants,
            ])


def save_model(path, w) -> None:
    """Binary dump: 8-byte magic, little-endian uint64 length, float64 data."""
    w = np.asarray(w, dtype=float).ravel()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", w.size))
        fh.write(w.astype("<f8").tobytes())


def load_model(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MODEL_MAGIC:
        raise ValueError("not a model dump (bad magic)")
    (m,) = struct.unpack("<Q", data[8:16])
    if len(data) != 16 + 8 * m:
        raise ValueError("model dump length does not match its header")
    return np.frombuffer(data[16:], dtype="<f8").copy()


# ---- full round loop ---- #


def _geometry_rates(tl, p, t: int) -> np.ndarray:
    """(N, N) achievable-rate matrix at integer second t, Doppler included."""
    dist = pairwise_distances(tl, t)
    if t + 1 <= tl.horizon:
        v_r = pairwise_distances(tl, t + 1) - dist
    else:
        v_r = np.zeros_like(dist)
    rates = np.zeros_like(dist)
    n = dist.shape[0]
    for a in range(n):
        for b in range(n):
            if a != b and dist[a, b] > 0:
                rates[a, b] = terminal_rate(p, dist[a, b], v_r[a, b])
    return rates


def _per_sat_tx_energy(report, power: float, n: int) -> np.ndarray:
    out = np.zeros(n)
    for (u, _), dt in report.per_edge.items():
        out[u] += dt * power
    return out


def run_fed_span(cfg: FedSpanConfig) -> RunTrace:
    """Execute the full K-round protocol and record the trace.

    Topology is rebuilt from geometry at each round start. Batteries settle
    at phase-cap boundaries; a satellite that cannot afford its training
    energy skips that local round (zero gradient, zero aggregation weight)
    unless battery_policy is "abort". Deadline misses and infeasible
    topologies abort the run with the offending round and phase recorded.
    """
    tl = cfg.timeline
    part = cfg.partition
    n = part.n_sats
    caps = cfg.caps if cfg.caps is not None else default_caps(cfg.local_rounds)
    freq = cfg.cpu_freq if cfg.cpu_freq is not None else cfg.compute.f_max
    sizes = np.array([o.dataset_size for o in cfg.oracles], dtype=float)
    d_total = sizes.sum()
    d_c = {cid: sizes[part.members(cid)].sum() for cid in range(part.n_clusters)}
    e_c = np.asarray(cfg.cluster_steps, dtype=float)
    e_n = e_c[part.assignment]
    global_part = VCPartition(assignment=np.zeros(n, dtype=int), n_clusters=1)

    w = (np.zeros(cfg.dim) if cfg.init_model is None
         else np.asarray(cfg.init_model, dtype=float).copy())
    batteries = [
        BatteryState(level_j=cfg.battery_init_j, cap_j=cfg.battery_cap_j)
        for _ in range(n)
    ]
    credited = [cfg.t_start] * n
    rows: list[TraceRow] = []
    rounds: list[RoundStats] = []
    trace = RunTrace(rows=rows, rounds=rounds, final_model=w)
    battery_floor = [math.inf]  # min level seen in the current round

    def battery_min() -> float:
        return min(b.level_j for b in batteries)

    def settle(sat: int, t_boundary: float, tx_j: float, train_j: float) -> bool:
        """Credit harvest up to t_boundary, then charge consumption.

        Returns False when level + harvest cannot cover the consumption; the
        caller decides skip vs abort (the charge is NOT applied on False)."""
        t_int = min(int(math.floor(t_boundary)), tl.horizon)
        h = 0.0
        if t_int > credited[sat]:
            h = harvested_energy(tl, sat, credited[sat], t_int)
            credited[sat] = t_int
        state = batteries[sat]
        cost = tx_j + train_j
        if state.level_j + h > cost:
            level = min(state.level_j + h - cost, state.cap_j)
        else:
            level = min(state.level_j + h, state.cap_j)
        batteries[sat] = BatteryState(level_j=level, cap_j=state.cap_j)
        battery_floor[0] = min(battery_floor[0], level)
        return state.level_j + h > cost

    def abort(k, phase, reason, t_at, loss_now, gnorm):
        rows.append(TraceRow(k, 0, f"abort:{phase}", t_at, 0.0, 0.0,
                             loss_now, gnorm, battery_min()))
        trace.aborted = (k, phase, reason)
        trace.final_model = w
        return trace

    t_init = int(cfg.t_start)
    for k in range(cfg.rounds):
        eta = cfg.eta(k)
        big_l = cfg.local_rounds
        loss_start = global_loss(cfg.oracles, w, t_init)
        grad_start = global_grad(cfg.oracles, w, t_init)
        gnorm_start = float(np.linalg.norm(grad_start))
        battery_floor[0] = battery_min()

        try:
            grid = make_tti_grid(t_init, caps.tau_gd_max, caps.tau_loc, caps.tau_tti)
            plan = plan_round(grid, caps, big_l, cfg.tti_policy, k=k,
                              minibatch_frac=cfg.batch_frac, cpu_freq=freq)
        except CapacityError as exc:
            return abort(k, "schedule", str(exc), t_init, loss_start, gnorm_start)
        t_end = plan.t_ga + caps.tau_ga_max
        if t_end > tl.horizon:
            return abort(k, "horizon",
                         f"round {k} ends at {t_end:.1f}s beyond the timeline",
                         t_init, loss_start, gnorm_start)

        cands = feasible_cbm_candidates(
            tl, cfg.link, t_init, cfg.terminals_per_sat, cfg.terminals_per_sat
        )
        forest_kw = dict(
            terminals_per_sat=cfg.terminals_per_sat, model_bits=cfg.model_bits,
            tx_power_w=cfg.tx_power_w, alpha2=cfg.alpha2, alpha3=cfg.alpha3,
            t=t_init,
        )
        try:
            down_glob = build_forest(cands, global_part, "auto", "downward", **forest_kw)
            up_glob = build_forest(cands, global_part, "auto", "upward", **forest_kw)
            vc_up = vc_down = None
            if big_l > 1:
                vc_up = build_forest(cands, part, "auto", "upward", **forest_kw)
                vc_down = build_forest(cands, part, "auto", "downward", **forest_kw)
        except InfeasibilityError as exc:
            return abort(k, "topology", str(exc), t_init, loss_start, gnorm_start)
        rates = _geometry_rates(tl, cfg.link, t_init)

        round_energy = 0.0
        transfer_s = 0.0
        idle_s = (grid.x - (big_l - 1)) * caps.tau_tti

        def transfer_phase(forest_sol, phase, cap, t_phase, recursion, kk, ell):
            nonlocal round_energy, transfer_s
            rep = recursion(forest_sol.forest, rates, cfg.model_bits)
            tx = _per_sat_tx_energy(rep, cfg.tx_power_w, n)
            for sat in range(n):
                settle(sat, t_phase + cap, tx[sat], 0.0)
            energy = float(tx.sum())
            round_energy += energy
            transfer_s += rep.total
            rows.append(TraceRow(kk, ell, phase, t_phase, rep.total, energy,
                                 loss_start, gnorm_start, battery_min()))
            return rep.total <= cap + 1e-9

        # Phase 1: global dispatch
        if not transfer_phase(down_glob, "global_dispatch", caps.tau_gd_max,
                              plan.t_gd, dispatch_latency, k, 0):
            return abort(k, "global_dispatch", "deadline exceeded",
                         plan.t_gd, loss_start, gnorm_start)

        wbar = {cid: w.copy() for cid in range(part.n_clusters)}
        grads = np.zeros((n, big_l, cfg.dim))
        skipped = np.zeros((n, big_l), dtype=bool)

        for ell in range(big_l):
            t_train = plan.t_lt[ell]
            # Phase 2: local training
            train_lat = 0.0
            train_energy = 0.0
            for sat in range(n):
                steps = int(e_n[sat])
                batch = math.ceil(cfg.batch_frac * sizes[sat])
                tau, energy = train_cost(cfg.compute, steps, batch, freq)
                if tau > caps.tau_lt_max + 1e-9:
                    return abort(k, f"train ell={ell + 1}",
                                 f"satellite {sat} needs {tau:.3f}s "
                                 f"> cap {caps.tau_lt_max}s",
                                 t_train, loss_start, gnorm_start)
                ok = settle(sat, t_train + caps.tau_lt_max, 0.0, energy)
                if not ok:
                    if cfg.battery_policy == "abort":
                        return abort(k, f"train ell={ell + 1}",
                                     f"satellite {sat} battery infeasible",
                                     t_train, loss_start, gnorm_start)
                    skipped[sat, ell] = True
                    continue
                rng = substream(cfg.seed, "sgd", sat, k, ell)
                cid = int(part.assignment[sat])
                _, g = local_sgd(cfg.oracles[sat], wbar[cid], steps,
                                 cfg.batch_frac, eta, rng, t=t_train)
                grads[sat, ell] = g
                train_lat = max(train_lat, tau)
                train_energy += energy
            round_energy += train_energy
            idle_s += caps.tau_lt_max - train_lat
            rows.append(TraceRow(k, ell + 1, "train", t_train, train_lat,
                                 train_energy, loss_start, gnorm_start,
                                 battery_min()))

            if ell < big_l - 1:
                # Phase 3: cluster aggregation of this round's gradients
                weights = sizes.copy()
                weights[skipped[:, ell]] = 0.0
                agg = tree_aggregate(vc_up.forest, grads[:, ell, :], weights)
                if not transfer_phase(vc_up, "local_agg", caps.tau_la_max,
                                      plan.t_la[ell], aggregation_latency,
                                      k, ell + 1):
                    return abort(k, "local_agg", "deadline exceeded",
                                 plan.t_la[ell], loss_start, gnorm_start)
                # Phase 4: cluster-model refresh and dispatch
                for root, val in agg.items():
                    cid = int(part.assignment[root])
                    wbar[cid] = apply_vc_update(wbar[cid], val, eta, d_c[cid])
                if not transfer_phase(vc_down, "local_disp", caps.tau_ld_max,
                                      plan.t_ld[ell], dispatch_latency,
                                      k, ell + 1):
                    return abort(k, "local_disp", "deadline exceeded",
                                 plan.t_ld[ell], loss_start, gnorm_start)

        # Phase 5: global aggregation of whole-round cumulative gradients
        hat = np.empty((n, cfg.dim))
        for sat in range(n):
            cid = int(part.assignment[sat])
            hat[sat] = (w - wbar[cid]) / eta + grads[sat, big_l - 1]
        weights = sizes / (e_n * big_l)
        weights[skipped[:, big_l - 1]] = 0.0
        agg = tree_aggregate(up_glob.forest, hat, weights)
        ((_, val),) = agg.items()
        if not transfer_phase(up_glob, "global_agg", caps.tau_ga_max,
                              plan.t_ga, aggregation_latency, k, big_l):
            return abort(k, "global_agg", "deadline exceeded",
                         plan.t_ga, loss_start, gnorm_start)
        xi = boost_coefficient(sizes, e_n, big_l)
        w = apply_global_update(w, val, eta, xi, d_total)

        for sat in range(n):  # credit idle harvest to the round boundary
            settle(sat, t_end, 0.0, 0.0)
        loss_end = global_loss(cfg.oracles, w, t_end)
        rounds.append(RoundStats(
            k=k, t_init=float(t_init), t_end=t_end, eta=eta,
            local_rounds=big_l, loss_start=loss_start, loss_end=loss_end,
            grad_sq_norm=gnorm_start ** 2, idle_s=idle_s,
            transfer_s=transfer_s, energy_j=round_energy,
            battery_min_j=battery_floor[0],
            participants=int(n - skipped.any(axis=1).sum()),
        ))
        t_init = int(math.ceil(t_end))

    trace.final_model = w
    return trace


# ---- ground-station baselines ---- #


def _rf_contact(tl, sat: int, t: int):
    """(gateway, slant range) of the closest in-range gateway at second t.

    In-range means the ground arc is within the gateway's RF radius; the
    returned slant range is what the link rate is computed from."""
    best = None
    for gw in tl.gateways:
        d = gateway_distance(tl, sat, gw, t)
        if d <= gw.rf_range_km and (best is None or d < best[1]):
            best = (gw, d)
    if best is None:
        return None
    gw, _ = best
    return gw, gateway_slant_km(tl, sat, gw, t)


def _isl_path(tl, p, t: int, src: int, dst: int):
    """Shortest-hop relay path over ISL-feasible pairs at second t, with its
    store-and-forward latency per model transfer; None when unreachable."""
    n = tl.n_sats
    dist = pairwise_distances(tl, t)
    feasible = np.zeros((n, n), dtype=bool)
    for a in range(n):
        for b in range(n):
            if a != b and dist[a, b] > 0:
                feasible[a, b] = terminal_rate(p, dist[a, b]) >= p.min_rate_bps
    prev = {src: None}
    frontier = [src]
    while frontier and dst not in prev:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(feasible[u]):
                if int(v) not in prev:
                    prev[int(v)] = u
                    nxt.append(int(v))
        frontier = nxt
    if dst not in prev:
        return None
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return list(reversed(path))


def run_baseline(
    cfg: FedSpanConfig,
    kind: str,
    *,
    buffer_size: int = 4,
    poll_interval_s: float = 30.0,
    hold_back_s: float = 10.0,
    sink: int = 0,
    max_events: int = 100000,
) -> RunTrace:
    """Event-driven ground-gateway baselines sharing the Fed-Span trace schema.

    All kinds train continuously at each satellite's own pace. Delivery and
    aggregation differ:

    - async: every gateway arrival immediately folds into the global model;
    - buffered: arrivals accumulate; every ``buffer_size`` of them flush;
    - opportunistic: arrivals flush at fixed poll ticks (whatever is there);
    - sink_sync: models relay over ISLs to a sink satellite, which waits for
      all N, averages, and forwards the result through a gateway.

    A satellite that has uploaded waits for the aggregation covering it, then
    resumes from the fresh global model. Consecutive uploads from one
    satellite honor the hold-back gap. Trace rows carry one aggregation event
    each: latency_s is the transfer seconds attributable to the event and
    t_start its wall-clock completion time.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}")
    if not cfg.timeline.gateways:
        raise ValueError("baselines need at least one ground gateway")

    tl = cfg.timeline
    part = cfg.partition
    n = part.n_sats
    freq = cfg.cpu_freq if cfg.cpu_freq is not None else cfg.compute.f_max
    sizes = np.array([o.dataset_size for o in cfg.oracles], dtype=float)
    d_total = sizes.sum()
    e_c = np.asarray(cfg.cluster_steps, dtype=float)
    e_n = e_c[part.assignment]

    w_global = (np.zeros(cfg.dim) if cfg.init_model is None
                else np.asarray(cfg.init_model, dtype=float).copy())
    w_local = [w_global.copy() for _ in range(n)]
    batteries = [
        BatteryState(level_j=cfg.battery_init_j, cap_j=cfg.battery_cap_j)
        for _ in range(n)
    ]
    credited = [cfg.t_start] * n
    last_upload = [-math.inf] * n
    sgd_round = [0] * n

    rows: list[TraceRow] = []
    trace = RunTrace(rows=rows, rounds=[], final_model=w_global)
    cum_energy = 0.0
    pending_transfer = 0.0  # round-trip seconds since the last aggregation
    agg_count = 0
    buffer: list[tuple[int, np.ndarray]] = []
    sink_buffer: dict[int, np.ndarray] = {}

    def battery_min() -> float:
        return min(b.level_j for b in batteries)

    def settle(sat: int, t_boundary: float, tx_j: float, train_j: float) -> bool:
        t_int = min(int(math.floor(t_boundary)), tl.horizon)
        h = 0.0
        if t_int > credited[sat]:
            h = harvested_energy(tl, sat, credited[sat], t_int)
            credited[sat] = t_int
        state = batteries[sat]
        cost = tx_j + train_j
        if state.level_j + h > cost:
            level = min(state.level_j + h - cost, state.cap_j)
        else:
            level = min(state.level_j + h, state.cap_j)
        batteries[sat] = BatteryState(level_j=level, cap_j=state.cap_j)
        return state.level_j + h > cost

    # event queue: (time, seq, kind, satellite); seq keeps ordering stable
    events: list = []
    seq = 0

    def push(t: float, what: str, sat: int):
        nonlocal seq
        heapq.heappush(events, (t, seq, what, sat))
        seq += 1

    def start_training(sat: int, t: float):
        nonlocal cum_energy
        steps = int(e_n[sat])
        batch = math.ceil(cfg.batch_frac * sizes[sat])
        tau, energy = train_cost(cfg.compute, steps, batch, freq)
        if not settle(sat, t + tau, 0.0, energy):
            push(t + 60.0, "retry_train", sat)  # wait for harvest
            return
        cum_energy += energy
        rng = substream(cfg.seed, "bsgd", sat, sgd_round[sat])
        sgd_round[sat] += 1
        w_end, _ = local_sgd(cfg.oracles[sat], w_local[sat], steps,
                             cfg.batch_frac, cfg.eta(0), rng, t=t)
        w_local[sat] = w_end
        push(t + max(tau, 1e-6), "train_done", sat)

    def fold(entries) -> None:
        # partial-participation average: absent satellites keep their mass
        # on the current global model
        nonlocal w_global, agg_count
        alpha = 0.0
        blended = np.zeros_like(w_global)
        for sat, w_n in sorted(entries, key=lambda item: item[0]):
            share = sizes[sat] / d_total
            alpha += share
            blended = blended + share * w_n
        w_global = (1.0 - alpha) * w_global + blended
        agg_count += 1

    def record(t: float):
        nonlocal pending_transfer
        loss = global_loss(cfg.oracles, w_global, t)
        gnorm = float(np.linalg.norm(global_grad(cfg.oracles, w_global, t)))
        rows.append(TraceRow(agg_count - 1, 0, kind, t, pending_transfer,
                             cum_energy, loss, gnorm, battery_min()))
        pending_transfer = 0.0

    def release(flushed, t: float):
        # flushed satellites pick up the fresh global model and train again
        for sat in flushed:
            w_local[sat] = w_global.copy()
            push(t, "resume", sat)

    for sat in range(n):
        start_training(sat, float(cfg.t_start))
    if kind == "opportunistic":
        push(cfg.t_start + poll_interval_s, "poll", -1)

    horizon = float(tl.horizon)
    processed = 0
    while events and processed < max_events:
        t, _, what, sat = heapq.heappop(events)
        processed += 1
        if t > horizon:
            break

        if what in ("retry_train", "resume"):
            start_training(sat, t)

        elif what == "train_done" and kind == "sink_sync":
            if sat == sink:
                sink_buffer[sat] = w_local[sat].copy()
                push(t, "sink_check", sink)
                continue
            path = _isl_path(tl, cfg.link, min(int(t), tl.horizon), sat, sink)
            if path is None:
                push(t + 60.0, "train_done", sat)  # wait for geometry
                continue
            relay = 0.0
            for a, b in zip(path, path[1:]):
                d = sat_distance(tl, a, b, min(int(t), tl.horizon))
                hop_s = cfg.model_bits / terminal_rate(cfg.link, d)
                relay += hop_s
                settle(a, t + relay, cfg.tx_power_w * hop_s, 0.0)
            cum_energy += cfg.tx_power_w * relay
            pending_transfer += 2.0 * relay  # model out, refresh back
            push(t + relay, "sink_arrival", sat)

        elif what == "train_done":
            t_up = max(t, last_upload[sat] + hold_back_s)
            push(t_up, "try_upload", sat)

        elif what == "try_upload":
            contact = _rf_contact(tl, sat, min(int(t), tl.horizon))
            if contact is None:
                nxt = _next_contact(tl, sat, int(t) + 1)
                if nxt is None:
                    trace.aborted = (agg_count, kind,
                                     f"satellite {sat} never reaches a gateway")
                    trace.final_model = w_global
                    return trace
                push(float(nxt), "try_upload", sat)
                continue
            _, dist = contact
            up = cfg.model_bits / rf_rate(dist)
            settle(sat, t + up, RF_TX_POWER_W * up, 0.0)
            cum_energy += RF_TX_POWER_W * up
            pending_transfer += 2.0 * up
            last_upload[sat] = t
            buffer.append((sat, w_local[sat].copy()))
            arrive = t + up
            if kind == "async" or (kind == "buffered" and
                                   len(buffer) >= buffer_size):
                flush, buffer[:] = list(buffer), []
                fold(flush)
                record(arrive)
                release([s for s, _ in flush], arrive + up)

        elif what == "poll":
            if buffer:
                flush, buffer[:] = list(buffer), []
                fold(flush)
                record(t)
                release([s for s, _ in flush], t)
            push(t + poll_interval_s, "poll", -1)

        elif what == "sink_arrival":
            sink_buffer[sat] = w_local[sat].copy()
            push(t, "sink_check", sink)

        elif what == "sink_check" and len(sink_buffer) == n:
            t_up = max(t, last_upload[sink] + hold_back_s)
            contact = _rf_contact(tl, sink, min(int(t_up), tl.horizon))
            if contact is None:
                nxt = _next_contact(tl, sink, int(t_up) + 1)
                if nxt is None:
                    trace.aborted = (agg_count, kind,
                                     "sink never reaches a gateway")
                    trace.final_model = w_global
                    return trace
                push(float(nxt), "sink_check", sink)
                continue
            _, dist = contact
            up = cfg.model_bits / rf_rate(dist)
            settle(sink, t_up + up, RF_TX_POWER_W * up, 0.0)
            cum_energy += RF_TX_POWER_W * up
            pending_transfer += 2.0 * up
            last_upload[sink] = t_up
            fold(list(sink_buffer.items()))
            flushed = sorted(sink_buffer)
            sink_buffer.clear()
            record(t_up + up)
            release(flushed, t_up + up)

    trace.final_model = w_global
    return trace


def _next_contact(tl, sat: int, t_from: int):
    for t in range(max(0, t_from), tl.horizon + 1):
        for gw in tl.gateways:
            if gateway_distance(tl, sat, gw, t) <= gw.rf_range_km:
                return t
    return None


def transfer_loss_curve(trace: RunTrace) -> list[tuple[float, float]]:
    """(cumulative transfer seconds, loss) milestones of a run.

    For Fed-Span traces the per-round transfer totals come from the round
    stats; for baselines each aggregation row carries its own transfer cost.
    """
    curve = []
    cum = 0.0
    if trace.rounds:
        for s in trace.rounds:
            cum += s.transfer_s
            curve.append((cum, s.loss_end))
    else:
        for r in trace.rows:
            cum += r.latency_s
            curve.append((cum, r.loss))
    return curve


def latency_to_threshold(curve, threshold: float):
    """First cumulative transfer latency at which loss <= threshold."""
    for cum, loss in curve:
        if loss <= threshold:
            return cum
    return None
