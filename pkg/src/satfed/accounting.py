"""Latency recursions, phase energies, compute cost, and battery dynamics.

Dispatch (downward) latency accumulates along root-to-leaf paths; aggregation
(upward) latency is the longest weighted leaf-to-root path, because a parent
must wait for its slowest child. Energies are simple per-edge sums since
transmissions within a phase overlap in time but not in power draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .graph import DirectedForest

DEFAULT_CYCLES_PER_POINT = 1360.0
DEFAULT_CHIPSET_CAP = 2e-27
DEFAULT_F_MAX = 2.3e9
DEFAULT_BATTERY_CAP_J = 500.0


class InfeasibleEdgeError(ValueError):
    """A forest edge has no positive rate, so its transfer never completes."""


@dataclass(frozen=True)
class ComputeParams:
    """Per-satellite compute model: CPU cycles per data point, effective
    chipset capacitance, and the frequency ceiling."""

    cycles_per_point: float = DEFAULT_CYCLES_PER_POINT
    chipset_cap: float = DEFAULT_CHIPSET_CAP
    f_max: float = DEFAULT_F_MAX

    def __post_init__(self):
        if min(self.cycles_per_point, self.chipset_cap, self.f_max) <= 0:
            raise ValueError("compute parameters must all be > 0")


@dataclass(frozen=True, eq=False)
class LatencyReport:
    """Per-node arrival times, per-edge transfer times, and the phase total."""

    arrivals: np.ndarray
    total: float
    per_edge: dict


def _hop_times(forest: DirectedForest, rates: np.ndarray, model_bits: float) -> dict:
    hops = {}
    for u, v in forest.edges():
        rate = float(rates[u, v])
        if rate <= 0:
            raise InfeasibleEdgeError(f"forest edge {u}->{v} has rate {rate}")
        hops[(u, v)] = model_bits / rate
    return hops


def dispatch_latency(
    forest: DirectedForest, rates: np.ndarray, model_bits: float
) -> LatencyReport:
    """Arrival times for a downward (dispatch) forest.

    Each node receives at its parent's arrival time plus the edge transfer
    time; roots are at 0; the phase total is the latest arrival.

    Raises:
        ValueError: wrong direction.
        InfeasibleEdgeError: an edge with non-positive rate.
    """
    if forest.direction != "downward":
        raise ValueError("dispatch_latency expects a downward forest")
    hops = _hop_times(forest, rates, model_bits)
    arrivals = np.zeros(forest.n)
    frontier = [int(r) for r in np.flatnonzero(forest.roots)]
    while frontier:
        u = frontier.pop()
        for v in np.flatnonzero(forest.adj[u]):
            arrivals[v] = arrivals[u] + hops[(u, int(v))]
            frontier.append(int(v))
    return LatencyReport(arrivals=arrivals, total=float(arrivals.max(initial=0.0)),
                         per_edge=hops)


def aggregation_latency(
    forest: DirectedForest, rates: np.ndarray, model_bits: float
) -> LatencyReport:
    """Arrival times for an upward (aggregation) forest.

    A node forwards once all children have arrived, so its own arrival is the
    max over children of (child arrival + hop time); leaves are at 0. The
    total is the latest root arrival (a single root's arrival for a global
    tree).

    Raises:
        ValueError: wrong direction.
        InfeasibleEdgeError: an edge with non-positive rate.
    """
    if forest.direction != "upward":
        raise ValueError("aggregation_latency expects an upward forest")
    hops = _hop_times(forest, rates, model_bits)
    arrivals = np.zeros(forest.n)
    children = {n: [] for n in range(forest.n)}
    for u, v in forest.edges():
        children[v].append(u)
    out_degree = forest.adj.sum(axis=1)
    pending = {n: len(children[n]) for n in range(forest.n)}
    ready = [n for n in range(forest.n) if pending[n] == 0]
    while ready:
        v = ready.pop()
        if children[v]:
            arrivals[v] = max(arrivals[u] + hops[(u, v)] for u in children[v])
        if out_degree[v]:
            parent = int(np.flatnonzero(forest.adj[v])[0])
            pending[parent] -= 1
            if pending[parent] == 0:
                ready.append(parent)
    roots = np.flatnonzero(forest.roots)
    total = float(arrivals[roots].max(initial=0.0))
    return LatencyReport(arrivals=arrivals, total=total, per_edge=hops)


def phase_energy(
    forest: DirectedForest,
    rates: np.ndarray,
    model_bits: float,
    tx_powers,
) -> float:
    """Total transmit energy (J) of one phase: per-edge transfer time times
    the sender's transmit power, summed over the forest."""
    powers = np.broadcast_to(np.asarray(tx_powers, dtype=float), (forest.n,))
    hops = _hop_times(forest, rates, model_bits)
    return float(sum(dt * powers[u] for (u, _), dt in hops.items()))


def train_cost(
    params: ComputeParams, e_n: int, minibatch_size: float, f: float
) -> tuple[float, float]:
    """Latency and energy of e_n local SGD steps over a minibatch.

    tau = e * cycles_per_point * batch / f; energy = (capacitance/2) f^3 tau.

    Raises:
        ValueError: f outside (0, f_max] (with e_n > 0).
    """
    if e_n == 0:
        return 0.0, 0.0
    if not 0 < f <= params.f_max:
        raise ValueError(f"f={f:g} outside (0, {params.f_max:g}]")
    tau = e_n * params.cycles_per_point * minibatch_size / f
    energy = 0.5 * params.chipset_cap * f**3 * tau
    return tau, energy


@dataclass(frozen=True)
class BatteryState:
    """Battery level and capacity in joules."""

    level_j: float
    cap_j: float = DEFAULT_BATTERY_CAP_J

    def __post_init__(self):
        if not 0 <= self.level_j <= self.cap_j:
            raise ValueError(
                f"battery level {self.level_j} outside [0, {self.cap_j}]"
            )


def battery_step(
    state: BatteryState,
    harvest_j: float,
    tx_energy_j: float,
    compute_energy_j: float,
) -> tuple[BatteryState, bool]:
    """Advance the battery one round: add harvest, subtract consumption, cap
    at capacity.

    Returns the new state and a feasibility flag: the round was affordable iff
    level + harvest strictly exceeds consumption. On an infeasible step the
    returned level is floored at 0; the caller decides whether to skip the
    work or abort.
    """
    consumption = tx_energy_j + compute_energy_j
    feasible = state.level_j + harvest_j > consumption
    level = min(state.level_j - consumption + harvest_j, state.cap_j)
    return BatteryState(level_j=max(0.0, level), cap_j=state.cap_j), feasible


def write_ledger(path, rows) -> None:
    """Write per-phase accounting rows as CSV:
    k,phase,latency_s,energy_j,battery_min_j."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "phase", "latency_s", "energy_j", "battery_min_j"])
        for row in rows:
            writer.writerow(row)
