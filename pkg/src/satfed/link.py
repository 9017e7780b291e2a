"""FSO link budgets, data rates, and connectivity-block-matrix validation.

A connectivity block matrix (CBM) records which laser terminals are wired to
which at one instant. Validation enforces the hard connectivity rules: no
self-links, one link per terminal, one link per satellite pair, and a minimum
data rate on every active link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .constellation import ConstellationTimeline, pairwise_distances, sat_distance

SPEED_OF_LIGHT_KMS = 299792.458

# Reference hardware values (link budget of a 1550 nm laser terminal).
DEFAULT_TX_POWER_W = 1.0
DEFAULT_OPT_EFF = 0.8
DEFAULT_WAVELENGTH_M = 1550e-9
DEFAULT_FAL_RAD = 15e-6          # full transmit divergence angle
DEFAULT_APERTURE_M = 80e-3       # receive aperture diameter
DEFAULT_BANDWIDTH_HZ = 2.2e9
DEFAULT_NOISE_POWER_W = 8e-8     # puts the 7 Gbps feasibility edge near 5000 km
DEFAULT_MIN_RATE_BPS = 7e9
DEFAULT_MODEL_MBYTES = 6.5

# RF fallback for satellite-to-gateway traffic: free-space Shannon rate at
# 2 GHz with 60 dB combined antenna gain and thermal noise over 100 MHz.
RF_TX_POWER_W = 10.0
RF_FREQ_HZ = 2.0e9
RF_BANDWIDTH_HZ = 100e6
RF_COMBINED_GAIN = 1e6
RF_NOISE_W = 1.38e-23 * 290.0 * RF_BANDWIDTH_HZ


@dataclass(frozen=True)
class LinkBudgetParams:
    """Laser-link budget: transmit/receive optics, bandwidth, noise floor,
    the admission threshold, and the model size carried per transfer."""

    tx_power_w: float = DEFAULT_TX_POWER_W
    rx_opt_eff: float = DEFAULT_OPT_EFF
    tx_opt_eff: float = DEFAULT_OPT_EFF
    rx_gain: float = (math.pi * DEFAULT_APERTURE_M / DEFAULT_WAVELENGTH_M) ** 2
    tx_gain: float = 16.0 / DEFAULT_FAL_RAD**2
    rx_point_loss: float = math.exp(-((math.pi * DEFAULT_APERTURE_M / DEFAULT_WAVELENGTH_M) ** 2) * 1e-12)
    tx_point_loss: float = math.exp(-(16.0 / DEFAULT_FAL_RAD**2) * 1e-12)
    wavelength_m: float = DEFAULT_WAVELENGTH_M
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ
    noise_power_w: float = DEFAULT_NOISE_POWER_W
    min_rate_bps: float = DEFAULT_MIN_RATE_BPS
    model_bits: float = DEFAULT_MODEL_MBYTES * 8e6

    def __post_init__(self):
        if self.wavelength_m <= 0 or self.bandwidth_hz <= 0 or self.noise_power_w <= 0:
            raise ValueError("wavelength, bandwidth, and noise power must be > 0")
        if self.min_rate_bps < 0 or self.tx_power_w < 0 or self.model_bits <= 0:
            raise ValueError("negative power/rate or non-positive model size")


def default_link_params(model_mbytes: float = DEFAULT_MODEL_MBYTES, **overrides) -> LinkBudgetParams:
    """Reference link budget with a chosen model size in megabytes."""
    return replace(LinkBudgetParams(), model_bits=model_mbytes * 8e6, **overrides)


def received_power(p: LinkBudgetParams, distance_km: float, radial_v_kms: float = 0.0) -> float:
    """Received optical power in watts over a ``distance_km`` laser path.

    The effective wavelength is Doppler-scaled to first order so that a
    receding transmitter (radial_v_kms > 0) is received strictly weaker.

    Raises:
        ValueError: distance_km <= 0.
    """
    if distance_km <= 0:
        raise ValueError(f"distance_km must be > 0, got {distance_km}")
    lam_eff = p.wavelength_m / (1.0 + radial_v_kms / SPEED_OF_LIGHT_KMS)
    path_loss = (lam_eff / (4.0 * math.pi * distance_km * 1e3)) ** 2
    return (
        p.tx_power_w
        * p.rx_opt_eff
        * p.tx_opt_eff
        * p.rx_gain
        * p.tx_gain
        * p.rx_point_loss
        * p.tx_point_loss
        * path_loss
    )


def terminal_rate(p: LinkBudgetParams, distance_km: float, radial_v_kms: float = 0.0) -> float:
    """Shannon rate (bits/s) of one terminal pair at the given range."""
    snr = received_power(p, distance_km, radial_v_kms) / p.noise_power_w
    return p.bandwidth_hz * math.log2(1.0 + snr)


def rf_rate(distance_km: float) -> float:
    """Shannon rate (bits/s) of the RF satellite-gateway fallback link."""
    if distance_km <= 0:
        raise ValueError(f"distance_km must be > 0, got {distance_km}")
    lam = SPEED_OF_LIGHT_KMS * 1e3 / RF_FREQ_HZ
    rx = RF_TX_POWER_W * RF_COMBINED_GAIN * (lam / (4.0 * math.pi * distance_km * 1e3)) ** 2
    return RF_BANDWIDTH_HZ * math.log2(1.0 + rx / RF_NOISE_W)


# ---- connectivity block matrix ---- #


@dataclass(frozen=True)
class CBM:
    """Active terminal wiring at one instant: directed entries
    (sat_n, term_m, sat_n', term_m') meaning terminal m of n transmits to
    terminal m' of n'."""

    n_sats: int
    terminals_per_sat: int
    t: int
    links: frozenset[tuple[int, int, int, int]]


def validate_cbm(
    cbm: CBM,
    rates: Mapping[tuple[int, int, int, int], float],
    min_rate_bps: float = DEFAULT_MIN_RATE_BPS,
) -> list[str]:
    """Check every connectivity rule; return a list of violations (empty = ok).

    Rules: hollow block diagonal (no self-links), terminal exclusivity (each
    terminal in at most one link counting both directions), pair exclusivity
    (at most one link per unordered satellite pair), and min-rate on every
    active link.

    Raises:
        ValueError: an active link is missing from the rate table.
    """
    violations: list[str] = []
    terminal_use: dict[tuple[int, int], int] = {}
    pair_use: dict[tuple[int, int], int] = {}
    for entry in sorted(cbm.links):
        n, m, n2, m2 = entry
        if not (0 <= n < cbm.n_sats and 0 <= n2 < cbm.n_sats):
            violations.append(f"link {entry}: satellite index out of range")
            continue
        if not (0 <= m < cbm.terminals_per_sat and 0 <= m2 < cbm.terminals_per_sat):
            violations.append(f"link {entry}: terminal index out of range")
            continue
        if n == n2:
            violations.append(f"link {entry}: self-link violates hollow block diagonal")
            continue
        terminal_use[(n, m)] = terminal_use.get((n, m), 0) + 1
        terminal_use[(n2, m2)] = terminal_use.get((n2, m2), 0) + 1
        pair = (min(n, n2), max(n, n2))
        pair_use[pair] = pair_use.get(pair, 0) + 1
        if entry not in rates:
            raise ValueError(f"rate table missing active link {entry}")
        if rates[entry] < min_rate_bps:
            violations.append(
                f"link {entry}: rate {rates[entry]:.3g} bps below minimum {min_rate_bps:.3g}"
            )
    for (n, m), count in sorted(terminal_use.items()):
        if count > 1:
            violations.append(f"terminal ({n},{m}) used by {count} links")
    for pair, count in sorted(pair_use.items()):
        if count > 1:
            violations.append(f"satellite pair {pair} carries {count} links")
    return violations


def satellite_rate(
    cbm: CBM, rates: Mapping[tuple[int, int, int, int], float]
) -> np.ndarray:
    """Aggregate per-satellite-pair rate matrix (bps): entry [n, n'] sums the
    rates of the active terminal pairs from n to n'.

    Raises:
        ValueError: an active link is missing from the rate table.
    """
    out = np.zeros((cbm.n_sats, cbm.n_sats))
    for entry in cbm.links:
        if entry not in rates:
            raise ValueError(f"rate table missing active link {entry}")
        n, _, n2, _ = entry
        out[n, n2] += rates[entry]
    return out


# ---- candidate generation ---- #


@dataclass(frozen=True)
class CandidateLink:
    """A terminal pair that could be activated at time t, with its rate."""

    sat_a: int
    term_a: int
    sat_b: int
    term_b: int
    rate_bps: float


def _bearing(lat_a, lon_a, lat_b, lon_b) -> float:
    """Initial great-circle bearing from a to b, in [0, 2*pi)."""
    dlon = lon_b - lon_a
    y = math.sin(dlon) * math.cos(lat_b)
    x = math.cos(lat_a) * math.sin(lat_b) - math.sin(lat_a) * math.cos(lat_b) * math.cos(dlon)
    return math.atan2(y, x) % (2.0 * math.pi)


def feasible_cbm_candidates(
    tl: ConstellationTimeline,
    p: LinkBudgetParams,
    t: int,
    max_links_per_sat: int,
    terminals_per_sat: int = 4,
    sector_model: bool = False,
) -> tuple[CandidateLink, ...]:
    """Enumerate the terminal pairs worth considering at second ``t``.

    A pair qualifies when its rate meets ``p.min_rate_bps`` and each endpoint
    ranks the other among its top ``max_links_per_sat`` neighbors by rate
    (capped by the terminal count). Terminals are assigned by rate rank, or by
    azimuth sector when ``sector_model`` is set. Both orderings of each
    retained pair are emitted.
    """
    n = tl.n_sats
    budget = min(max_links_per_sat, terminals_per_sat)
    dist = pairwise_distances(tl, t)
    rate = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] <= 0:
                continue
            if t + 1 <= tl.horizon:
                v_r = sat_distance(tl, i, j, t + 1) - dist[i, j]
            else:
                v_r = 0.0
            r = terminal_rate(p, dist[i, j], v_r)
            if r >= p.min_rate_bps:
                rate[i, j] = rate[j, i] = r

    # Each satellite keeps its top-rate neighbors within the terminal budget.
    keep: list[list[int]] = []
    for i in range(n):
        neighbors = [j for j in range(n) if rate[i, j] > 0]
        neighbors.sort(key=lambda j: (-rate[i, j], j))
        keep.append(neighbors[:budget])

    def terminal_of(i: int, j: int) -> int:
        if sector_model:
            sector = 2.0 * math.pi / terminals_per_sat
            az = _bearing(tl.lat[i, t], tl.lon[i, t], tl.lat[j, t], tl.lon[j, t])
            return int(az // sector) % terminals_per_sat
        return keep[i].index(j)

    out = []
    for i in range(n):
        for j in keep[i]:
            if i not in keep[j]:
                continue
            out.append(
                CandidateLink(
                    sat_a=i,
                    term_a=terminal_of(i, j),
                    sat_b=j,
                    term_b=terminal_of(j, i),
                    rate_bps=rate[i, j],
                )
            )
    return tuple(out)
