"""Satellite trajectory ingestion, synthesis, and geometric queries.

Trajectories are resampled to a uniform 1-second grid over the simulation
horizon; all downstream geometry (distances, radial velocities, harvest
windows) reads from that grid. Positions are stored with the longitude
unwrapped so interpolation never takes the long way around the antimeridian.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
SECONDS_PER_DAY = 86400
DEFAULT_ALTITUDE_KM = 500.0
DEFAULT_SPEED_KMS = 7.8
DEFAULT_SOLAR_POWER_W = 15.0
MAX_SAMPLE_GAP_S = 60


class TimelineParseError(ValueError):
    """A trajectory or gateway file failed to parse."""


class CoverageError(ValueError):
    """A satellite's samples do not cover the simulation horizon."""


def wrap_longitude(lon: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(lon, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class GroundGateway:
    """A terrestrial gateway reachable over RF within ``rf_range_km``."""

    id: int
    lat: float
    lon: float
    rf_range_km: float

    def __post_init__(self):
        if self.rf_range_km <= 0:
            raise ValueError(f"gateway {self.id}: rf_range_km must be > 0")


@dataclass(frozen=True)
class ConstellationTimeline:
    """Uniformly sampled satellite positions over [0, horizon].

    ``lat``/``lon`` are (n_sats, horizon+1) arrays in radians, one column per
    integer second; ``lon`` is unwrapped. ``harvest(sat, t)`` gives the solar
    power absorbed at second ``t`` in J/s.
    """

    n_sats: int
    horizon: int
    altitude_km: float
    earth_radius_km: float
    lat: np.ndarray
    lon: np.ndarray
    harvest: Callable[[int, int], float]
    gateways: tuple[GroundGateway, ...] = ()

    @property
    def shell_radius_km(self) -> float:
        """Orbital shell radius R_earth + h, the sphere all geometry lives on."""
        return self.earth_radius_km + self.altitude_km

    def _check_time(self, t: int) -> int:
        t = int(t)
        if not 0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside horizon [0, {self.horizon}]")
        return t


def _day_night_harvest(
    lon: np.ndarray,
    solar_power_w: float,
    subsolar_lon0: float,
) -> Callable[[int, int], float]:
    """Binary day/night model: full power when within a quarter turn of the
    sub-solar longitude (which drifts westward one revolution per day)."""

    def harvest(sat: int, t: int) -> float:
        subsolar = subsolar_lon0 - 2.0 * math.pi * (t % SECONDS_PER_DAY) / SECONDS_PER_DAY
        offset = wrap_longitude(lon[sat, t] - subsolar)
        return solar_power_w if abs(offset) <= math.pi / 2 else 0.0

    return harvest


def timeline_from_arrays(
    lat: np.ndarray,
    lon: np.ndarray,
    *,
    altitude_km: float = DEFAULT_ALTITUDE_KM,
    earth_radius_km: float = EARTH_RADIUS_KM,
    harvest: Callable[[int, int], float] | None = None,
    solar_power_w: float = DEFAULT_SOLAR_POWER_W,
    subsolar_lon0: float = 0.0,
    gateways: Sequence[GroundGateway] = (),
) -> ConstellationTimeline:
    """Assemble a timeline from per-second position arrays.

    Args:
        lat: (n_sats, horizon+1) latitudes in radians.
        lon: (n_sats, horizon+1) longitudes in radians (unwrapped or not).
        harvest: optional (sat, t) -> J/s override; defaults to the binary
            day/night model at ``solar_power_w``.

    Returns:
        An immutable ConstellationTimeline with horizon = columns - 1.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.unwrap(np.asarray(lon, dtype=float), axis=1)
    if lat.shape != lon.shape or lat.ndim != 2:
        raise ValueError("lat and lon must be matching 2-D arrays")
    if lat.shape[1] < 2:
        raise ValueError("need at least two samples per satellite")
    n_sats, n_cols = lat.shape
    if harvest is None:
        harvest = _day_night_harvest(lon, solar_power_w, subsolar_lon0)
    return ConstellationTimeline(
        n_sats=n_sats,
        horizon=n_cols - 1,
        altitude_km=altitude_km,
        earth_radius_km=earth_radius_km,
        lat=lat,
        lon=lon,
        harvest=harvest,
        gateways=tuple(gateways),
    )


def load_timeline(
    path,
    horizon: int,
    *,
    altitude_km: float = DEFAULT_ALTITUDE_KM,
    earth_radius_km: float = EARTH_RADIUS_KM,
    harvest: Callable[[int, int], float] | None = None,
    solar_power_w: float = DEFAULT_SOLAR_POWER_W,
    gateways: Sequence[GroundGateway] = (),
) -> ConstellationTimeline:
    """Load a trajectory CSV (`t,sat_id,lat_deg,lon_deg`) onto the 1-s grid.

    Rows are interpolated linearly in (lat, unwrapped lon). Satellite ids must
    be 0..N-1; every satellite's samples must span [0, horizon] with no gap
    longer than 60 s.

    Raises:
        TimelineParseError: malformed row (reported with its line number).
        CoverageError: a satellite is missing, starts late, ends early, or has
            a sample gap exceeding 60 s.
    """
    rows: dict[int, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "t":
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise TimelineParseError(
                    f"{path}: line {lineno}: expected 4 fields, got {len(row)}"
                )
            try:
                t = float(row[0])
                sat = int(row[1])
                lat_deg = float(row[2])
                lon_deg = float(row[3])
            except ValueError as exc:
                raise TimelineParseError(f"{path}: line {lineno}: {exc}") from None
            rows.setdefault(sat, []).append(
                (t, math.radians(lat_deg), math.radians(lon_deg))
            )
    if not rows:
        raise TimelineParseError(f"{path}: no data rows")

    n_sats = max(rows) + 1
    grid = np.arange(horizon + 1, dtype=float)
    lat = np.empty((n_sats, horizon + 1))
    lon = np.empty((n_sats, horizon + 1))
    for sat in range(n_sats):
        if sat not in rows:
            raise CoverageError(f"satellite {sat} has no samples")
        samples = sorted(rows[sat])
        ts = np.array([s[0] for s in samples])
        if len(ts) > 1 and (np.diff(ts) <= 0).any():
            raise TimelineParseError(f"{path}: satellite {sat}: non-increasing t")
        if ts[0] > 0 or ts[-1] < horizon:
            raise CoverageError(
                f"satellite {sat}: samples span [{ts[0]:g}, {ts[-1]:g}], "
                f"horizon needs [0, {horizon}]"
            )
        gaps = np.diff(ts)
        if len(gaps) and gaps.max() > MAX_SAMPLE_GAP_S:
            raise CoverageError(
                f"satellite {sat}: sample gap {gaps.max():g} s exceeds "
                f"{MAX_SAMPLE_GAP_S} s"
            )
        lat[sat] = np.interp(grid, ts, [s[1] for s in samples])
        lon[sat] = np.interp(grid, ts, np.unwrap([s[2] for s in samples]))
    return timeline_from_arrays(
        lat,
        lon,
        altitude_km=altitude_km,
        earth_radius_km=earth_radius_km,
        harvest=harvest,
        solar_power_w=solar_power_w,
        gateways=gateways,
    )


def synthetic_timeline(
    n_sats: int,
    horizon: int,
    *,
    altitude_km: float = DEFAULT_ALTITUDE_KM,
    speed_kms: float = DEFAULT_SPEED_KMS,
    inclination: float = math.radians(53.0),
    n_planes: int = 1,
    earth_rotation: bool = True,
    earth_radius_km: float = EARTH_RADIUS_KM,
    harvest: Callable[[int, int], float] | None = None,
    solar_power_w: float = DEFAULT_SOLAR_POWER_W,
    gateways: Sequence[GroundGateway] = (),
) -> ConstellationTimeline:
    """Generate circular-orbit ground tracks (no external files needed).

    Satellites are spread over ``n_planes`` equally spaced ascending nodes,
    with in-plane phases evenly spaced. The orbital rate follows from the
    tangential speed at shell radius R_earth + h.
    """
    shell_r = earth_radius_km + altitude_km
    omega_orb = speed_kms / shell_r
    omega_earth = 2.0 * math.pi / SECONDS_PER_DAY if earth_rotation else 0.0
    t = np.arange(horizon + 1, dtype=float)
    lat = np.empty((n_sats, horizon + 1))
    lon = np.empty((n_sats, horizon + 1))
    per_plane = max(1, math.ceil(n_sats / n_planes))
    for sat in range(n_sats):
        plane, slot = divmod(sat, per_plane)
        raan = 2.0 * math.pi * plane / n_planes
        phase = 2.0 * math.pi * slot / per_plane
        theta = phase + omega_orb * t
        lat[sat] = np.arcsin(np.sin(inclination) * np.sin(theta))
        lon[sat] = (
            raan
            + np.arctan2(np.cos(inclination) * np.sin(theta), np.cos(theta))
            - omega_earth * t
        )
    return timeline_from_arrays(
        lat,
        lon,
        altitude_km=altitude_km,
        earth_radius_km=earth_radius_km,
        harvest=harvest,
        solar_power_w=solar_power_w,
        gateways=gateways,
    )


def static_timeline(
    positions: Sequence[tuple[float, float]],
    horizon: int,
    **kwargs,
) -> ConstellationTimeline:
    """Timeline in which every satellite sits still at (lat, lon) radians."""
    pos = np.asarray(positions, dtype=float)
    lat = np.repeat(pos[:, :1], horizon + 1, axis=1)
    lon = np.repeat(pos[:, 1:2], horizon + 1, axis=1)
    return timeline_from_arrays(lat, lon, **kwargs)


# ---- geometric queries ---- #


def position_at(tl: ConstellationTimeline, sat: int, t: int) -> tuple[float, float]:
    """Position of ``sat`` at integer second ``t`` as (lat, lon) radians.

    Raises:
        ValueError: t outside [0, horizon].
    """
    t = tl._check_time(t)
    return float(tl.lat[sat, t]), wrap_longitude(float(tl.lon[sat, t]))


def haversine_distance(
    a: tuple[float, float], b: tuple[float, float], r_eff_km: float
) -> float:
    """Great-circle distance between (lat, lon) points on a sphere of radius
    ``r_eff_km`` (for inter-satellite geometry: R_earth + h)."""
    lat_a, lon_a = a
    lat_b, lon_b = b
    half = (
        math.sin((lat_b - lat_a) / 2.0) ** 2
        + math.cos(lat_a) * math.cos(lat_b) * math.sin((lon_b - lon_a) / 2.0) ** 2
    )
    return 2.0 * r_eff_km * math.atan2(math.sqrt(half), math.sqrt(1.0 - half))


def sat_distance(tl: ConstellationTimeline, a: int, b: int, t: int) -> float:
    """Inter-satellite great-circle distance (km) at second ``t``."""
    t = tl._check_time(t)
    return haversine_distance(
        (tl.lat[a, t], tl.lon[a, t]), (tl.lat[b, t], tl.lon[b, t]), tl.shell_radius_km
    )


def pairwise_distances(tl: ConstellationTimeline, t: int) -> np.ndarray:
    """All inter-satellite distances at second ``t`` as an (N, N) km matrix."""
    t = tl._check_time(t)
    lat = tl.lat[:, t]
    lon = tl.lon[:, t]
    half = (
        np.sin((lat[:, None] - lat[None, :]) / 2.0) ** 2
        + np.cos(lat[:, None])
        * np.cos(lat[None, :])
        * np.sin((lon[:, None] - lon[None, :]) / 2.0) ** 2
    )
    half = np.clip(half, 0.0, 1.0)
    return 2.0 * tl.shell_radius_km * np.arctan2(np.sqrt(half), np.sqrt(1.0 - half))


def radial_velocity(tl: ConstellationTimeline, sat_a: int, sat_b: int, t: int) -> float:
    """Finite-difference range rate (km/s) between two satellites at ``t``;
    positive when receding.

    Raises:
        ValueError: t or t+1 outside [0, horizon].
    """
    t = tl._check_time(t)
    tl._check_time(t + 1)
    return sat_distance(tl, sat_a, sat_b, t + 1) - sat_distance(tl, sat_a, sat_b, t)


def gateway_distance(
    tl: ConstellationTimeline, sat: int, gw: GroundGateway, t: int
) -> float:
    """Ground distance (km) from a satellite's sub-point to a gateway,
    measured along the orbital shell (consistent with inter-satellite ranges)."""
    t = tl._check_time(t)
    return haversine_distance(
        (tl.lat[sat, t], tl.lon[sat, t]), (gw.lat, gw.lon), tl.shell_radius_km
    )


def gateway_slant_km(
    tl: ConstellationTimeline, sat: int, gw: GroundGateway, t: int
) -> float:
    """Line-of-sight range (km) from a ground gateway to a satellite.

    Law of cosines between the gateway on the Earth sphere and the satellite
    on the shell; a satellite directly overhead is exactly one altitude away,
    so this is the distance an RF link actually covers."""
    t = tl._check_time(t)
    arc = haversine_distance(
        (tl.lat[sat, t], tl.lon[sat, t]), (gw.lat, gw.lon), 1.0
    )  # central angle in radians (unit sphere)
    r_e, r_s = tl.earth_radius_km, tl.shell_radius_km
    return math.sqrt(r_e**2 + r_s**2 - 2.0 * r_e * r_s * math.cos(arc))


def harvested_energy(tl: ConstellationTimeline, sat: int, t0: int, t1: int) -> float:
    """Solar energy (J) absorbed over the half-open window [t0, t1).

    A degenerate window t0 == t1 returns the single sample at t0.

    Raises:
        ValueError: t0 > t1, or window outside the horizon.
    """
    t0 = tl._check_time(t0)
    if t0 > t1:
        raise ValueError(f"t0={t0} > t1={t1}")
    if t0 == t1:
        return float(tl.harvest(sat, t0))
    tl._check_time(t1 - 1)
    return float(sum(tl.harvest(sat, t) for t in range(t0, t1)))


# ---- gateways ---- #


def load_gateways(path) -> tuple[GroundGateway, ...]:
    """Load a gateway CSV (`id,lat_deg,lon_deg,rf_range_km`)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "id":
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise TimelineParseError(
                    f"{path}: line {lineno}: expected 4 fields, got {len(row)}"
                )
            try:
                out.append(
                    GroundGateway(
                        id=int(row[0]),
                        lat=math.radians(float(row[1])),
                        lon=math.radians(float(row[2])),
                        rf_range_km=float(row[3]),
                    )
                )
            except ValueError as exc:
                raise TimelineParseError(f"{path}: line {lineno}: {exc}") from None
    return tuple(out)


def uniform_gateways(
    count: int, rf_range_km: float, rng: np.random.Generator
) -> tuple[GroundGateway, ...]:
    """Gateways distributed uniformly over the sphere."""
    u = rng.random(count)
    v = rng.random(count)
    return tuple(
        GroundGateway(
            id=i,
            lat=math.asin(2.0 * u[i] - 1.0),
            lon=2.0 * math.pi * v[i] - math.pi,
            rf_range_km=rf_range_km,
        )
        for i in range(count)
    )
