"""Per-global-round scheduling: TTI grid, local-round placement, phase times.

A global round opens with the global dispatch window, then a fixed local-work
budget tau_loc sliced into equal transmission time intervals (TTIs). Every
local round except the last occupies exactly one TTI (train, aggregate up the
local forest, dispatch back down); the final local round trains and goes
straight into global aggregation at t_ga.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CapacityError(ValueError):
    """The requested local rounds do not fit the TTI grid."""


class DeadlineError(RuntimeError):
    """A realized phase latency exceeded its hard cap."""


@dataclass(frozen=True)
class PhaseCaps:
    """Hard per-phase latency caps (seconds) and the local-work budget.

    tau_tti must fit a full local cycle (train + local aggregation + local
    dispatch); violating that is a configuration error.
    """

    tau_gd_max: float = 1.0
    tau_lt_max: float = 1.0
    tau_la_max: float = 1.0
    tau_ld_max: float = 1.0
    tau_ga_max: float = 1.0
    tau_tti: float = 3.0
    tau_loc: float = 6.0

    def __post_init__(self):
        caps = (self.tau_gd_max, self.tau_lt_max, self.tau_la_max,
                self.tau_ld_max, self.tau_ga_max, self.tau_tti, self.tau_loc)
        if any(c <= 0 for c in caps):
            raise ValueError("all phase caps must be > 0")
        cycle = self.tau_lt_max + self.tau_la_max + self.tau_ld_max
        if self.tau_tti < cycle - 1e-12:
            raise ValueError(
                f"tau_tti={self.tau_tti} cannot fit one local cycle ({cycle} s)"
            )

    @property
    def cycle(self) -> float:
        return self.tau_lt_max + self.tau_la_max + self.tau_ld_max


def default_caps(l_max: int, **overrides) -> PhaseCaps:
    """Caps with tau_tti = one local cycle and tau_loc sized for 2*(l_max-1)
    TTIs (at least one), giving the scheduler slack."""
    base = PhaseCaps(**{k: v for k, v in overrides.items()
                        if k not in ("tau_tti", "tau_loc")})
    tti = overrides.get("tau_tti", base.cycle)
    loc = overrides.get("tau_loc", max(2 * (l_max - 1), 1) * tti)
    return PhaseCaps(**{**overrides, "tau_tti": tti, "tau_loc": loc})


@dataclass(frozen=True, eq=False)
class TTIGrid:
    """Equally spaced TTI start times inside one round's local-work window."""

    x: int
    starts: np.ndarray
    t0: float       # start of the local window: t_init + tau_gd_max
    tau_tti: float
    tau_loc: float

    def __post_init__(self):
        object.__setattr__(self, "starts", np.asarray(self.starts, dtype=float))


def make_tti_grid(
    t_init: float, tau_gd_max: float, tau_loc: float, tau_tti: float
) -> TTIGrid:
    """Slice the local window into X = floor(tau_loc / tau_tti) TTIs starting
    at t_init + tau_gd_max.

    Raises:
        ValueError: tau_tti <= 0.
    """
    if tau_tti <= 0:
        raise ValueError(f"tau_tti must be > 0, got {tau_tti}")
    x = int(math.floor(tau_loc / tau_tti))
    t0 = t_init + tau_gd_max
    starts = t0 + tau_tti * np.arange(x)
    return TTIGrid(x=x, starts=starts, t0=t0, tau_tti=tau_tti, tau_loc=tau_loc)


@dataclass(frozen=True, eq=False)
class RoundPlan:
    """One global round's schedule.

    t_lt has one entry per local round (the final round trains right after
    the last local dispatch); t_la/t_ld cover rounds 1..L-1 only, because the
    final round feeds global aggregation directly at t_ga.
    """

    k: int
    t_init: float
    L: int
    tti_indices: tuple[int, ...]
    caps: PhaseCaps
    t_gd: float
    t_lt: tuple[float, ...]
    t_la: tuple[float, ...]
    t_ld: tuple[float, ...]
    t_ga: float
    sgd_counts: tuple[int, ...] | None = None
    minibatch_frac: float = 1.0
    cpu_freq: float | None = None

    def lambda_matrix(self, x: int) -> np.ndarray:
        """Binary (L-1, X) TTI assignment."""
        lam = np.zeros((self.L - 1, x), dtype=int)
        for ell, idx in enumerate(self.tti_indices):
            lam[ell, idx] = 1
        return lam


def plan_round(
    grid: TTIGrid,
    caps: PhaseCaps,
    L: int,
    policy: str = "even",
    *,
    k: int = 0,
    sgd_counts: tuple[int, ...] | None = None,
    minibatch_frac: float = 1.0,
    cpu_freq: float | None = None,
) -> RoundPlan:
    """Assign local rounds 1..L-1 to TTIs and fix every phase start time.

    Policies: "even" places the L-1 rounds evenly across the grid (earliest
    representative of each stretch); "earliest" packs them into the first
    L-1 TTIs.

    Raises:
        CapacityError: L-1 rounds exceed the grid, or training for the final
            round cannot finish before global aggregation.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if L - 1 > grid.x:
        raise CapacityError(f"{L - 1} local rounds need TTIs, grid has {grid.x}")
    if policy == "even":
        indices = tuple(int(i * grid.x // (L - 1)) for i in range(L - 1)) if L > 1 else ()
    elif policy == "earliest":
        indices = tuple(range(L - 1))
    else:
        raise ValueError(f"unknown policy {policy!r}")

    t_lt, t_la, t_ld = [], [], []
    for ell in range(L - 1):
        start = float(grid.starts[indices[ell]])
        t_lt.append(start)
        t_la.append(start + caps.tau_lt_max)
        t_ld.append(start + caps.tau_lt_max + caps.tau_la_max)
    # final local round trains immediately after the last dispatch (or right
    # after global dispatch when L == 1)
    t_lt.append(t_ld[-1] + caps.tau_ld_max if L > 1 else grid.t0)
    t_ga = grid.t0 + grid.tau_loc
    if t_lt[-1] + caps.tau_lt_max > t_ga + 1e-9:
        raise CapacityError(
            f"final training at t={t_lt[-1]:g} cannot finish by t_ga={t_ga:g}"
        )
    return RoundPlan(
        k=k,
        t_init=grid.t0 - caps.tau_gd_max,
        L=L,
        tti_indices=indices,
        caps=caps,
        t_gd=grid.t0 - caps.tau_gd_max,
        t_lt=tuple(t_lt),
        t_la=tuple(t_la),
        t_ld=tuple(t_ld),
        t_ga=t_ga,
        sgd_counts=sgd_counts,
        minibatch_frac=minibatch_frac,
        cpu_freq=cpu_freq,
    )


def idle_times(plan: RoundPlan, realized_train_latency) -> tuple[np.ndarray, float]:
    """Grace periods: cap minus realized training latency, per local round.

    Raises:
        DeadlineError: any realized latency exceeds the training cap.
    """
    realized = np.asarray(realized_train_latency, dtype=float)
    if len(realized) != plan.L:
        raise ValueError(f"expected {plan.L} latencies, got {len(realized)}")
    over = np.flatnonzero(realized > plan.caps.tau_lt_max + 1e-12)
    if len(over):
        raise DeadlineError(
            f"training latency exceeded cap {plan.caps.tau_lt_max} s at local "
            f"rounds {[int(i) + 1 for i in over]}: {realized[over]}"
        )
    omega = plan.caps.tau_lt_max - realized
    return omega, float(omega.sum())
