"""Convergence-rate guarantees: step-size caps, the general per-round bound,
and its O(1/sqrt(K)) specialization.

The general bound on (1/K) sum_k E||grad F(w_k)||^2 decomposes into five
terms: (a) initial-loss gap, (b) idle-time model drift, (c) mini-batch
sampling noise through the aggregation weights, (d) gradient dissimilarity
across and inside clusters, and (e) sampling noise amplified by the local
iteration structure. Everything here is plain evaluation of those closed
forms; constants that are formally suprema over all models (smoothness, data
variability, dissimilarity) can be *estimated* by sampling, and are then
reported as estimates, never as certified suprema.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import VCPartition
from .rng import substream

__all__ = [
    "BoundParams",
    "BoundReport",
    "RoundInputs",
    "corollary_bound",
    "corollary_step_size",
    "estimate_params",
    "general_bound",
    "minibatch_noise",
    "rounds_from_run",
    "step_size_cap",
]


@dataclass(frozen=True)
class BoundParams:
    """Constants of the convergence analysis.

    The first block is used by the general bound; the "caps" block configures
    the O(1/sqrt(K)) specialization and may be left unset (None) when only
    the general bound is needed. chi couples the admissible per-round drift
    to idle time (drift <= chi / (K * idle)); it has no operational recipe
    and is exposed purely as configuration.
    """

    beta: float  # smoothness of every local loss
    theta: float = 0.0  # data variability: per-datum gradient Lipschitz const
    sigma_n: tuple = ()  # per-satellite feature spread (RMS about the mean)
    lambda_max: float = 0.9  # step-condition constant, strictly below 1
    phi_min: float | None = None  # bounds on eta_k/2 * sum_c D_c L e_c / D
    phi_max: float | None = None
    delta_k: object = 0.0  # per-round model drift, scalar or one per round
    zeta_loc_hat: float = 1.0  # worst intra-cluster dissimilarity, >= 1
    zeta_glob1: float = 1.0  # inter-cluster dissimilarity slope, >= 1
    zeta_glob2: float = 0.0  # inter-cluster dissimilarity offset, >= 0
    e_max_k: float | None = None  # optional cap on per-cluster SGD counts
    chi: float = 0.0
    # -- caps for the 1/sqrt(K) corollary --
    ell_min: float | None = None  # bounds on local rounds L^(k)
    ell_max: float | None = None
    ebar_min: float | None = None  # bounds on data-weighted mean SGD count
    ebar_max: float | None = None
    ehat_min: float | None = None  # bounds on total SGD per local round
    ehat_max: float | None = None
    e_max: float | None = None  # bound on the largest per-cluster SGD count
    sigma_max: float | None = None  # bound on per-satellite sampling noise
    alpha: float | None = None  # step constant in eta = alpha/sqrt(...)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"smoothness must be > 0, got {self.beta}")
        if self.theta < 0:
            raise ValueError(f"data variability must be >= 0, got {self.theta}")
        if not 0.0 < self.lambda_max < 1.0:
            raise ValueError(f"lambda_max must be in (0, 1), got {self.lambda_max}")
        if self.zeta_loc_hat < 1.0 or self.zeta_glob1 < 1.0:
            raise ValueError("dissimilarity slopes zeta must be >= 1")
        if self.zeta_glob2 < 0.0:
            raise ValueError("zeta_glob2 must be >= 0")
        if (self.phi_min is not None and self.phi_max is not None
                and self.phi_min > self.phi_max):
            raise ValueError("phi_min must not exceed phi_max")

    def corollary_caps(self) -> dict:
        caps = {
            "ell_min": self.ell_min, "ell_max": self.ell_max,
            "ebar_min": self.ebar_min, "ebar_max": self.ebar_max,
            "ehat_min": self.ehat_min, "ehat_max": self.ehat_max,
            "e_max": self.e_max, "sigma_max": self.sigma_max,
            "alpha": self.alpha,
        }
        missing = sorted(k for k, v in caps.items() if v is None)
        if missing:
            raise ValueError(f"corollary caps not configured: {missing}")
        return caps


def step_size_cap(p: BoundParams, local_rounds: int, e_max: float,
                  lambda_k: float, weighted_steps: float) -> float:
    """Largest admissible SGD step for one round.

    weighted_steps is sum_c D_c * L * e_c / D (the aggregation boost), which
    drives the second candidate cap 1/(2 beta * weighted_steps). The first
    candidate scales the dissimilarity constants; its bracket
    L(L-1)e_max^2 + e_max(e_max-1) vanishes for a single plain SGD pass
    (L = 1, e_max = 1), leaving the second cap alone.
    """
    if not 0.0 < lambda_k < 1.0:
        raise ValueError(f"lambda_k must be in (0, 1), got {lambda_k}")
    if local_rounds < 1 or e_max < 1:
        raise ValueError("need local_rounds >= 1 and e_max >= 1")
    if weighted_steps <= 0:
        raise ValueError("weighted_steps must be > 0")
    bracket = (local_rounds * (local_rounds - 1) * e_max**2
               + e_max * (e_max - 1))
    denom = 8.0 * (p.zeta_glob1 * p.zeta_loc_hat + lambda_k) * bracket
    first = (math.sqrt(lambda_k / denom) / p.beta if denom > 0 else math.inf)
    second = 1.0 / (2.0 * p.beta * weighted_steps)
    return min(first, second)


@dataclass(frozen=True)
class RoundInputs:
    """Everything the general bound needs about one executed round."""

    eta: float
    local_rounds: int
    partition: VCPartition
    cluster_steps: tuple  # e_c, one entry per cluster
    data_sizes: tuple  # D_n, one entry per satellite
    batch_frac: object = 1.0  # scalar, per-satellite, or (N, L) array
    idle_s: float = 0.0  # total idle time Omega^(k)

    def frac_array(self) -> np.ndarray:
        n = self.partition.n_sats
        frac = np.asarray(self.batch_frac, dtype=float)
        if frac.ndim == 0:
            frac = np.full((n, self.local_rounds), float(frac))
        elif frac.ndim == 1:
            frac = np.repeat(frac[:, None], self.local_rounds, axis=1)
        if frac.shape != (n, self.local_rounds):
            raise ValueError("batch fractions must be scalar, (N,), or (N, L)")
        if ((frac <= 0) | (frac > 1)).any():
            raise ValueError("batch fractions must lie in (0, 1]")
        return frac

    def boost(self) -> float:
        sizes = np.asarray(self.data_sizes, dtype=float)
        e_n = np.asarray(self.cluster_steps, dtype=float)[self.partition.assignment]
        return float((sizes * self.local_rounds * e_n).sum() / sizes.sum())


@dataclass(frozen=True)
class BoundReport:
    """Bound value with its five-term decomposition.

    terms holds the aggregated contributions keyed "a".."e" (already scaled
    by 1/(K (1 - lambda_max))); per_round keeps the raw per-round values of
    the summed terms for inspection.
    """

    total: float
    terms: dict
    per_round: tuple
    phi_min: float
    phi_max: float

    def as_dict(self) -> dict:
        return {"total": self.total, **self.terms,
                "phi_min": self.phi_min, "phi_max": self.phi_max}


def _per_round_drift(p: BoundParams, k: int, n_rounds: int) -> float:
    if np.ndim(p.delta_k) == 0:
        return float(p.delta_k)
    if len(p.delta_k) != n_rounds:
        raise ValueError(f"delta_k has {len(p.delta_k)} entries for "
                         f"{n_rounds} rounds")
    return float(p.delta_k[k])


def _sigma_for(p: BoundParams, n: int) -> np.ndarray:
    sig = np.asarray(p.sigma_n, dtype=float)
    if sig.size == 0:
        return np.zeros(n)
    if sig.ndim == 0:
        return np.full(n, float(sig))
    if sig.shape != (n,):
        raise ValueError(f"sigma_n must have one entry per satellite ({n})")
    return sig


def general_bound(p: BoundParams, rounds, f0_minus_fstar: float) -> BoundReport:
    """Evaluate the per-round convergence bound over an executed schedule.

    rounds is a sequence of RoundInputs; K is its length. Each round's step
    size is checked against step_size_cap (using lambda_max as the per-round
    constant, the loosest admissible choice). Raises when a step size
    violates its cap or a configured phi bound fails to cover the realized
    phi values.
    """
    rounds = list(rounds)
    if not rounds:
        raise ValueError("need at least one round")
    if f0_minus_fstar < 0:
        raise ValueError("initial loss gap must be >= 0")
    big_k = len(rounds)

    phis = []
    for r in rounds:
        phis.append(0.5 * r.eta * r.boost())
    phi_min = p.phi_min if p.phi_min is not None else min(phis)
    phi_max = p.phi_max if p.phi_max is not None else max(phis)
    if phi_min > min(phis) + 1e-12 or phi_max < max(phis) - 1e-12:
        raise ValueError(
            f"configured phi bounds [{phi_min}, {phi_max}] do not cover the "
            f"realized range [{min(phis)}, {max(phis)}]"
        )

    lam = p.lambda_max
    per_round = []
    sums = {"b": 0.0, "c": 0.0, "d": 0.0, "e": 0.0}
    for k, r in enumerate(rounds):
        sizes = np.asarray(r.data_sizes, dtype=float)
        n = len(sizes)
        e_c = np.asarray(r.cluster_steps, dtype=float)
        if (e_c < 1).any():
            raise ValueError("cluster SGD counts must be >= 1 in the bound")
        big_l = r.local_rounds
        d_total = sizes.sum()
        e_max_k = float(e_c.max())
        if p.e_max_k is not None and e_max_k > p.e_max_k:
            raise ValueError(f"round {k}: e_max {e_max_k} exceeds the "
                             f"configured cap {p.e_max_k}")
        cap = step_size_cap(p, big_l, e_max_k, lam, r.boost())
        if r.eta > cap * (1 + 1e-12):
            raise ValueError(
                f"round {k}: step size {r.eta:g} exceeds its cap {cap:g}"
            )

        frac = r.frac_array()
        sigma = _sigma_for(p, n)
        # per-satellite sum over local rounds of (1 - frac)/frac * sigma^2
        noise_n = ((1.0 - frac) / frac).sum(axis=1) * sigma**2
        term_b = r.idle_s * _per_round_drift(p, k, big_k) / phi_min
        term_c = 0.0
        term_e = 0.0
        for cid in range(r.partition.n_clusters):
            members = r.partition.members(cid)
            term_c += (1.0 / (d_total * big_l)) ** 2 / e_c[cid] * (
                sizes[members] * noise_n[members]
            ).sum()
            term_e += (1.0 / (d_total * big_l)) * (
                (big_l - 1) * e_c[cid] + (e_c[cid] - 1)
            ) * noise_n[members].sum()
        term_c *= 8.0 * p.beta * p.theta**2 * phi_max
        bracket = big_l * (big_l - 1) * e_max_k**2 + e_max_k * (e_max_k - 1)
        term_d = (16.0 * r.eta**2 * p.beta**2 * bracket
                  * p.zeta_glob2 * p.zeta_loc_hat)
        term_e *= 16.0 * r.eta**2 * p.beta**2 * p.theta**2
        per_round.append({"b": term_b, "c": term_c, "d": term_d, "e": term_e})
        for key in sums:
            sums[key] += per_round[-1][key]

    scale = 1.0 / (big_k * (1.0 - lam))
    terms = {
        "a": f0_minus_fstar / (big_k * phi_min * (1.0 - lam)),
        **{key: scale * val for key, val in sums.items()},
    }
    total = sum(terms.values())
    return BoundReport(total=total, terms=terms, per_round=tuple(per_round),
                       phi_min=phi_min, phi_max=phi_max)


def corollary_step_size(p: BoundParams, big_k: int, n_sats: int) -> float:
    """The step choice eta = alpha / sqrt(ell_max * ehat_max * K / N)."""
    caps = p.corollary_caps()
    return caps["alpha"] / math.sqrt(
        caps["ell_max"] * caps["ehat_max"] * big_k / n_sats
    )


def corollary_bound(p: BoundParams, big_k: int, n_sats: int,
                    f0_minus_fstar: float) -> float:
    """The O(1/sqrt(K)) form of the bound under the configured caps.

    The first two bracketed terms are K-free, so they dominate as K grows
    and the whole expression decays like 1/sqrt(K); the remaining three
    carry an extra 1/sqrt(K) and decay like 1/K.
    """
    caps = p.corollary_caps()
    if big_k < 1 or n_sats < 1:
        raise ValueError("need K >= 1 and N >= 1")
    if f0_minus_fstar < 0:
        raise ValueError("initial loss gap must be >= 0")
    lmin, lmax = caps["ell_min"], caps["ell_max"]
    ebar_min, ebar_max = caps["ebar_min"], caps["ebar_max"]
    ehat_min, ehat_max = caps["ehat_min"], caps["ehat_max"]
    e_max, sig_max, alpha = caps["e_max"], caps["sigma_max"], caps["alpha"]
    root_n = math.sqrt(n_sats)
    lead = 2.0 * math.sqrt(lmax * ehat_max) / (lmin * ebar_min * alpha * root_n)
    t1 = lead * f0_minus_fstar
    t2 = lead * p.chi
    t3 = (4.0 * lmax * ebar_max * p.theta**2 * alpha * p.beta * root_n
          * sig_max / math.sqrt(big_k * lmin * ehat_min))
    bracket_d = lmax * (lmax - 1) * e_max**2 + e_max * (e_max - 1)
    t4 = (16.0 * alpha**2 * p.beta**2 * n_sats
          / (math.sqrt(big_k) * lmin * ehat_min)
          * bracket_d * p.zeta_glob2 * p.zeta_loc_hat)
    t5 = (16.0 * alpha**2 * p.beta**2 * p.theta**2 * n_sats
          / (math.sqrt(big_k) * lmin * ehat_min)
          * ((lmax - 1) * e_max + (e_max - 1)) * sig_max)
    return (t1 + t2 + t3 + t4 + t5) / (math.sqrt(big_k) * (1.0 - p.lambda_max))


def minibatch_noise(frac: float, sigma: float, d_n: float, theta: float) -> float:
    """Variance injected by sampling a (frac * D_n)-point mini-batch:
    (1 - frac) * sigma^2 / (frac * D_n) * 2 theta^2. Zero at full batch."""
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"batch fraction must be in (0, 1], got {frac}")
    if d_n < 1:
        raise ValueError(f"dataset size must be >= 1, got {d_n}")
    return (1.0 - frac) * sigma**2 / (frac * d_n) * 2.0 * theta**2


def rounds_from_run(cfg, trace) -> list[RoundInputs]:
    """Package a finished simulation's rounds for the general bound."""
    sizes = tuple(o.dataset_size for o in cfg.oracles)
    return [
        RoundInputs(
            eta=s.eta,
            local_rounds=s.local_rounds,
            partition=cfg.partition,
            cluster_steps=cfg.cluster_steps,
            data_sizes=sizes,
            batch_frac=cfg.batch_frac,
            idle_s=s.idle_s,
        )
        for s in trace.rounds
    ]


# ---- estimation of the analysis constants ---- #


@dataclass(frozen=True)
class ParamEstimate:
    """Sampled estimates of the analysis constants.

    Every value is a maximum over finitely many samples, hence a lower
    estimate of the true supremum; samples records how many draws backed
    each field.
    """

    params: BoundParams
    samples: dict


def estimate_params(
    trace,
    oracles,
    *,
    n_model_pairs: int = 48,
    n_datum_pairs: int = 48,
    omega_scale: float = 3.0,
    seed: int = 0,
) -> ParamEstimate:
    """Measure smoothness, data variability, feature spread, and drift.

    beta: max ||grad F_n(x) - grad F_n(y)|| / ||x - y|| over sampled model
    pairs. theta: the same ratio per datum over sampled datum pairs. sigma_n:
    RMS feature spread per satellite. delta_k: per-round drift measured as
    the largest one-second increase of any satellite's weighted loss inside
    the round's span, summed over satellites and local rounds (zero without
    a trace or with static data).
    """
    rng = substream(seed, "estimate")
    dim = oracles[0].dim
    n = len(oracles)

    beta_hat = 0.0
    for _ in range(n_model_pairs):
        x = rng.normal(0.0, omega_scale, dim)
        y = rng.normal(0.0, omega_scale, dim)
        gap = float(np.linalg.norm(x - y))
        if gap < 1e-12:
            continue
        for o in oracles:
            beta_hat = max(beta_hat, float(
                np.linalg.norm(o.grad(x) - o.grad(y)) / gap
            ))

    theta_hat = 0.0
    datum_pairs = 0
    for o in oracles:
        if o.dataset_size < 2:
            warnings.warn(
                "a dataset with fewer than 2 points cannot support a data-"
                "variability estimate", stacklevel=2,
            )
            continue
        data = o.data_at(0.0)
        for _ in range(max(1, n_datum_pairs // n)):
            i, j = rng.choice(o.dataset_size, size=2, replace=False)
            gap = float(np.linalg.norm(data[i] - data[j]))
            if gap < 1e-12:
                continue
            w = rng.normal(0.0, omega_scale, dim)
            diff = o.minibatch_grad(w, [int(i)]) - o.minibatch_grad(w, [int(j)])
            theta_hat = max(theta_hat, float(np.linalg.norm(diff)) / gap)
            datum_pairs += 1

    sigma = tuple(float(o.sigma()) for o in oracles)

    sizes = np.array([o.dataset_size for o in oracles], dtype=float)
    shares = sizes / sizes.sum()
    deltas = []
    omega_probes = [rng.normal(0.0, omega_scale, dim) for _ in range(8)]
    for stats in getattr(trace, "rounds", []) if trace is not None else []:
        worst = 0.0
        for i, o in enumerate(oracles):
            for t in range(int(stats.t_init) + 1, int(math.ceil(stats.t_end)) + 1):
                step = max(
                    shares[i] * (o.loss(w, t) - o.loss(w, t - 1.0))
                    for w in omega_probes
                )
                worst = max(worst, step)
        deltas.append(worst * n * stats.local_rounds)

    params = BoundParams(
        beta=max(beta_hat, 1e-12),
        theta=theta_hat,
        sigma_n=sigma,
        delta_k=tuple(deltas) if deltas else 0.0,
    )
    return ParamEstimate(
        params=params,
        samples={
            "model_pairs": n_model_pairs,
            "datum_pairs": datum_pairs,
            "omega_probes": len(omega_probes),
            "rounds": len(deltas),
        },
    )
