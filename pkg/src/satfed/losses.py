"""Per-satellite loss oracles.

Three families: a quadratic proxy whose per-datum targets drive measurable
heterogeneity, logistic regression on generated two-class Gaussians, and
file-backed tabular rows. Dataset drift moves every datum linearly per
wall-clock second, which lets tests measure model-drift effects against a
closed form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import substream


@dataclass(frozen=True, eq=False)
class QuadraticOracle:
    """Mean of per-datum squared distances: F(w) = 0.5 * mean_d ||w - d||^2.

    The full-dataset gradient is w - mean(d), so smoothness is exactly 1 and
    every convergence quantity has a closed form.
    """

    centers: np.ndarray  # (D, M) datum targets at t = 0
    drift_velocity: np.ndarray = field(default=None)  # (M,) motion per second

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ValueError("centers must be a (D, M) array with D >= 1")
        object.__setattr__(self, "centers", centers)
        vel = self.drift_velocity
        vel = np.zeros(centers.shape[1]) if vel is None else np.asarray(vel, float)
        object.__setattr__(self, "drift_velocity", vel)

    @property
    def dataset_size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def data_at(self, t: float = 0.0) -> np.ndarray:
        return self.centers + t * self.drift_velocity

    def loss(self, w: np.ndarray, t: float = 0.0) -> float:
        diff = w - self.data_at(t)
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))

    def grad(self, w: np.ndarray, t: float = 0.0) -> np.ndarray:
        return w - self.data_at(t).mean(axis=0)

    def minibatch_grad(self, w: np.ndarray, idx: np.ndarray, t: float = 0.0) -> np.ndarray:
        return w - self.data_at(t)[idx].mean(axis=0)

    def sigma(self, t: float = 0.0) -> float:
        """Data variability: root-mean-square distance of data to their mean."""
        d = self.data_at(t)
        spread = d - d.mean(axis=0)
        return float(np.sqrt(np.mean(np.sum(spread * spread, axis=1))))


@dataclass(frozen=True, eq=False)
class LogisticOracle:
    """Binary logistic regression, F(w) = mean_d log(1 + exp(-s_d x_d . w))
    with s_d = 2 y_d - 1."""

    features: np.ndarray  # (D, M)
    labels: np.ndarray  # (D,) in {0, 1}
    drift_velocity: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("features must be (D, M) with matching labels")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(int))
        vel = self.drift_velocity
        vel = np.zeros(x.shape[1]) if vel is None else np.asarray(vel, float)
        object.__setattr__(self, "drift_velocity", vel)

    @property
    def dataset_size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def data_at(self, t: float = 0.0) -> np.ndarray:
        return self.features + t * self.drift_velocity

    def _margins(self, w, t):
        s = 2.0 * self.labels - 1.0
        return s, self.data_at(t) @ w

    def loss(self, w: np.ndarray, t: float = 0.0) -> float:
        s, z = self._margins(w, t)
        return float(np.mean(np.logaddexp(0.0, -s * z)))

    def grad(self, w: np.ndarray, t: float = 0.0) -> np.ndarray:
        x = self.data_at(t)
        s, z = self._margins(w, t)
        # d/dz log(1+e^(-sz)) = -s * sigmoid(-sz)
        coeff = -s / (1.0 + np.exp(s * z))
        return (coeff[:, None] * x).mean(axis=0)

    def minibatch_grad(self, w: np.ndarray, idx: np.ndarray, t: float = 0.0) -> np.ndarray:
        x = self.data_at(t)[idx]
        s = 2.0 * self.labels[idx] - 1.0
        z = x @ w
        coeff = -s / (1.0 + np.exp(s * z))
        return (coeff[:, None] * x).mean(axis=0)

    def sigma(self, t: float = 0.0) -> float:
        d = self.data_at(t)
        spread = d - d.mean(axis=0)
        return float(np.sqrt(np.mean(np.sum(spread * spread, axis=1))))


def tabular_oracle(path, drift_velocity=None) -> LogisticOracle:
    """File-backed classification rows: ``label,f1,f2,...`` per line, with an
    optional ``label`` header. Returns a logistic oracle over the rows."""
    features, labels = [], []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if i == 0 and row[0].strip().lower() == "label":
                continue
            try:
                labels.append(int(row[0]))
                features.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValueError(f"bad tabular row at line {i + 1}: {exc}") from exc
    if not features:
        raise ValueError("tabular file holds no data rows")
    return LogisticOracle(
        features=np.array(features), labels=np.array(labels),
        drift_velocity=drift_velocity,
    )


def make_quadratic_fleet(
    n_sats: int,
    dim: int,
    seed: int,
    *,
    mean_size: int = 1000,
    size_spread: int = 125,
    heterogeneity: float = 1.0,
    sigma_center: float = 3.0,
    sigma_spread: float = 2.0,
    drift_rate: float = 0.0,
) -> list[QuadraticOracle]:
    """Synthetic fleet of quadratic oracles.

    Each satellite n gets D_n ~ mean_size +/- size_spread data points drawn
    around its own target c_n; spacing of the c_n (``heterogeneity``) drives
    the gradient-diversity statistics, per-satellite scatter sigma_n the SGD
    noise, and ``drift_rate`` the per-second dataset motion.
    """
    oracles = []
    for n in range(n_sats):
        rng = substream(seed, "loss", n)
        d_n = int(rng.integers(mean_size - size_spread, mean_size + size_spread + 1))
        c_n = rng.normal(0.0, heterogeneity, dim)
        sigma_n = max(0.25, sigma_center + rng.uniform(-sigma_spread, sigma_spread))
        centers = c_n + rng.normal(0.0, sigma_n / np.sqrt(dim), (d_n, dim))
        vel = np.zeros(dim)
        if drift_rate:
            direction = rng.normal(size=dim)
            vel = drift_rate * direction / np.linalg.norm(direction)
        oracles.append(QuadraticOracle(centers=centers, drift_velocity=vel))
    return oracles


def make_logistic_fleet(
    n_sats: int,
    dim: int,
    seed: int,
    *,
    mean_size: int = 200,
    size_spread: int = 25,
    class_sep: float = 2.0,
    heterogeneity: float = 0.5,
    drift_rate: float = 0.0,
) -> list[LogisticOracle]:
    """Two-class Gaussian blobs per satellite; per-satellite mean offsets
    introduce non-IID skew."""
    oracles = []
    for n in range(n_sats):
        rng = substream(seed, "loss", n)
        d_n = int(rng.integers(mean_size - size_spread, mean_size + size_spread + 1))
        offset = rng.normal(0.0, heterogeneity, dim)
        axis = np.zeros(dim)
        axis[0] = class_sep / 2.0
        labels = rng.integers(0, 2, d_n)
        signs = 2.0 * labels - 1.0
        features = offset + signs[:, None] * axis + rng.normal(0.0, 1.0, (d_n, dim))
        vel = np.zeros(dim)
        if drift_rate:
            direction = rng.normal(size=dim)
            vel = drift_rate * direction / np.linalg.norm(direction)
        oracles.append(LogisticOracle(features=features, labels=labels,
                                      drift_velocity=vel))
    return oracles


def global_loss(oracles, w: np.ndarray, t: float = 0.0) -> float:
    """Data-size-weighted average of the per-satellite losses."""
    sizes = np.array([o.dataset_size for o in oracles], dtype=float)
    values = np.array([o.loss(w, t) for o in oracles])
    return float(values @ sizes / sizes.sum())


def global_grad(oracles, w: np.ndarray, t: float = 0.0) -> np.ndarray:
    sizes = np.array([o.dataset_size for o in oracles], dtype=float)
    grads = np.stack([o.grad(w, t) for o in oracles])
    return grads.T @ sizes / sizes.sum()
