"""Synthetic bivariate data with unit Pareto margins and a known tail.

``F_r(x1, x2) = (1 - 1/x1)(1 - 1/x2)(1 + r / (x1 + x2))`` on ``[1, inf)^2``.
Its extreme-value attractor has spectral measure ``H_r``: atoms ``(1-r)/2``
at 0 and 1 and constant density ``r`` in between.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import PiecewiseCubic, SpectralMeasure


@dataclass(frozen=True)
class FrConfig:
    r: float
    n: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be positive")


def fr_cdf(x1, x2, r: float):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    inside = (x1 >= 1.0) & (x2 >= 1.0)
    a = np.where(inside, 1.0 - 1.0 / np.where(inside, x1, 1.0), 0.0)
    b = np.where(inside, 1.0 - 1.0 / np.where(inside, x2, 1.0), 0.0)
    with np.errstate(invalid="ignore"):
        c = 1.0 + np.where(inside, r / np.where(inside, x1 + x2, 1.0), 0.0)
    return a * b * c


def fr_density(x1, x2, r: float):
    """Mixed partial derivative of ``fr_cdf``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    inside = (x1 >= 1.0) & (x2 >= 1.0)
    x1 = np.where(inside, x1, 2.0)
    x2 = np.where(inside, x2, 2.0)
    S = x1 + x2
    a, b = 1.0 - 1.0 / x1, 1.0 - 1.0 / x2
    da, db = 1.0 / x1**2, 1.0 / x2**2
    c, c1, c12 = 1.0 + r / S, -r / S**2, 2.0 * r / S**3
    f = da * db * c + (da * b + a * db) * c1 + a * b * c12
    return np.where(inside, f, 0.0)


def _envelope(x1, x2, r):
    return (1.0 + r / 2.0) / (x1 * x2) ** 2 + 2.0 * r / (x1 + x2) ** 3


def sample_fr(config: FrConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """``(n, 2)`` array of draws from ``F_r`` by accept-reject.

    The envelope ``(1 + r/2) / (x1 x2)^2 + 2 r / (x1 + x2)^3`` dominates the
    density and has total mass ``1 + r``; it is a mixture of independent
    unit Paretos and a law with density ``4 / (x1 + x2)^3``, both sampled by
    inversion.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    r, n = config.r, config.n
    w_pareto = (1.0 + r / 2.0) / (1.0 + r)
    out = np.empty((0, 2))
    while len(out) < n:
        k = max(2 * (n - len(out)), 64)
        u = rng.random((k, 2))
        pareto = rng.random(k) < w_pareto
        x1 = np.where(pareto, 1.0 / (1.0 - u[:, 0]), 2.0 / (1.0 - u[:, 0]) - 1.0)
        x2 = np.where(pareto, 1.0 / (1.0 - u[:, 1]), (x1 + 1.0) / np.sqrt(1.0 - u[:, 1]) - x1)
        keep = rng.random(k) * _envelope(x1, x2, r) < fr_density(x1, x2, r)
        out = np.vstack((out, np.column_stack((x1[keep], x2[keep]))))
    return out[:n]


def hr_cdf(w, r: float):
    w = np.asarray(w, dtype=float)
    if np.any((w < 0) | (w > 1)):
        raise ValueError("argument outside the unit interval")
    return np.where(w >= 1.0, 1.0, (1.0 - r) / 2.0 + r * w)


def hr_density(w, r: float):
    return np.full(np.shape(w), float(r))


def hr_measure(r: float) -> SpectralMeasure:
    """``H_r`` as a spectral measure object usable by the likelihood code."""
    a = (1.0 - r) / 2.0
    body = PiecewiseCubic(np.array([0.0, 1.0]), np.array([[a, r, 0.0, 0.0]]))
    return SpectralMeasure(body, a, a)


def write_pairs(path, pairs: np.ndarray, header=("x1", "x2")) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in pairs:
            w.writerow((repr(float(a)), repr(float(b))))
