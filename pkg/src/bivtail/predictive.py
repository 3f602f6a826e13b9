"""Posterior predictive quantities in the joint tail region.

Every quantity is a Monte-Carlo average over posterior draws of the
corresponding model quantity; the trans-dimensional trace visits each
model with its posterior frequency, so no explicit sum over ``m`` appears.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .spectral import build_spectral_measure
from .tail import (
    MarginParams,
    ell,
    ell_derivatives,
    log_censored_density,
    marginal_log_jacobian,
    marginal_neg_log_cdf,
    marginal_quantile,
)

log = logging.getLogger(__name__)

PROB_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    measures: list
    margins: list  # pairs of MarginParams

    def __len__(self):
        return len(self.measures)

    @property
    def thresholds(self) -> tuple[float, float]:
        m1, m2 = self.margins[0]
        return m1.u, m2.u

    @classmethod
    def from_trace(cls, trace, max_draws: int | None = None) -> "PosteriorDraws":
        if len(trace) == 0:
            raise ValueError("empty trace")
        if trace.thresholds is None:
            raise ValueError("trace carries no thresholds (prior-only run?)")
        idx = np.arange(len(trace))
        if max_draws is not None and len(trace) > max_draws:
            idx = np.unique(np.linspace(0, len(trace) - 1, max_draws).round().astype(int))
        params = trace.params()
        margins = trace.margins()
        return cls([build_spectral_measure(params[i]) for i in idx], [margins[i] for i in idx])

    @classmethod
    def from_states(cls, states: Sequence) -> "PosteriorDraws":
        """From ``(measure, margin1, margin2)`` triples."""
        return cls([s[0] for s in states], [(s[1], s[2]) for s in states])


def _as_draws(obj) -> PosteriorDraws:
    if isinstance(obj, PosteriorDraws):
        return obj
    return PosteriorDraws.from_trace(obj)


# ---------------------------------------------------------------------------
# joint
# ---------------------------------------------------------------------------


@dataclass
class PredictiveGrid:
    x1: np.ndarray
    x2: np.ndarray
    density: np.ndarray  # shape (len(x1), len(x2))
    corner_mass: float
    n_draws: int

    def to_long(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(self.density[i, j]))
                for i, a in enumerate(self.x1) for j, b in enumerate(self.x2)]

    def write_csv(self, path) -> None:
        _write_rows(path, ("x1", "x2", "density"), self.to_long())


def joint_predictive(draws, x1_grid, x2_grid) -> PredictiveGrid:
    """Average of the joint exceedance density over draws on a product grid.

    Grid values below a threshold are dropped; the probability of the
    corner ``{X1 < u1, X2 < u2}`` is reported as ``corner_mass``.
    """
    draws = _as_draws(draws)
    if len(draws) == 0:
        raise ValueError("no posterior draws")
    u1, u2 = draws.thresholds
    x1 = np.asarray(x1_grid, dtype=float)
    x2 = np.asarray(x2_grid, dtype=float)
    x1, x2 = x1[x1 >= u1], x2[x2 >= u2]
    if len(x1) == 0 or len(x2) == 0:
        raise ValueError("grid has no points in the joint tail region")
    if np.any(np.diff(x1) <= 0) or np.any(np.diff(x2) <= 0):
        raise ValueError("grid axes must be strictly increasing")
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    acc = np.zeros(X1.shape)
    corner = 0.0
    for H, (m1, m2) in zip(draws.measures, draws.margins):
        acc += np.exp(log_censored_density(X1, X2, True, True, H, m1, m2))
        corner += math.exp(-float(ell(m1.zeta, m2.zeta, H)))
    n = len(draws)
    return PredictiveGrid(x1, x2, acc / n, corner / n, n)


def marginal_predictive_density(draws, x, j: int = 1) -> np.ndarray:
    """Predictive density of margin ``j`` at ``x >= u_j``."""
    draws = _as_draws(draws)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for pair in draws.margins:
        mp = pair[j - 1]
        out += np.exp(marginal_log_jacobian(x, mp) - marginal_neg_log_cdf(x, mp))
    return out / len(draws)


# ---------------------------------------------------------------------------
# conditional on X1 = x1
# ---------------------------------------------------------------------------


def _conditional_terms(H, m1: MarginParams, m2: MarginParams, x1, x2):
    """Per-draw ``(f1(x1), P(X1 in dx1, X2 > x2) / dx1, f(x1, x2))``."""
    x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    s = marginal_neg_log_cdf(x1, m1)
    t = marginal_neg_log_cdf(x2, m2)
    j1 = np.exp(marginal_log_jacobian(x1, m1))
    j2 = np.exp(marginal_log_jacobian(x2, m2))
    e = ell_derivatives(s, t, H)
    F = np.exp(-e.value)
    f1 = j1 * np.exp(-s)
    surv = np.maximum(f1 - j1 * e.ds * F, 0.0)
    dens = j1 * j2 * np.maximum(e.ds * e.dt - e.dst, 0.0) * F
    return f1, surv, dens


@dataclass
class ConditionalPredictive:
    x1: float
    x2: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    survival: np.ndarray
    below_threshold: float  # P(X2 < u2 | X1 = x1)
    n_used: int
    n_excluded: int

    def to_record(self) -> dict:
        return {
            "x1": self.x1,
            "x2": self.x2.tolist(),
            "density": self.density.tolist(),
            "cdf": self.cdf.tolist(),
            "survival": self.survival.tolist(),
            "below_threshold": self.below_threshold,
            "n_used": self.n_used,
            "n_excluded": self.n_excluded,
        }


def conditional_predictive(draws, x1: float, grid2) -> ConditionalPredictive:
    """Predictive law of ``X2`` given ``X1 = x1`` on ``grid2 >= u2``.

    The conditioning density is the predictive marginal density of ``X1``,
    so the conditional density integrates over ``[u2, inf)`` to one minus
    the conditional probability that ``X2`` stays below its threshold.
    """
    draws = _as_draws(draws)
    u1, u2 = draws.thresholds
    if x1 < u1:
        raise ValueError("x1 must be at or above its threshold")
    x2 = np.asarray(grid2, dtype=float)
    if np.any(x2 < u2):
        raise ValueError("grid2 must lie at or above the threshold u2")
    grid = np.concatenate(([u2], x2))
    f1_sum, surv_sum, dens_sum = 0.0, np.zeros(grid.shape), np.zeros(grid.shape)
    excluded = 0
    for H, (m1, m2) in zip(draws.measures, draws.margins):
        f1, surv, dens = _conditional_terms(H, m1, m2, x1, grid)
        if f1[0] <= 0:
            excluded += 1
            continue
        f1_sum += f1[0]
        surv_sum += surv
        dens_sum += dens
    if excluded:
        log.warning("%d draws have zero density at x1=%g and were excluded", excluded, x1)
    if f1_sum <= 0:
        raise ValueError(f"x1={x1} has zero predictive density")
    survival = np.minimum(surv_sum / f1_sum, 1.0)
    return ConditionalPredictive(
        float(x1), x2, dens_sum[1:] / f1_sum, 1.0 - survival[1:], survival[1:],
        float(1.0 - survival[0]), len(draws) - excluded, excluded,
    )


def conditional_survival(draws, x1: float, x2) -> np.ndarray:
    """``P(X2 > x2 | X1 = x1)`` under the predictive law."""
    return conditional_predictive(draws, x1, np.atleast_1d(x2)).survival


def _bisect(fun, lo, hi, target, max_iter=200):
    """Vectorized bisection for decreasing ``fun``: ``fun(x) = target``."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    # the start bracket is a marginal guess; a conditional tail can be heavier
    for _ in range(200):
        short = fun(hi) > target
        if not np.any(short):
            break
        hi = np.where(short, lo + 2.0 * (hi - lo), hi)
    else:
        raise ValueError("could not bracket the conditional quantile")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = fun(mid)
        above = val > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(np.abs(val - target) <= PROB_TOL / 10) or np.all(hi - lo <= 1e-12 * np.maximum(1.0, np.abs(hi))):
            break
    return 0.5 * (lo + hi)


def _search_limit(m2: MarginParams, p: float) -> float:
    """Point where the margin-2 survival is below ``p / 10``."""
    level = min(1.0 - p / 10.0, 1.0 - 1e-15)
    return float(marginal_quantile(level, m2)) if m2.xi >= -1e-9 else m2.upper_endpoint


@dataclass
class ConditionalQuantile:
    x1: np.ndarray
    p: float
    quantile: np.ndarray
    lower_band: np.ndarray
    upper_band: np.ndarray
    exceedance_conditional: bool

    def rows(self):
        return [(float(a), float(q), float(lo), float(hi))
                for a, q, lo, hi in zip(self.x1, self.quantile, self.lower_band, self.upper_band)]

    def write_csv(self, path) -> None:
        _write_rows(path, ("x1", "quantile", "lower_band", "upper_band"), self.rows())


def _survival_matrix(draws: PosteriorDraws, x1: np.ndarray, x2: np.ndarray):
    """Per-draw ``f1`` and unnormalized survival at paired ``(x1[k], x2[k])``."""
    f1s, survs = [], []
    for H, (m1, m2) in zip(draws.measures, draws.margins):
        f1, surv, _ = _conditional_terms(H, m1, m2, x1, x2)
        f1s.append(f1)
        survs.append(surv)
    return np.array(f1s), np.array(survs)


def conditional_quantile(draws, x1, p: float, *, exceedance: bool = False,
                         band_level: float = 0.95, band_draws: int | None = 500):
    """Level ``x2`` with ``P(X2 > x2 | X1 = x1) = p`` under the predictive law.

    ``x1`` may be a scalar or an array; for an array a :class:`ConditionalQuantile`
    curve is returned. With ``exceedance=True`` the probability is conditional
    on ``X2 > u2`` as well. The band collects the same quantile computed
    draw by draw (on at most ``band_draws`` evenly spaced draws).
    """
    draws = _as_draws(draws)
    u1, u2 = draws.thresholds
    scalar = np.ndim(x1) == 0
    xs = np.atleast_1d(np.asarray(x1, dtype=float))
    if np.any(xs < u1):
        raise ValueError("x1 must be at or above its threshold")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")

    f1, s_u = _survival_matrix(draws, xs, np.full_like(xs, u2))
    f1_mean = f1.mean(axis=0)
    if np.any(f1_mean <= 0):
        raise ValueError("some x1 has zero predictive density")
    top = s_u.mean(axis=0) / f1_mean  # P(X2 > u2 | x1)
    target = p * top if exceedance else np.full_like(xs, p)
    if np.any(target > top + PROB_TOL):
        bound = float(top.min())
        raise ValueError(f"p={p} is not attainable; P(X2 > u2 | x1) is {bound:.6g}")

    hi0 = max(_search_limit(m2, float(target.min())) for _, m2 in draws.margins)

    def pooled(x2):
        _, s = _survival_matrix(draws, xs, x2)
        return s.mean(axis=0) / f1_mean

    at_u = np.abs(target - top) <= PROB_TOL
    q = np.where(at_u, u2, _bisect(pooled, np.full_like(xs, u2), np.full_like(xs, hi0), target))

    sub = draws
    if band_draws is not None and len(draws) > band_draws:
        idx = np.unique(np.linspace(0, len(draws) - 1, band_draws).round().astype(int))
        sub = PosteriorDraws([draws.measures[i] for i in idx], [draws.margins[i] for i in idx])
    per_draw = []
    for H, (m1, m2) in zip(sub.measures, sub.margins):
        f1d, sud, _ = _conditional_terms(H, m1, m2, xs, np.full_like(xs, u2))
        ok = f1d > 0
        if not np.any(ok):
            continue
        topd = np.where(ok, sud / np.where(ok, f1d, 1.0), 0.0)
        tgt = p * topd if exceedance else np.full_like(xs, p)
        limit = _search_limit(m2, float(tgt[ok].min()) if np.any(tgt[ok] > 0) else p)

        def single(x2, H=H, m1=m1, m2=m2, f1d=f1d):
            _, s, _ = _conditional_terms(H, m1, m2, xs, x2)
            return s / np.where(f1d > 0, f1d, 1.0)

        qd = _bisect(single, np.full_like(xs, u2), np.full_like(xs, limit), tgt)
        qd = np.where(ok & (tgt <= topd), qd, np.where(ok, u2, np.nan))
        per_draw.append(qd)
    per_draw = np.array(per_draw)
    a = (1.0 - band_level) / 2.0
    lower = np.nanquantile(per_draw, a, axis=0)
    upper = np.nanquantile(per_draw, 1.0 - a, axis=0)
    if scalar:
        return float(q[0]), (float(lower[0]), float(upper[0]))
    return ConditionalQuantile(xs, p, q, lower, upper, exceedance)


# ---------------------------------------------------------------------------
# joint exceedance probabilities
# ---------------------------------------------------------------------------


def rare_event_probability(draws, v1, v2):
    """Predictive ``P(X1 >= v1, X2 >= v2)`` for ``v_j >= u_j``."""
    draws = _as_draws(draws)
    v1, v2 = np.broadcast_arrays(np.asarray(v1, dtype=float), np.asarray(v2, dtype=float))
    acc = np.zeros(v1.shape)
    for H, (m1, m2) in zip(draws.measures, draws.margins):
        s = marginal_neg_log_cdf(v1, m1)
        t = marginal_neg_log_cdf(v2, m2)
        # 1 - F1 - F2 + F, arranged to avoid cancellation for small s, t
        acc += -np.expm1(-s) - np.expm1(-t) + np.expm1(-ell(s, t, H))
    out = np.clip(acc / len(draws), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, default=float))
