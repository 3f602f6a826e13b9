"""Bivariate tail model: threshold-anchored margins, the stable tail
dependence function and the censored likelihood.

Margin ``j`` above its threshold ``u`` follows

    -log F_j(x) = zeta * (1 + xi * (x - u) / sigma) ** (-1 / xi),

and the joint distribution is ``F(x1, x2) = exp(-ell(-log F_1, -log F_2))``.
An observation below a threshold is censored at that threshold, which gives
four likelihood branches according to which coordinates exceed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

XI_ZERO = 1e-9
DELTA_TOL = 1e-12


class ModelInvariantError(RuntimeError):
    """A quantity that must be nonnegative came out materially negative."""


@dataclass(frozen=True)
class MarginParams:
    """Shape ``xi``, exceedance rate ``zeta`` and scale ``sigma`` at threshold ``u``."""

    xi: float
    zeta: float
    sigma: float
    u: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.zeta > 0):
            raise ValueError(f"need sigma > 0 and zeta > 0, got {self}")

    @property
    def upper_endpoint(self) -> float:
        return self.u - self.sigma / self.xi if self.xi < -XI_ZERO else np.inf

    def replace(self, **kw) -> "MarginParams":
        return MarginParams(**{**self.__dict__, **kw})


class CensoredObservation(NamedTuple):
    x1s: float
    x2s: float
    d: tuple[int, int]


@dataclass(frozen=True, eq=False)
class CensoredSample:
    """Observations censored at ``(u1, u2)``: ``x*_j = max(x_j, u_j)``."""

    x1s: np.ndarray
    x2s: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    u1: float
    u2: float

    def __len__(self):
        return len(self.x1s)

    @property
    def counts(self) -> dict:
        """Number of observations per exceedance pattern."""
        d1, d2 = self.d1, self.d2
        return {
            "00": int(np.sum(~d1 & ~d2)),
            "10": int(np.sum(d1 & ~d2)),
            "01": int(np.sum(~d1 & d2)),
            "11": int(np.sum(d1 & d2)),
        }

    def observations(self) -> list[CensoredObservation]:
        return [
            CensoredObservation(float(a), float(b), (int(c), int(e)))
            for a, b, c, e in zip(self.x1s, self.x2s, self.d1, self.d2)
        ]

    @classmethod
    def from_observations(cls, obs: Iterable[CensoredObservation], u1: float, u2: float):
        obs = list(obs)
        x1 = np.array([o.x1s for o in obs], dtype=float)
        x2 = np.array([o.x2s for o in obs], dtype=float)
        d1 = np.array([bool(o.d[0]) for o in obs], dtype=bool)
        d2 = np.array([bool(o.d[1]) for o in obs], dtype=bool)
        if np.any(x1[~d1] != u1) or np.any(x2[~d2] != u2):
            raise ValueError("censored coordinates must sit at the threshold")
        return cls(x1, x2, d1, d2, float(u1), float(u2))


def censor(x1, x2, u1: float, u2: float) -> CensoredSample:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if not (np.isfinite(u1) and np.isfinite(u2)):
        raise ValueError("thresholds must be finite")
    d1 = x1 >= u1
    d2 = x2 >= u2
    return CensoredSample(np.maximum(x1, u1), np.maximum(x2, u2), d1, d2, float(u1), float(u2))


# ---------------------------------------------------------------------------
# margins
# ---------------------------------------------------------------------------


def _base(x, margin: MarginParams):
    return 1.0 + margin.xi * (np.asarray(x, dtype=float) - margin.u) / margin.sigma


def marginal_neg_log_cdf(x, margin: MarginParams):
    """``-log F_j(x)`` for ``x >= u``; zero above a finite upper endpoint."""
    x = np.asarray(x, dtype=float)
    if np.any(x < margin.u):
        raise ValueError("margin evaluated below its threshold")
    if abs(margin.xi) < XI_ZERO:
        return margin.zeta * np.exp(-(x - margin.u) / margin.sigma)
    z = _base(x, margin)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = margin.zeta * np.power(np.where(z > 0, z, 1.0), -1.0 / margin.xi)
    return np.where(z > 0, out, 0.0)


def marginal_log_jacobian(x, margin: MarginParams):
    """``log |d/dx (-log F_j(x))|``; ``-inf`` above a finite upper endpoint."""
    x = np.asarray(x, dtype=float)
    lead = np.log(margin.zeta) - np.log(margin.sigma)
    if abs(margin.xi) < XI_ZERO:
        return lead - (x - margin.u) / margin.sigma
    z = _base(x, margin)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lead - (1.0 / margin.xi + 1.0) * np.log(np.where(z > 0, z, 1.0))
    return np.where(z > 0, out, -np.inf)


def marginal_cdf(x, margin: MarginParams):
    return np.exp(-marginal_neg_log_cdf(x, margin))


def marginal_density(x, margin: MarginParams):
    return np.exp(marginal_log_jacobian(x, margin)) * marginal_cdf(x, margin)


def marginal_quantile(p, margin: MarginParams):
    """Inverse of ``marginal_cdf`` for ``p >= F_j(u)``."""
    s = -np.log(np.asarray(p, dtype=float))
    r = s / margin.zeta
    if abs(margin.xi) < XI_ZERO:
        return margin.u - margin.sigma * np.log(r)
    return margin.u + margin.sigma * (np.power(r, -margin.xi) - 1.0) / margin.xi


# ---------------------------------------------------------------------------
# tail dependence function
# ---------------------------------------------------------------------------


class EllValue(NamedTuple):
    value: np.ndarray
    ds: np.ndarray
    dt: np.ndarray
    dst: np.ndarray


def ell_derivatives(s, t, H) -> EllValue:
    """``ell(s, t)`` and its partial derivatives for a spectral measure ``H``.

    ``H`` needs ``upper_moment``, ``lower_comoment`` and ``interior_density``.
    With ``v = t / (s + t)``,

        d_s ell = 2 int_{(v,1]} w dH,   d_t ell = 2 int_{[0,v]} (1 - w) dH,

    ``ell = s d_s ell + t d_t ell`` and ``d_st ell = -2 s t (s+t)^-3 h(v)``.
    """
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("ell is defined on the nonnegative quadrant")
    tot = s + t
    zero = tot == 0
    safe = np.where(zero, 1.0, tot)
    v = np.where(zero, 0.5, t / safe)
    ds = 2.0 * H.upper_moment(v)
    dt = 2.0 * H.lower_comoment(v)
    ds = np.clip(ds, 0.0, None)
    dt = np.clip(dt, 0.0, None)
    # s t / (s+t)^3 = v (1-v) / (s+t), which avoids underflow in the cube
    dst = np.where(zero, 0.0, -2.0 * v * (1.0 - v) / safe * H.interior_density(v))
    return EllValue(s * ds + t * dt, ds, dt, dst)


def ell(s, t, H):
    return ell_derivatives(s, t, H).value


def model_cdf(x1, x2, H, m1: MarginParams, m2: MarginParams):
    """Bivariate tail approximation ``F(x1, x2)`` for ``x_j >= u_j``."""
    s1 = marginal_neg_log_cdf(x1, m1)
    s2 = marginal_neg_log_cdf(x2, m2)
    return np.exp(-ell(s1, s2, H))


# ---------------------------------------------------------------------------
# censored likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarginTerms:
    """Per-observation margin quantities for the non-corner observations.

    The likelihood only needs these, the count of fully censored points and
    the two exceedance rates; they stay fixed while the spectral measure moves.
    """

    s: np.ndarray
    t: np.ndarray
    logj1: np.ndarray
    logj2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    n00: int
    zeta1: float
    zeta2: float
    feasible: bool


def margin_terms(sample: CensoredSample, m1: MarginParams, m2: MarginParams) -> MarginTerms:
    if m1.u != sample.u1 or m2.u != sample.u2:
        raise ValueError("margin thresholds do not match the censoring thresholds")
    keep = sample.d1 | sample.d2
    d1, d2 = sample.d1[keep], sample.d2[keep]
    x1, x2 = sample.x1s[keep], sample.x2s[keep]
    s = marginal_neg_log_cdf(x1, m1)
    t = marginal_neg_log_cdf(x2, m2)
    logj1 = np.where(d1, marginal_log_jacobian(x1, m1), 0.0)
    logj2 = np.where(d2, marginal_log_jacobian(x2, m2), 0.0)
    feasible = bool(np.all(np.isfinite(logj1)) and np.all(np.isfinite(logj2)))
    return MarginTerms(
        s, t, logj1, logj2, d1, d2, int(len(sample) - keep.sum()), m1.zeta, m2.zeta, feasible
    )


def _log_branch_values(terms_s, terms_t, logj1, logj2, d1, d2, H):
    e = ell_derivatives(terms_s, terms_t, H)
    delta = e.ds * e.dt - e.dst
    if np.any(delta < -DELTA_TOL):
        raise ModelInvariantError(f"negative Delta ell: {delta.min()!r}")
    factor = np.where(d1 & d2, np.maximum(delta, 0.0), np.where(d1, e.ds, e.dt))
    with np.errstate(divide="ignore"):
        return logj1 + logj2 + np.log(factor) - e.value


def log_likelihood_from_terms(terms: MarginTerms, H) -> float:
    if not terms.feasible:
        return -np.inf
    out = 0.0
    if terms.n00:
        out -= terms.n00 * float(ell(terms.zeta1, terms.zeta2, H))
    if len(terms.s):
        out += float(
            np.sum(_log_branch_values(terms.s, terms.t, terms.logj1, terms.logj2, terms.d1, terms.d2, H))
        )
    return out


def log_likelihood(sample: CensoredSample, H, m1: MarginParams, m2: MarginParams) -> float:
    """Censored log-likelihood; ``-inf`` if any observation has zero density."""
    if len(sample) == 0:
        return 0.0
    return log_likelihood_from_terms(margin_terms(sample, m1, m2), H)


def log_censored_density(x1s, x2s, d1, d2, H, m1: MarginParams, m2: MarginParams):
    """Vectorized log of the four-branch censored density."""
    x1s, x2s, d1, d2 = np.broadcast_arrays(
        np.asarray(x1s, dtype=float), np.asarray(x2s, dtype=float),
        np.asarray(d1, dtype=bool), np.asarray(d2, dtype=bool),
    )
    x1 = np.where(d1, x1s, m1.u)
    x2 = np.where(d2, x2s, m2.u)
    s = marginal_neg_log_cdf(x1, m1)
    t = marginal_neg_log_cdf(x2, m2)
    logj1 = np.where(d1, marginal_log_jacobian(x1, m1), 0.0)
    logj2 = np.where(d2, marginal_log_jacobian(x2, m2), 0.0)
    corner = ~d1 & ~d2
    out = np.empty(x1.shape)
    out[corner] = -ell(s[corner], t[corner], H)
    rest = ~corner
    if np.any(rest):
        out[rest] = _log_branch_values(s[rest], t[rest], logj1[rest], logj2[rest], d1[rest], d2[rest], H)
    return out


def censored_density(obs: CensoredObservation, H, m1: MarginParams, m2: MarginParams) -> float:
    if (not obs.d[0] and obs.x1s != m1.u) or (not obs.d[1] and obs.x2s != m2.u):
        raise ValueError("censored coordinate must equal its threshold")
    return float(np.exp(log_censored_density(obs.x1s, obs.x2s, obs.d[0], obs.d[1], H, m1, m2)))
