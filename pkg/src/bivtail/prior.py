"""Prior densities: MDI prior on each margin, zero-truncated Poisson on the
number of interior atoms, and the uniform prior on each parameter surface
together with its normalizing constant.
"""
from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import mpmath
import numpy as np
from scipy.interpolate import BSpline
from scipy.special import gammaln

from .spectral import SpectralParams
from .tail import MarginParams

log = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
EXACT_SUM_MAX_M = 30


@dataclass
class PriorConfig:
    lam: float = 5.0
    quadrature_nodes: int = 64
    xi_bounds: tuple[float, float] = (-1.0, 1.0)
    zeta_max: float = 1.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("Poisson intensity must be positive")
        self.xi_bounds = tuple(float(b) for b in self.xi_bounds)


def mdi_log_prior(margin: MarginParams, config: PriorConfig | None = None) -> float:
    """Unnormalized log MDI prior; ``-inf`` off the support in ``config``."""
    xi, zeta, sigma = margin.xi, margin.zeta, margin.sigma
    if sigma <= 0 or zeta <= 0:
        return -np.inf
    if config is not None:
        lo, hi = config.xi_bounds
        if not (lo <= xi <= hi) or zeta > config.zeta_max:
            return -np.inf
    return math.log(zeta) - math.log(sigma) - (1.0 + xi) * (EULER_GAMMA + math.log(zeta))


def model_log_prior(m: int, lam: float) -> float:
    """Zero-truncated Poisson log pmf."""
    if m < 1:
        raise ValueError("model index starts at 1")
    return m * math.log(lam) - math.log(math.expm1(lam)) - math.lgamma(m + 1)


# ---------------------------------------------------------------------------
# surface measures
# ---------------------------------------------------------------------------


def _fisher_exact(m: int, y: float) -> float:
    K = math.ceil(1.0 / y) - 1
    with mpmath.workdps(40 + m):
        yy = mpmath.mpf(y)
        acc = mpmath.mpf(1)
        for k in range(1, K + 1):
            acc -= (-1) ** (k - 1) * mpmath.binomial(m, k) * (1 - k * yy) ** (m - 1)
        return float(acc)


def _fisher_sum(m: int, y: np.ndarray) -> np.ndarray:
    K = np.ceil(1.0 / y).astype(int) - 1
    k = np.arange(1, m)
    base = 1.0 - k[None, :] * y[:, None]
    logc = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.exp(logc + (m - 1) * np.log(np.where(base > 0, base, 1.0)))
    terms = np.where(k[None, :] <= K[:, None], terms, 0.0)
    signs = np.where(k % 2 == 1, 1.0, -1.0)
    return np.array([1.0 - math.fsum(row) for row in terms * signs])


@lru_cache(maxsize=None)
def _cardinal_bspline(m: int) -> BSpline:
    return BSpline.basis_element(np.arange(m + 1.0), extrapolate=False)


def _bspline_form(m: int, y: np.ndarray) -> np.ndarray:
    # P = (m-1)! y^(m-1) B_m(1/y), B_m the cardinal B-spline on knots 0..m
    with np.errstate(divide="ignore"):
        logb = np.log(np.nan_to_num(_cardinal_bspline(m)(1.0 / y), nan=0.0))
    return np.exp(math.lgamma(m) + (m - 1) * np.log(y) + logb)


def simplex_max_cdf(m: int, y, method: str = "auto"):
    """``P(max_i Y_i < y)`` for ``Y`` uniform on the unit ``(m-1)``-simplex.

    ``method`` is ``"fisher"`` (alternating sum, compensated), ``"exact"``
    (alternating sum in multiprecision), ``"bspline"`` (Cox-de Boor
    evaluation of the equivalent Irwin-Hall density) or ``"auto"``, which
    uses the alternating sum up to ``m = 30`` and the B-spline form above.
    """
    scalar = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.where(y >= 1.0, 1.0, 0.0)
    mid = (y >= 1.0 / m) & (y < 1.0)
    if np.any(mid):
        ym = y[mid]
        if method == "auto":
            method = "fisher" if m <= EXACT_SUM_MAX_M else "bspline"
        if method == "fisher":
            vals = _fisher_sum(m, ym)
        elif method == "exact":
            vals = np.array([_fisher_exact(m, v) for v in ym])
        elif method == "bspline":
            vals = _bspline_form(m, ym)
        else:
            raise ValueError(f"unknown method {method!r}")
        out[mid] = np.clip(vals, 0.0, 1.0)
    return float(out[0]) if scalar else out


def log_slice_measure(m: int, h0, h1):
    """``log`` of the ``(m-1)``-dim surface measure of the ordered slice at ``(h0, h1)``."""
    h0, h1 = np.broadcast_arrays(np.asarray(h0, dtype=float), np.asarray(h1, dtype=float))
    out = np.full(h0.shape, -np.inf)
    ok = (h0 < 0.5) & (h1 < 0.5) & (h0 >= 0) & (h1 >= 0)
    if not np.any(ok):
        return out if out.ndim else float(out)
    a, b = h0[ok], h1[ok]
    ratio = m * (0.5 - b) / (1.0 - a - b)
    with np.errstate(divide="ignore"):
        lp = np.log(simplex_max_cdf(m, np.atleast_1d(1.0 / ratio)))
    out[ok] = (
        0.5 * math.log(m) - math.lgamma(m + 1) - math.lgamma(m) + (m - 1) * np.log(ratio) + lp
    )
    return out if out.ndim else float(out)


def slice_measure(m: int, h0, h1):
    return np.exp(log_slice_measure(m, h0, h1))


def log_theta_normalizer(m: int, quadrature_nodes: int = 64) -> float:
    """``log`` of the (m+1)-dim surface measure of the whole parameter surface.

    Outer Gauss-Legendre rule in ``h1``; the inner rule in ``h0`` is applied
    piecewise between the lines where the number of terms of the alternating
    sum changes, since the integrand has kinks there.
    """
    if m < 1:
        raise ValueError("model index starts at 1")
    if m == 1:
        return math.log(0.25)
    x, w = np.polynomial.legendre.leggauss(quadrature_nodes)
    x01, w01 = 0.5 * (x + 1.0), 0.5 * w
    h1s = 0.25 * (x + 1.0)
    k = np.arange(1, m)
    pts, wts = [], []
    for h1, wo in zip(h1s, 0.25 * w):
        kinks = 1.0 - h1 - m * (0.5 - h1) / k
        edges = np.unique(np.concatenate(([0.0, 0.5], kinks[(kinks > 0) & (kinks < 0.5)])))
        lo, width = edges[:-1, None], np.diff(edges)[:, None]
        pts.append(np.column_stack(((lo + width * x01).ravel(), np.full(width.size * len(x), h1))))
        wts.append((wo * width * w01).ravel())
    pts = np.concatenate(pts)
    ls = log_slice_measure(m, pts[:, 0], pts[:, 1]) + np.log(np.concatenate(wts))
    top = ls.max()
    return float(top + math.log(np.exp(ls - top).sum()))


def theta_normalizer(m: int, quadrature_nodes: int = 64) -> float:
    return math.exp(log_theta_normalizer(m, quadrature_nodes))


@dataclass
class NormalizerCache:
    """Lazily filled map ``m -> log normalizer``; thread-safe."""

    quadrature_nodes: int = 64
    values: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def log(self, m: int) -> float:
        val = self.values.get(m)
        if val is None:
            with self._lock:
                val = self.values.get(m)
                if val is None:
                    val = log_theta_normalizer(m, self.quadrature_nodes)
                    self.values[m] = val
        return val

    def __call__(self, m: int) -> float:
        return math.exp(self.log(m))

    def refinement_gap(self, m: int) -> float:
        """Relative change of the normalizer when the node count doubles."""
        fine = log_theta_normalizer(m, 2 * self.quadrature_nodes)
        return abs(math.expm1(fine - self.log(m)))

    def dump(self, path) -> None:
        payload = {"quadrature_nodes": self.quadrature_nodes,
                   "values": {str(m): math.exp(v) for m, v in sorted(self.values.items())}}
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "NormalizerCache":
        payload = json.loads(Path(path).read_text())
        vals = {int(m): math.log(v) for m, v in payload["values"].items()}
        return cls(payload["quadrature_nodes"], vals)


def theta_log_prior(theta: SpectralParams, cache: NormalizerCache | None = None) -> float:
    """Log density of the uniform prior on the surface of ``theta``."""
    try:
        theta.validate()
    except ValueError:
        return -np.inf
    if theta.degenerate:
        return -np.inf
    cache = cache or _default_cache()
    return -cache.log(theta.m)


@lru_cache(maxsize=1)
def _default_cache() -> NormalizerCache:
    return NormalizerCache()


# ---------------------------------------------------------------------------
# direct sampling
# ---------------------------------------------------------------------------


def _uniform_capped_simplex(m: int, total: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform point of ``{y in (0, 1)^m : sum y = total}``."""
    flip = total > m / 2.0
    s = m - total if flip else total
    while True:
        y = rng.dirichlet(np.ones(m), size=64) * s
        ok = np.flatnonzero(y.max(axis=1) < 1.0)
        if len(ok):
            y = y[ok[0]]
            return 1.0 - y if flip else y


def sample_surface(m: int, size: int, rng: np.random.Generator, batch: int = 4096) -> list[SpectralParams]:
    """Independent draws from the uniform law on the ``m``-atom surface.

    ``(h0, h1)`` is drawn from its marginal, proportional to the slice
    measure, by rejection from the uniform square. The slice measure is a
    log-concave function of ``m ybar`` maximal at ``m/2``, which gives an
    exact bound. The atoms are then uniform on the slice.
    """
    if m == 1:
        h = rng.uniform(0.0, 0.5, size=(size, 2))
        return [SpectralParams(a, b, [(0.5 - b) / (1.0 - a - b)], check=False) for a, b in h]
    # the maximum sits on the line m ybar = m/2, which passes through h0 = h1 = 0
    top = float(log_slice_measure(m, 0.0, 0.0))
    out: list[SpectralParams] = []
    while len(out) < size:
        h = rng.uniform(0.0, 0.5, size=(batch, 2))
        ls = log_slice_measure(m, h[:, 0], h[:, 1])
        if np.any(ls > top + 1e-9):
            raise AssertionError("slice measure exceeds its analytic maximum")
        keep = np.log(rng.random(batch)) < ls - top
        for h0, h1 in h[keep][: size - len(out)]:
            total = m * (0.5 - h1) / (1.0 - h0 - h1)
            ys = np.sort(_uniform_capped_simplex(m, total, rng))
            if m > 1 and np.min(np.diff(ys)) < 1e-12:
                continue
            out.append(SpectralParams(h0, h1, ys, check=False))
    return out


def sample_model_index(size: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    """Draws from the zero-truncated Poisson."""
    out = np.empty(0, dtype=int)
    while len(out) < size:
        m = rng.poisson(lam, size=2 * size)
        out = np.concatenate((out, m[m > 0]))
    return out[:size]
