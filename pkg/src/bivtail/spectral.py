"""Spectral measures on [0, 1] built from monotone cubic splines.

A spectral measure is a probability measure on [0, 1] with mean 1/2. The
family used here is indexed by a parameter point ``(h0, y_1..y_m, h1)``: the
equal-mass discrete measure with interior atoms ``y_i`` is bracketed by two
Fritsch-Carlson splines, and the smooth measure is the unique mixture of the
two brackets with mean exactly 1/2.

All integrals of splines are computed per cubic piece in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

KNOT_GAP = 1e-12
MEAN_TOL = 1e-9


class InvalidParamsError(ValueError):
    """Parameter vector does not lie on the constrained surface."""


# ---------------------------------------------------------------------------
# piecewise cubics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PiecewiseCubic:
    """Piecewise cubic on ``[knots[0], knots[-1]]`` in local coordinates.

    On piece ``i`` the value is ``c0 + c1 s + c2 s^2 + c3 s^3`` with
    ``s = w - knots[i]``; ``coefs[i] = (c0, c1, c2, c3)``.
    """

    knots: np.ndarray
    coefs: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = np.diff(self.knots)
        c = self.coefs
        piece = h * (c[:, 0] + h * (c[:, 1] / 2 + h * (c[:, 2] / 3 + h * c[:, 3] / 4)))
        object.__setattr__(self, "_cum", np.concatenate(([0.0], np.cumsum(piece))))

    @classmethod
    def from_hermite(cls, knots, values, derivs) -> "PiecewiseCubic":
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        derivs = np.asarray(derivs, dtype=float)
        h = np.diff(knots)
        delta = np.diff(values) / h
        d0, d1 = derivs[:-1], derivs[1:]
        coefs = np.column_stack(
            (values[:-1], d0, (3 * delta - 2 * d0 - d1) / h, (d0 + d1 - 2 * delta) / h**2)
        )
        return cls(knots, coefs)

    def _locate(self, w):
        idx = np.clip(np.searchsorted(self.knots, w, side="right") - 1, 0, len(self.coefs) - 1)
        return idx, w - self.knots[idx]

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        i, s = self._locate(w)
        c = self.coefs[i]
        return c[..., 0] + s * (c[..., 1] + s * (c[..., 2] + s * c[..., 3]))

    def derivative(self, w):
        w = np.asarray(w, dtype=float)
        i, s = self._locate(w)
        c = self.coefs[i]
        return c[..., 1] + s * (2 * c[..., 2] + s * 3 * c[..., 3])

    def antiderivative(self, w):
        """Integral from ``knots[0]`` to ``w``."""
        w = np.asarray(w, dtype=float)
        i, s = self._locate(w)
        c = self.coefs[i]
        return self._cum[i] + s * (
            c[..., 0] + s * (c[..., 1] / 2 + s * (c[..., 2] / 3 + s * c[..., 3] / 4))
        )

    @property
    def total_integral(self) -> float:
        return float(self._cum[-1])


def fritsch_carlson_derivatives(knots, values) -> np.ndarray:
    """Knot derivatives of the monotone Fritsch-Carlson interpolant.

    End derivatives are zero. An interior derivative is the weighted harmonic
    mean of the two adjacent secant slopes when both are positive, else zero.
    """
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    h = np.diff(knots)
    delta = np.diff(values) / h
    d = np.zeros_like(values)
    left, right = delta[:-1], delta[1:]
    hl, hr = h[:-1], h[1:]
    a = (1 + hr / (hl + hr)) / 3
    prod = left * right
    pos = prod > 0
    denom = a * right + (1 - a) * left
    d[1:-1] = np.where(pos, prod / np.where(pos, denom, 1.0), 0.0)
    return d


@dataclass(frozen=True, eq=False)
class MonotoneSpline:
    knots: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    poly: PiecewiseCubic

    @classmethod
    def interpolate(cls, knots, values) -> "MonotoneSpline":
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(values) < 0):
            raise ValueError("values must be nondecreasing")
        derivs = fritsch_carlson_derivatives(knots, values)
        return cls(knots, values, derivs, PiecewiseCubic.from_hermite(knots, values, derivs))

    def __call__(self, w):
        return self.poly(w)

    def derivative(self, w):
        return self.poly.derivative(w)

    @property
    def integral(self) -> float:
        return self.poly.total_integral


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralParams:
    """Point ``(h0, y_1, ..., y_m, h1)`` of the constrained parameter surface.

    ``h0 = h1 = 1/2`` with empty ``ys`` encodes the Bernoulli(1/2) measure.
    """

    h0: float
    h1: float
    ys: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        ys = np.array(self.ys, dtype=float).reshape(-1)
        ys.setflags(write=False)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "h0", float(self.h0))
        object.__setattr__(self, "h1", float(self.h1))
        if self.check:
            self.validate()

    @property
    def m(self) -> int:
        return len(self.ys)

    @property
    def mass(self) -> float:
        """Total mass of the interior atoms."""
        return 1.0 - self.h0 - self.h1

    @property
    def degenerate(self) -> bool:
        return self.h0 == 0.5 and self.h1 == 0.5

    @property
    def ybar(self) -> float:
        return (0.5 - self.h1) / self.mass

    def validate(self):
        h0, h1, ys = self.h0, self.h1, self.ys
        if not (0.0 <= h0 <= 0.5 and 0.0 <= h1 <= 0.5):
            raise InvalidParamsError(f"atom masses out of [0, 1/2]: h0={h0}, h1={h1}")
        if self.degenerate:
            if len(ys):
                raise InvalidParamsError("Bernoulli(1/2) parameters carry no interior atoms")
            return
        if h0 == 0.5 or h1 == 0.5:
            raise InvalidParamsError("h0 = 1/2 forces h1 = 1/2 and vice versa")
        if len(ys) == 0:
            raise InvalidParamsError("at least one interior atom required")
        if ys[0] <= 0.0 or ys[-1] >= 1.0:
            raise InvalidParamsError("interior atoms must lie in (0, 1)")
        if len(ys) > 1 and np.min(np.diff(ys)) < KNOT_GAP:
            raise InvalidParamsError("interior atoms must be strictly increasing")
        if abs(ys.mean() - self.ybar) > MEAN_TOL:
            raise InvalidParamsError(
                f"mean constraint violated: mean(ys)={ys.mean()!r}, expected {self.ybar!r}"
            )

    def to_record(self) -> dict:
        return {"m": self.m, "h0": self.h0, "h1": self.h1, "ys": self.ys.tolist()}

    @classmethod
    def from_record(cls, rec: dict) -> "SpectralParams":
        return cls(rec["h0"], rec["h1"], np.asarray(rec["ys"], dtype=float))


BERNOULLI_PARAMS = SpectralParams(0.5, 0.5, np.empty(0))


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


def _check_unit(w, open_interval=False):
    w = np.asarray(w, dtype=float)
    if open_interval:
        bad = np.any((w <= 0.0) | (w >= 1.0))
    else:
        bad = np.any((w < 0.0) | (w > 1.0))
    if bad or np.any(np.isnan(w)):
        raise ValueError("argument outside the unit interval")
    return w


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Atoms at 0 and 1 plus a piecewise-cubic distribution function between.

    ``body(w)`` is ``H(w)`` for ``w`` in ``[0, 1)``; ``body(0) == atom0`` and
    ``body(1-) == 1 - atom1``. When built from parameters, ``lower``,
    ``upper`` and ``alpha`` record the bracketing construction.
    """

    body: PiecewiseCubic
    atom0: float
    atom1: float
    lower: Optional[MonotoneSpline] = None
    upper: Optional[MonotoneSpline] = None
    alpha: Optional[float] = None
    params: Optional[SpectralParams] = None

    def cdf(self, w):
        w = _check_unit(w)
        return np.where(w >= 1.0, 1.0, self.body(w))

    def density(self, w):
        w = _check_unit(w, open_interval=True)
        return np.maximum(self.body.derivative(w), 0.0)

    def _wmoment_from0(self, v):
        # int_0^v w h(w) dw = v S(v) - int_0^v S
        return v * self.body(v) - self.body.antiderivative(v)

    def partial_moment(self, a, b, kind: str = "w"):
        """``int_a^b w h(w) dw`` (kind ``"w"``) or ``int_a^b (1-w) h(w) dw`` (``"1-w"``)."""
        a = _check_unit(a)
        b = _check_unit(b)
        if np.any(a > b):
            raise ValueError("need a <= b")
        wm = self._wmoment_from0(b) - self._wmoment_from0(a)
        if kind == "w":
            return wm
        if kind == "1-w":
            return self.body(b) - self.body(a) - wm
        raise ValueError(f"unknown moment kind {kind!r}")

    def upper_moment(self, v):
        """``int_{(v, 1]} w H(dw)``, atom at 1 included."""
        full = self.body(1.0) - self.body.total_integral
        return self.atom1 + full - self._wmoment_from0(v)

    def lower_comoment(self, v):
        """``int_{[0, v]} (1 - w) H(dw)``, atom at 0 included."""
        return self.body(v) - self._wmoment_from0(v)

    def interior_density(self, v):
        """Density on [0, 1] without domain checks (used by the likelihood)."""
        return np.maximum(self.body.derivative(v), 0.0)

    def mean(self) -> float:
        return 1.0 - self.body.total_integral

    def reflect(self) -> "SpectralMeasure":
        """Law of ``1 - W``."""
        src = self.body.knots[::-1]
        # body(1.0) extrapolates the last piece, i.e. the left limit at 1
        poly = PiecewiseCubic.from_hermite(1.0 - src, 1.0 - self.body(src), self.body.derivative(src))
        return SpectralMeasure(poly, self.atom1, self.atom0)


@dataclass(frozen=True, eq=False)
class DiscreteSpectralMeasure:
    """Finitely supported probability measure on [0, 1]."""

    locations: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        mass = np.asarray(self.masses, dtype=float)
        order = np.argsort(loc, kind="stable")
        object.__setattr__(self, "locations", loc[order])
        object.__setattr__(self, "masses", mass[order])

    @property
    def atom0(self) -> float:
        return float(self.masses[self.locations == 0.0].sum())

    @property
    def atom1(self) -> float:
        return float(self.masses[self.locations == 1.0].sum())

    def cdf(self, w):
        w = _check_unit(w)
        cum = np.concatenate(([0.0], np.cumsum(self.masses)))
        out = cum[np.searchsorted(self.locations, w, side="right")]
        return np.where(w >= 1.0, 1.0, out)

    def upper_moment(self, v):
        v = np.asarray(v, dtype=float)
        above = self.locations > v[..., None]
        return (above * self.locations * self.masses).sum(axis=-1)

    def lower_comoment(self, v):
        v = np.asarray(v, dtype=float)
        below = self.locations <= v[..., None]
        return (below * (1 - self.locations) * self.masses).sum(axis=-1)

    def interior_density(self, v):
        return np.zeros_like(np.asarray(v, dtype=float))

    def mean(self) -> float:
        return float(self.locations @ self.masses)


def step_measure(theta: SpectralParams) -> DiscreteSpectralMeasure:
    """The discrete measure with atoms h0 at 0, h1 at 1, mass/m at each y_i."""
    if theta.degenerate:
        return DiscreteSpectralMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    m = theta.m
    loc = np.concatenate(([0.0], theta.ys, [1.0]))
    mass = np.concatenate(([theta.h0], np.full(m, theta.mass / m), [theta.h1]))
    return DiscreteSpectralMeasure(loc, mass)


def build_bracketing_splines(theta: SpectralParams) -> tuple[MonotoneSpline, MonotoneSpline]:
    if theta.degenerate:
        raise ValueError("Bernoulli(1/2) parameters have no bracketing splines")
    m, h0, c = theta.m, theta.h0, theta.mass
    knots = np.concatenate(([0.0], theta.ys, [1.0]))
    steps = h0 + c * np.arange(m + 1) / m
    lower_vals = np.concatenate(([steps[0]], steps[:-1], [steps[-2]]))
    upper_vals = np.concatenate(([steps[1]], steps[1:], [steps[-1]]))
    return MonotoneSpline.interpolate(knots, lower_vals), MonotoneSpline.interpolate(knots, upper_vals)


def bernoulli_measure() -> SpectralMeasure:
    body = PiecewiseCubic(np.array([0.0, 1.0]), np.array([[0.5, 0.0, 0.0, 0.0]]))
    return SpectralMeasure(body, 0.5, 0.5, alpha=None, params=BERNOULLI_PARAMS)


def build_spectral_measure(theta: SpectralParams) -> SpectralMeasure:
    """Smooth spectral measure indexed by ``theta``."""
    if theta.degenerate:
        return bernoulli_measure()
    lower, upper = build_bracketing_splines(theta)
    a_lo, a_up = lower.integral, upper.integral
    if not a_up > a_lo:
        raise AssertionError("bracketing splines have equal integrals")
    alpha = (a_up - 0.5) / (a_up - a_lo)
    vals = alpha * lower.values + (1 - alpha) * upper.values
    ders = alpha * lower.derivs + (1 - alpha) * upper.derivs
    body = PiecewiseCubic.from_hermite(lower.knots, vals, ders)
    return SpectralMeasure(
        body,
        atom0=float(vals[0]),
        atom1=float(1.0 - vals[-1]),
        lower=lower,
        upper=upper,
        alpha=float(alpha),
        params=theta,
    )


# ---------------------------------------------------------------------------
# discrete approximation
# ---------------------------------------------------------------------------


def _generalized_inverse(cdf, p: float, tol: float = 1e-13) -> float:
    """``inf{w in [0, 1] : cdf(w) >= p}`` by bisection."""
    if float(cdf(0.0)) >= p:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(cdf(mid)) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def _validate_cdf(cdf):
    grid = np.linspace(0.0, 1.0, 1001)
    vals = np.array([float(cdf(w)) for w in grid])
    if np.any(np.isnan(vals)) or vals.min() < -1e-12 or vals.max() > 1 + 1e-12:
        raise ValueError("cdf values must lie in [0, 1]")
    if np.any(np.diff(vals) < -1e-12):
        raise ValueError("cdf must be nondecreasing")
    if abs(vals[-1] - 1.0) > 1e-12:
        raise ValueError("cdf(1) must equal 1")


def discrete_approximation(
    cdf: Callable[[float], float],
    m: int,
    *,
    ppf: Optional[Callable[[float], float]] = None,
    integral: Optional[Callable[[float, float], float]] = None,
) -> np.ndarray:
    """Equal-mass ``m``-point approximation of a distribution on [0, 1].

    The returned locations have the same mean as ``cdf`` and their uniform
    distribution is within ``1/m`` of ``cdf`` in sup-norm. ``ppf`` and
    ``integral(a, b) = int_a^b cdf`` may be supplied in closed form; otherwise
    bisection and adaptive quadrature are used.
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    _validate_cdf(cdf)
    if ppf is None:
        ppf = lambda p: _generalized_inverse(cdf, p)  # noqa: E731
    if integral is None:
        def integral(a, b):
            if b <= a:
                return 0.0
            return integrate.quad(cdf, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    q = np.array([0.0] + [ppf(i / m) for i in range(1, m + 1)])
    t = np.empty(m)
    for i in range(1, m + 1):
        lo, hi = q[i - 1], q[i]
        area = integral(lo, hi) - (i - 1) / m * (hi - lo)
        t[i - 1] = min(max(hi - m * area, lo), hi)
    return t


def approximate_spectral_params(cdf, h0: float, h1: float, m: int, **kw) -> SpectralParams:
    """Parameter point whose step measure approximates a spectral measure.

    ``cdf`` is the distribution function of a spectral measure whose only
    atoms are ``h0`` at 0 and ``h1`` at 1.
    """
    if h0 == 0.5 and h1 == 0.5:
        return BERNOULLI_PARAMS
    c = 1.0 - h0 - h1

    def phi(w):
        return 1.0 if w >= 1.0 else min(max((float(cdf(w)) - h0) / c, 0.0), 1.0)

    t = discrete_approximation(phi, m, **kw)
    return SpectralParams(h0, h1, t)


def spectral_record(theta: SpectralParams, grid) -> dict:
    """JSON-ready record of parameters and the evaluated distribution function."""
    grid = np.asarray(grid, dtype=float)
    rec = theta.to_record()
    rec["grid"] = grid.tolist()
    rec["cdf"] = build_spectral_measure(theta).cdf(grid).tolist()
    return rec
