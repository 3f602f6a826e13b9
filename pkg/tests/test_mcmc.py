import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bivtail.mcmc import (
    ChainConfig,
    Target,
    Trace,
    bayes_estimate,
    birth_apply,
    birth_interval,
    death_apply,
    initial_state,
    move_margins,
    run_chain,
    split_rhat,
    straddle_counts,
    within_apply,
    within_interval,
)
from bivtail.prior import sample_surface
from bivtail.spectral import SpectralParams, build_spectral_measure
from bivtail.synthetic import FrConfig, sample_fr
from bivtail.tail import MarginParams, censor

from .conftest import random_params, spectral_params


def _pairs(m):
    n = m + 2
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _mean_gap(theta):
    return abs(theta.ys.mean() - theta.ybar)


@pytest.fixture(scope="module")
def small_sample():
    x = sample_fr(FrConfig(0.5, 400, 3))
    u1, u2 = np.quantile(x, 0.9, axis=0)
    return censor(x[:, 0], x[:, 1], u1, u2)


# ---------------------------------------------------------------- within-model move


def test_case_c_interval_example():
    theta = SpectralParams(0.1, 7 / 30, [0.2, 0.6])
    lo, hi = within_interval(theta, 1, 2)
    assert (lo, hi) == pytest.approx((-0.2, 0.2))
    new, _ = within_apply(theta, 1, 2, 0.15)
    assert new.ys.sum() == pytest.approx(0.8)


@given(spectral_params(max_m=6))
def test_zero_step_is_identity(theta):
    for i, j in _pairs(theta.m):
        new, pair = within_apply(theta, i, j, 0.0)
        assert new is not None and pair == (i, j)
        assert new.h0 == pytest.approx(theta.h0, abs=1e-15)
        assert new.h1 == pytest.approx(theta.h1, abs=1e-13)
        assert np.allclose(new.ys, theta.ys, atol=1e-13)


@given(spectral_params(max_m=6), st.integers(0, 10**6), st.floats(0.001, 0.999))
def test_within_preserves_mean_and_reverses(theta, pick, frac):
    pairs = _pairs(theta.m)
    i, j = pairs[pick % len(pairs)]
    lo, hi = within_interval(theta, i, j)
    assert hi > lo
    u = lo + frac * (hi - lo)
    new, (ri, rj) = within_apply(theta, i, j, u)
    if new is None:  # landed on a knot collision
        return
    assert _mean_gap(new) <= 1e-12
    new.validate()
    rlo, rhi = within_interval(new, ri, rj)
    assert rlo < -u < rhi
    # the absolute range of the moved coordinate does not depend on the state
    assert rhi - rlo == pytest.approx(hi - lo, abs=1e-12)
    back, _ = within_apply(new, ri, rj, -u)
    assert back.h0 == pytest.approx(theta.h0, abs=1e-12)
    assert back.h1 == pytest.approx(theta.h1, abs=1e-12)
    assert np.allclose(back.ys, theta.ys, atol=1e-12)


# ---------------------------------------------------------------- birth and death


def test_birth_interval_m1_example():
    theta = SpectralParams(0.2, 0.1, [0.4 / 0.7])
    yb = float(theta.ys[0])
    assert birth_interval(theta.ys[0], yb) == pytest.approx((0.0, min(yb, 1 - yb)))


def test_birth_then_death_m1_example():
    theta = SpectralParams(0.2, 0.1, [0.4 / 0.7])
    lo, hi = birth_interval(theta.ys[0], float(theta.ys[0]))
    u = 0.3 * hi
    born = birth_apply(theta, 0, u)
    assert born.m == 2 and _mean_gap(born) <= 1e-12
    back, partner = death_apply(born, 0, 1)
    assert back.m == 1 and back.ys[0] == pytest.approx(theta.ys[0], abs=1e-14)
    assert birth_interval(partner, float(theta.ys[0])) == pytest.approx((lo, hi))


@given(spectral_params(max_m=8), st.integers(0, 100), st.floats(0.001, 0.999))
def test_birth_death_inverse(theta, k, frac):
    k %= theta.m
    lo, hi = birth_interval(theta.ys[k], theta.ys.sum() / theta.m)
    if not hi > lo:
        return
    u = lo + frac * (hi - lo)
    born = birth_apply(theta, k, u)
    if born is None:
        return
    assert _mean_gap(born) <= 1e-12
    yb = theta.ys.sum() / theta.m
    new_atom = int(np.argmin(np.abs(born.ys - (yb + u))))
    partner = int(np.argmin(np.abs(born.ys - (theta.ys[k] - u))))
    j, kk = sorted((new_atom, partner))
    back, moved = death_apply(born, j, kk)
    assert np.allclose(back.ys, theta.ys, atol=1e-12)
    # the reverse interval is the birth interval of the restored atom
    assert moved == pytest.approx(theta.ys[k], abs=1e-12)


def test_death_symmetric_tie():
    theta = SpectralParams(0.0, 0.0, [0.3, 0.7])
    new, partner = death_apply(theta, 0, 1)
    assert new.m == 1 and new.ys[0] == pytest.approx(0.5)
    assert partner == pytest.approx(0.5)


def test_straddle_counts():
    assert straddle_counts(np.array([0.1, 0.5, 0.6, 0.9]), 0.5) == (2, 2)


# ---------------------------------------------------------------- margin move


class _FixedRng:
    def __init__(self, j, z):
        self.j, self.z = j, np.asarray(z, dtype=float)

    def integers(self, n):
        return self.j

    def standard_normal(self, size):
        return self.z


def test_margin_move_zero_step(small_sample):
    cfg = ChainConfig()
    target = Target(small_sample, cfg)
    state = initial_state(target, cfg)
    prop = move_margins(state, _FixedRng(0, [0, 0, 0]), target)
    assert prop.state.margins == state.margins
    assert prop.log_ratio == pytest.approx(0.0, abs=1e-12)


def test_margin_move_proposal_symmetry(small_sample):
    cfg = ChainConfig()
    target = Target(None, cfg)
    state = initial_state(target, cfg)
    fwd = move_margins(state, _FixedRng(1, [0.3, 0.7, -0.2]), target)
    bwd = move_margins(fwd.state, _FixedRng(1, [-0.3, -0.7, 0.2]), target)
    assert bwd.state.margins[1].zeta == pytest.approx(state.margins[1].zeta)
    # log-ratios of a reversible pair sum to zero
    assert fwd.log_ratio + bwd.log_ratio == pytest.approx(0.0, abs=1e-12)


def test_margin_move_outside_support():
    cfg = ChainConfig(xi_bounds=(-0.5, 0.5))
    target = Target(None, cfg)
    state = initial_state(target, ChainConfig(initial_state={
        "h0": 0.1, "h1": 0.1, "ys": [0.25, 0.5, 0.75],
        "xi1": 0.499, "zeta1": 0.1, "sigma1": 1.0, "xi2": 0.0, "zeta2": 0.1, "sigma2": 1.0,
    }))
    prop = move_margins(state, _FixedRng(0, [1.0, 0, 0]), target)
    assert prop.state is None


# ---------------------------------------------------------------- chain


def test_zero_iterations():
    tr = run_chain(None, ChainConfig(iterations=0, burn_in=0, prior_only=True))
    assert len(tr) == 0 and tr.occupancy == {}


def test_determinism(small_sample):
    cfg = ChainConfig(iterations=1500, burn_in=100, thin=7, seed=11)
    a, b = run_chain(small_sample, cfg), run_chain(small_sample, cfg)
    assert a.records == b.records and a.acceptance == b.acceptance
    c = run_chain(small_sample, ChainConfig(iterations=1500, burn_in=100, thin=7, seed=12))
    assert c.records != a.records


def test_cached_state_matches_recomputation(small_sample):
    cfg = ChainConfig(iterations=600, burn_in=0, thin=1, seed=2, debug_check_every=1)
    tr = run_chain(small_sample, cfg)
    assert sum(tr.occupancy.values()) == 600 == tr.n_recorded
    for rec, theta in zip(tr.records, tr.params()):
        assert _mean_gap(theta) <= 1e-12


def test_bad_initial_state(small_sample):
    init = {"h0": 0.1, "h1": 0.1, "ys": [0.25, 0.5, 0.75],
            "xi1": -1.0, "zeta1": 0.1, "sigma1": 1e-6, "xi2": 0.1, "zeta2": 0.1, "sigma2": 1.0}
    with pytest.raises(ValueError, match="initial"):
        run_chain(small_sample, ChainConfig(iterations=10, initial_state=init))


def test_trace_roundtrip(tmp_path, small_sample):
    tr = run_chain(small_sample, ChainConfig(iterations=300, burn_in=50, thin=10, seed=1))
    path = tmp_path / "trace.ndjson"
    tr.save(path)
    keys = {"iter", "m", "h0", "h1", "ys", "xi1", "zeta1", "sigma1", "xi2", "zeta2", "sigma2", "loglik"}
    import json
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == keys
    again = Trace.load(path)
    assert again.records == tr.records
    assert again.thresholds == pytest.approx(tr.thresholds)
    assert again.occupancy == tr.occupancy
    assert again.fingerprint == tr.fingerprint


def test_acceptance_bookkeeping(small_sample):
    tr = run_chain(small_sample, ChainConfig(iterations=2000, burn_in=0, seed=4))
    assert sum(p for p, _ in tr.acceptance.values()) == 2000
    for p, a in tr.acceptance.values():
        assert 0 <= a <= p
    rates = tr.acceptance_rates
    assert all(0 <= v <= 1 for v in rates.values())


def test_flow_balance_prior_only():
    tr = run_chain(None, ChainConfig(iterations=40_000, burn_in=0, thin=1, seed=8, prior_only=True))
    m = tr.column("m")
    for k in range(1, 11):
        up = np.sum((m[:-1] == k) & (m[1:] == k + 1))
        down = np.sum((m[:-1] == k + 1) & (m[1:] == k))
        assert abs(int(up) - int(down)) <= 1
    assert np.all(np.abs(np.diff(m)) <= 1)


def _batch_se(x, batches=50):
    b = np.array_split(np.asarray(x, dtype=float), batches)
    means = np.array([c.mean() for c in b])
    return means.std(ddof=1) / math.sqrt(batches)


def test_prior_only_within_model_matches_direct_sampler():
    tr = run_chain(None, ChainConfig(iterations=120_000, burn_in=5_000, thin=5, seed=21,
                                     prior_only=True, lam=2.0))
    m = tr.column("m")
    h0, y1 = tr.column("h0"), np.array([r["ys"][0] for r in tr.records])
    rng = np.random.default_rng(5)
    for k in (1, 2, 3):
        sel = m == k
        direct = sample_surface(k, 20_000, rng)
        d_h0 = np.mean([t.h0 for t in direct])
        d_y1 = np.mean([t.ys[0] for t in direct])
        # indicator-weighted batch means keep the autocorrelation honest
        frac = sel.mean()
        se_h0 = _batch_se(np.where(sel, h0 - d_h0, 0.0)) / frac
        se_y1 = _batch_se(np.where(sel, y1 - d_y1, 0.0)) / frac
        assert abs(h0[sel].mean() - d_h0) < 4 * se_h0 + 0.005
        assert abs(y1[sel].mean() - d_y1) < 4 * se_y1 + 0.005


def test_prior_only_margins_match_truncated_mdi():
    cfg = ChainConfig(iterations=150_000, burn_in=5_000, thin=5, seed=5, prior_only=True,
                      xi_bounds=(-0.5, 0.5), margin_steps=(0.15, 0.5, 0.5))
    tr = run_chain(None, cfg)
    xi = tr.column("xi1")
    # marginal of xi under the truncated MDI prior: exp(-(1+xi) gamma) / (1 - xi)
    rng = np.random.default_rng(0)
    cand = rng.uniform(-0.5, 0.5, 400_000)
    dens = np.exp(-(1 + cand) * 0.5772156649015329) / (1 - cand)
    keep = rng.random(cand.size) * dens.max() < dens
    ref = cand[keep]
    assert abs(xi.mean() - ref.mean()) < 4 * _batch_se(xi) + 0.003
    assert abs(np.quantile(xi, 0.25) - np.quantile(ref, 0.25)) < 0.03


# ---------------------------------------------------------------- summaries


def test_bayes_estimate_identical_states(small_sample):
    theta = random_params(3, 0)
    rec = {"iter": 0, "m": 3, "h0": theta.h0, "h1": theta.h1, "ys": theta.ys.tolist(),
           "xi1": 0.1, "zeta1": 0.1, "sigma1": 1.0, "xi2": 0.2, "zeta2": 0.1, "sigma2": 2.0,
           "loglik": 0.0}
    tr = Trace(records=[dict(rec, iter=i) for i in range(5)], thresholds=(0.0, 0.0))
    grid = np.linspace(0, 1, 11)
    est = bayes_estimate(tr, grid)
    assert np.allclose(est.mean, build_spectral_measure(theta).cdf(grid))
    assert np.allclose(est.upper - est.lower, 0.0)
    assert est.margins["sigma2"] == 2.0
    with pytest.raises(ValueError):
        bayes_estimate(Trace(), grid)


def test_prior_mean_curve_symmetric():
    tr = run_chain(None, ChainConfig(iterations=60_000, burn_in=2_000, thin=20, seed=9,
                                     prior_only=True, lam=2.0))
    grid = np.linspace(0.02, 0.98, 25)
    est = bayes_estimate(tr, grid)
    assert np.all(np.diff(est.mean) >= 0)
    # E H(w) + E H(1 - w) = 1 for a reflection-invariant prior
    assert np.max(np.abs(est.mean + est.mean[::-1] - 1.0)) < 0.05
    assert est.mean[12] == pytest.approx(0.5, abs=0.03)


def test_split_rhat():
    rng = np.random.default_rng(0)
    same = [rng.normal(size=2000) for _ in range(3)]
    assert split_rhat(same) == pytest.approx(1.0, abs=0.02)
    shifted = [rng.normal(size=2000) + 3 * k for k in range(3)]
    assert split_rhat(shifted) > 1.5


def test_margin_params_thresholds_in_trace(small_sample):
    tr = run_chain(small_sample, ChainConfig(iterations=200, burn_in=0, thin=50, seed=0))
    m1, m2 = tr.margins()[0]
    assert isinstance(m1, MarginParams)
    assert (m1.u, m2.u) == (small_sample.u1, small_sample.u2)
