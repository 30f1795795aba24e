import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from galmass.data import Catalog
from galmass.errors import NumericalError
from galmass.likelihood import PriorSpec
from galmass.potential import RadialGrid
from galmass.sampler import (
    AdaptState,
    ChainState,
    Sampler,
    SamplerConfig,
    adapt_variance,
    folded_normal_density,
    mh_step,
    propose_folded,
    run_chain,
)
from galmass.synth import SynthModel, sample_catalog

N_CASES = 1000


def test_folded_density_symmetry_on_random_pairs():
    rng = np.random.default_rng(0)
    a, b = rng.exponential(1.0, (2, 10_000))
    for var in (1e-4, 0.3, 7.0):
        qab = folded_normal_density(b, a, var)
        qba = folded_normal_density(a, b, var)
        assert np.max(np.abs(qab - qba) / np.maximum(qab, 1e-300)) < 1e-12


def test_half_normal_mean():
    rng = np.random.default_rng(0)
    var = 0.49
    x = propose_folded(np.zeros(1_000_000), var, rng)
    expected = math.sqrt(2 * var / math.pi)
    assert abs(x.mean() - expected) < 3 * x.std() / math.sqrt(x.size)
    assert np.all(x >= 0)


def test_draws_match_folded_normal_histogram():
    rng = np.random.default_rng(2)
    a, var = 0.8, 1.3
    sd = math.sqrt(var)
    x = propose_folded(np.full(100_000, a), var, rng)
    edges = np.append(np.linspace(0, 4 * sd + a, 30), np.inf)
    obs = np.histogram(x, edges)[0]
    ref = stats.foldnorm(a / sd, scale=sd)
    exp = np.diff(ref.cdf(edges)) * x.size
    assert stats.chisquare(obs, exp).pvalue > 0.01
    # density formula agrees with the scipy distribution
    grid = np.linspace(0.01, 5, 50)
    np.testing.assert_allclose(folded_normal_density(grid, a, var), ref.pdf(grid), rtol=1e-12)


def test_adapt_variance_examples():
    st0 = AdaptState(np.array([0.25, 0.5]), n0=3, floor_variance=1e-9)
    np.testing.assert_array_equal(adapt_variance(st0), [0.25, 0.5])
    np.testing.assert_allclose(adapt_variance(st0, history=np.full((10, 2), 3.7)), 1e-9)
    np.testing.assert_allclose(adapt_variance(st0, history=[[0.0, 0.0], [2.0, 2.0]]), [1.0, 1.0])
    for it in range(6):
        st0.update([it, 1.0], it)
    assert st0.count == 3
    np.testing.assert_allclose(adapt_variance(st0), [np.var([3, 4, 5]), 1e-9])


def test_adapt_variance_matches_two_pass():
    rng = np.random.default_rng(3)
    h = rng.normal(5.0, 0.3, (5000, 4))
    ad = AdaptState(np.ones(4), n0=0)
    for i, row in enumerate(h):
        ad.update(row, i)
    two_pass = np.mean((h - h.mean(axis=0)) ** 2, axis=0)
    np.testing.assert_allclose(adapt_variance(ad), two_pass, rtol=1e-10)
    np.testing.assert_allclose(adapt_variance(ad, history=h), two_pass, rtol=1e-10)


@settings(max_examples=N_CASES, deadline=None)
@given(a=st.floats(0, 50), b=st.floats(0, 50), var=st.floats(1e-6, 100))
def test_folded_symmetry_property(a, b, var):
    qab = folded_normal_density(b, a, var)
    qba = folded_normal_density(a, b, var)
    assert abs(qab - qba) <= 1e-12 * max(qab, 1e-300)


@settings(max_examples=N_CASES, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), cur=st.floats(0, 1e3), var=st.floats(1e-12, 1e3))
def test_proposals_never_negative(seed, cur, var):
    assert np.all(propose_folded(np.full(16, cur), var, np.random.default_rng(seed)) >= 0)


@settings(max_examples=N_CASES, deadline=None)
@given(h=st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=30), floor=st.floats(1e-15, 1e-3))
def test_adapted_variance_respects_floor(h, floor):
    ad = AdaptState(np.array([0.0]), n0=0, floor_variance=floor)
    for i, x in enumerate(h):
        ad.update([x], i)
    assert adapt_variance(ad)[0] >= floor


@settings(max_examples=N_CASES, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nx=st.integers(1, 10), ne=st.integers(2, 10), nl=st.integers(1, 10))
def test_increment_reconstruction_is_monotone(seed, nx, ne, nl):
    rng = np.random.default_rng(seed)
    s = ChainState(rng.exponential(1, nx) * (rng.uniform(size=nx) < 0.8),
                   rng.exponential(1, (ne - 1, nl)) * (rng.uniform(size=(ne - 1, nl)) < 0.8), nl, 0.0)
    rho, f = s.rho, s.f
    assert np.all(rho >= 0) and np.all(np.diff(rho) <= 1e-12 * rho.max(initial=1.0))
    assert np.all(f >= 0) and np.all(f[-1] == 0)
    assert np.all(np.diff(f, axis=0) <= 1e-12 * f.max(initial=1.0))
    np.testing.assert_allclose(np.append(rho[:-1] - rho[1:], rho[-1]), s.delta, atol=1e-12 * rho.max(initial=1.0))


# -- chains -------------------------------------------------------------------

TOY_GRID = RadialGrid(0.5, 1.0, 2)
EMPTY = Catalog(np.array([1.0]), np.array([0.0]), np.array([0.0]), np.array([0.0]))


def two_cell_sampler(weights, seed):
    """Target over n_ell in {5, 6} with masses proportional to ``weights``."""
    logw = {5: math.log(weights[0]), 6: math.log(weights[1])}
    cfg = SamplerConfig(n_eps=3, n_ell_init=5, nell_period=1, thin=10)
    return Sampler(EMPTY, TOY_GRID, cfg, PriorSpec(n_ell_support=(5, 6)), rng=np.random.default_rng(seed),
                   loglik=lambda delta, gamma: logw[gamma.shape[1]])


def test_two_cell_toy_occupancy():
    w = (1.0, 2.5)
    summary = run_chain(two_cell_sampler(w, 4), 100_000)
    n_ell = summary.record.n_ell[1:]
    p = w[1] / sum(w)
    sd = math.sqrt(p * (1 - p) / n_ell.size)
    assert abs(np.mean(n_ell == 6) - p) < 3 * sd


def test_continuous_toy_target():
    # exponential target on the single pdf increment, truncated at f_max = 1
    lam = 3.0
    cfg = SamplerConfig(n_eps=2, n_ell_init=1, learn_n_ell=False, thin=20, n0=200)
    s = Sampler(EMPTY, RadialGrid(0.5, 1.0, 1), cfg, PriorSpec(n_ell_support=(1, 1)),
                rng=np.random.default_rng(5), loglik=lambda delta, gamma: -lam * float(gamma.sum()))
    g = run_chain(s, 60_000).record.f[1:, 0, 0]
    g = g[g.size // 5:]
    p = (1 - math.exp(-lam * 0.5)) / (1 - math.exp(-lam))
    sd = math.sqrt(p * (1 - p) / g.size)
    assert abs(np.mean(g < 0.5) - p) < 4 * sd


def test_prior_only_recovers_uniform_n_ell():
    cfg = SamplerConfig(n_eps=4, n_ell_init=7, prior_only=True, thin=10)
    s = Sampler(EMPTY, TOY_GRID, cfg, rng=np.random.default_rng(6))
    rec = run_chain(s, 100_000).record
    counts = np.bincount(rec.n_ell[1:], minlength=11)[5:11]
    assert stats.chisquare(counts).pvalue > 0.01


def test_accept_rule_edges():
    s = two_cell_sampler((1, 1), 0)
    assert all(s._accept(0.0) for _ in range(1000))
    assert not any(s._accept(-math.inf) for _ in range(1000))
    assert not s._accept(float("nan"))


@pytest.fixture(scope="module")
def small_catalog():
    return sample_catalog(SynthModel(n_data=25), np.random.default_rng(0))


def small_grid(cat):
    rp = cat.rp
    return RadialGrid(float(rp.min()) * 0.99, float(rp.max() - rp.min() * 0.99) / 4 * 1.001, 4)


def make_sampler(cat, seed, **kw):
    cfg = SamplerConfig(**{"n_eps": 5, "n_ell_init": 6, "thin": 2, **kw})
    return Sampler(cat, small_grid(cat), cfg, rng=np.random.default_rng(seed))


def test_zero_iterations_records_initial_state(small_catalog):
    s = make_sampler(small_catalog, 0)
    summ = run_chain(s, 0)
    assert len(summ.record) == 1 and summ.record.iters[0] == 0
    assert np.isfinite(summ.record.log_post[0])


def test_same_seed_same_chain(small_catalog):
    a = run_chain(make_sampler(small_catalog, 9), 40).record
    b = run_chain(make_sampler(small_catalog, 9), 40).record
    for k in ("rho", "f", "n_ell", "log_post"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_resume_reproduces_uninterrupted_chain(small_catalog, tmp_path):
    full = run_chain(make_sampler(small_catalog, 11), 40).record
    first = make_sampler(small_catalog, 11, checkpoint_every=20)
    ck = tmp_path / "ck.npz"
    run_chain(first, 20, checkpoint_path=ck)
    second = make_sampler(small_catalog, 999, checkpoint_every=20)
    rec = second.restore(ck)
    resumed = run_chain(second, 20, record=rec).record
    for k in ("iters", "rho", "f", "n_ell", "log_post"):
        np.testing.assert_array_equal(getattr(resumed, k), getattr(full, k))


def test_restore_rejects_foreign_grid(small_catalog, tmp_path):
    s = make_sampler(small_catalog, 1)
    s.checkpoint(tmp_path / "c.npz")
    other = Sampler(small_catalog, RadialGrid(0.1, 0.2, 4), SamplerConfig(n_eps=5, n_ell_init=6))
    with pytest.raises(ValueError):
        other.restore(tmp_path / "c.npz")


def test_cached_posterior_does_not_drift(small_catalog):
    summ = run_chain(make_sampler(small_catalog, 12, checkpoint_every=10, nell_period=3), 60)
    assert len(summ.drift) == 6
    assert max(d for _, d in summ.drift) < 1e-8


def test_drift_detector_fires(small_catalog):
    s = make_sampler(small_catalog, 13, checkpoint_every=5)
    run_chain(s, 5)
    # freeze the moves so nothing resynchronises the corrupted cache
    s._delta_move = s._gamma_sweep = s._n_ell_move = lambda it: None
    s.state.log_post += 1.0
    with pytest.raises(NumericalError):
        run_chain(s, 5)


def test_records_satisfy_constraints(small_catalog):
    rec = run_chain(make_sampler(small_catalog, 14, nell_period=2), 80).record
    assert np.all(np.diff(rec.rho, axis=1) <= 0) and np.all(rec.rho >= 0)
    for f, n in zip(rec.f, rec.n_ell):
        live = f[:, :n]
        assert np.all(live >= 0) and np.all(np.diff(live, axis=0) <= 1e-15) and np.all(live[-1] == 0)
        assert np.all(np.isnan(f[:, n:]))
    assert np.all(np.isfinite(rec.log_post))


def test_tiny_steps_are_almost_always_accepted(small_catalog):
    s = make_sampler(small_catalog, 15, init_rel_std=1e-7, adapt_stop=0, learn_n_ell=False)
    for _ in range(30):
        mh_step(s)
    rates = s.acceptance_rates()
    assert rates["delta"] > 0.9 and rates["gamma"] > 0.9


def test_invalid_initial_n_ell(small_catalog):
    with pytest.raises(ValueError):
        make_sampler(small_catalog, 0, n_ell_init=12)
