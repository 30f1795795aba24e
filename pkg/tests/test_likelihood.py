import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from galmass.data import Catalog, KinematicDatum
from galmass.elgrid import PdfMatrix, PhaseGrid
from galmass.errors import NumericalError
from galmass.likelihood import (
    DensityTerms,
    LikelihoodConfig,
    ModelState,
    PriorSpec,
    convolved_density,
    density_terms,
    gauss_hermite,
    log_posterior,
    log_prior,
    marginal_density,
    normalization_constant,
)
from galmass.potential import DensityProfile, PlummerPotential, RadialGrid
from galmass.projection import cell_volume, volume_table
from galmass.synth import SynthModel, f_value

from oracles import trapezoid_convolution

N_CASES = 1000


def truth_pdf(state_grid, pot, lmax0, model=SynthModel()):
    """WD truth sampled at cell centres, made monotone and pinned."""
    E = state_grid.eps_centers[:, None] * (-pot.phi_at_zero)
    L = state_grid.ell_centers[None, :] * lmax0
    f = f_value(model, E, L)
    f = np.maximum.accumulate(f[::-1], axis=0)[::-1]
    f[-1] = 0.0
    return f / f.max()


@pytest.fixture(scope="module")
def base():
    grid = RadialGrid(0.05, 0.25, 8)
    profile = DensityProfile(grid, PlummerPotential().binned_density(grid))
    pg = PhaseGrid(6, 5)
    s0 = ModelState(profile, PdfMatrix.zeros(pg))
    state = s0.with_pdf(PdfMatrix(pg, truth_pdf(pg, s0.potential, s0.lmax0)))
    rng = np.random.default_rng(3)
    n = 12
    rp = rng.uniform(0.1, 1.5, n)
    ang = rng.uniform(0, 2 * np.pi, n)
    cat = Catalog(rp * np.cos(ang), rp * np.sin(ang), rng.normal(0, 0.2, n), rng.uniform(0.01, 0.05, n))
    return state, cat


def test_zero_pdf(base):
    state, cat = base
    zero = state.with_pdf(PdfMatrix.zeros(state.grid))
    assert marginal_density(0, zero, cat) == 0.0
    assert normalization_constant(zero) == 0.0
    with pytest.raises(NumericalError):
        convolved_density(0, zero, cat)
    assert log_posterior(zero, cat) == -math.inf


def test_one_hot_matches_cell_volume(base):
    state, cat = base
    f = np.zeros((state.n_eps, state.n_ell))
    f[:3, 2] = 0.7  # monotone column: cells (1..3, 3)
    s = state.with_pdf(PdfMatrix(state.grid, f))
    d = cat[4]
    expected = 0.7 * sum(
        cell_volume(4, d, c, 3, s.potential, s.grid, s.lmax0).value for c in (1, 2, 3)
    )
    assert marginal_density(4, s, cat) == pytest.approx(expected, rel=2e-3)


def test_linearity_in_f(base):
    state, cat = base
    rng = np.random.default_rng(0)
    terms = density_terms(state, cat)
    g = state.grid
    f1 = PdfMatrix.from_increments(g, rng.uniform(0, 1, (g.n_eps - 1, g.n_ell))).f
    f2 = PdfMatrix.from_increments(g, rng.uniform(0, 1, (g.n_eps - 1, g.n_ell))).f
    np.testing.assert_allclose(terms.nu(2.0 * f1 + 3.0 * f2), 2.0 * terms.nu(f1) + 3.0 * terms.nu(f2), rtol=1e-13)
    assert terms.z(2.0 * f1) == pytest.approx(2.0 * terms.z(f1), rel=1e-14)


def test_nu_matches_direct_monte_carlo_marginalisation(base):
    state, cat = base
    pot, l0, g, f = state.potential, state.lmax0, state.grid, state.pdf.f
    rng = np.random.default_rng(8)
    scale = -pot.phi_at_zero
    n = 4_000_000
    for k in (0, 3, 7):
        d = cat[k]
        R = d.rp
        s_cap = math.sqrt(pot.r_out**2 - R**2)
        h = math.sqrt(max(-2.0 * float(pot.phi(R)) - d.v3**2, 0.0))
        s3 = rng.uniform(0, s_cap, n)
        u = rng.uniform(-h, h, (n, 2))
        pos = np.column_stack([np.full(n, d.x1), np.full(n, d.x2), s3])
        vel = np.column_stack([u, np.full(n, d.v3)])
        E = pot.phi(np.linalg.norm(pos, axis=1)) + 0.5 * np.sum(vel * vel, axis=1)
        L = np.linalg.norm(np.cross(pos, vel), axis=1)
        bound = E < 0
        ci = np.minimum(np.floor((E[bound] / scale + 1.0) * g.n_eps).astype(int), g.n_eps - 1)
        di = np.minimum(np.floor(L[bound] / l0 * g.n_ell).astype(int), g.n_ell - 1)
        vals = np.zeros(n)
        vals[bound] = f[ci, di]
        box = (2 * h) ** 2 * s_cap
        est, se = box * vals.mean(), box * vals.std() / math.sqrt(n)
        nu = marginal_density(k, state, cat)
        assert abs(nu - est) <= 0.02 * est + 3 * se


def test_normalisation_matches_monte_carlo(base):
    state, _ = base
    pot = state.potential
    r_lo, r_hi = state.window
    rng = np.random.default_rng(4)
    n = 20_000
    R = np.sqrt(rng.uniform(r_lo**2, r_hi**2, n))
    vesc = np.sqrt(-2.0 * pot.phi(R))
    v3 = rng.uniform(-1, 1, n) * vesc
    nu = np.einsum("kij,ij->k", volume_table(R, v3, pot, state.grid, state.lmax0), state.pdf.f)
    w = math.pi * (r_hi**2 - r_lo**2) * 2 * vesc
    est = np.mean(nu * w)
    se = np.std(nu * w) / math.sqrt(n)
    z = normalization_constant(state)
    assert abs(z - est) <= 0.02 * z + 3 * se


def test_convolved_density_integrates_to_one(base):
    state, _ = base
    pot = state.potential
    r_lo, r_hi = state.window
    xr, wr = np.polynomial.legendre.leggauss(48)
    xv, wv = np.polynomial.legendre.leggauss(48)
    R = r_lo + (r_hi - r_lo) * 0.5 * (xr + 1)
    wR = (r_hi - r_lo) * 0.5 * wr * 2 * np.pi * R
    total = 0.0
    z = normalization_constant(state)
    for Ri, wi in zip(R, wR):
        ve = math.sqrt(-2.0 * float(pot.phi(Ri)))
        v3 = ve * xv
        nu = np.einsum("kij,ij->k", volume_table(np.full(v3.size, Ri), v3, pot, state.grid, state.lmax0), state.pdf.f)
        total += wi * ve * np.sum(wv * nu) / z
    assert 0.99 <= total <= 1.01


def test_sigma_zero_short_circuits(base):
    state, cat = base
    exact = Catalog(cat.x1, cat.x2, cat.v3, np.zeros(len(cat)))
    z = normalization_constant(state)
    for k in (0, 5):
        assert convolved_density(k, state, exact) == pytest.approx(marginal_density(k, state, exact) / z, rel=1e-13)


def test_convolution_of_constant_is_identity():
    x, w = gauss_hermite(7)
    assert np.sum(w) == pytest.approx(1.0, rel=1e-14)
    vol = np.ones((2, 7, 2, 1))
    terms = DensityTerms(None, 1.0, PhaseGrid(2, 1), vol, np.tile(w, (2, 1)), np.ones((2, 1)))
    f = np.array([[0.4], [0.0]])
    np.testing.assert_allclose(terms.convolved(f), 0.4 / terms.z(f), rtol=1e-14)


def test_gauss_hermite_moments():
    x, w = gauss_hermite(7)
    # exact for polynomials up to degree 13 under N(0, 1)
    for p, m in [(0, 1), (2, 1), (4, 3), (6, 15), (8, 105), (12, 10395)]:
        assert np.sum(w * x**p) == pytest.approx(m, rel=1e-10)


def test_gauss_hermite_tracks_trapezoid(base):
    state, cat = base
    pot, g, l0, f = state.potential, state.grid, state.lmax0, state.pdf.f
    x, w = gauss_hermite(7)
    for k in range(4):
        d = cat[k]

        def nu(v):
            v = np.atleast_1d(v)
            return np.einsum("kij,ij->k", volume_table(np.full(v.size, d.rp), v, pot, g, l0), f)

        ref = trapezoid_convolution(nu, d.v3, d.sigma_v3)
        gh = np.sum(w * nu(d.v3 - d.sigma_v3 * x))
        # piecewise-constant f leaves C1 kinks in nu(v3), which caps the rule's accuracy
        assert gh == pytest.approx(ref, rel=5e-3)


def test_terms_agree_with_single_datum_operation(base):
    state, cat = base
    terms = density_terms(state, cat)
    all_k = terms.convolved(state.pdf.f)
    for k in (1, 9):
        assert convolved_density(k, state, cat) == pytest.approx(all_k[k], rel=1e-12)


def test_impossible_datum_gives_minus_infinity(base):
    state, cat = base
    far = Catalog(np.array([0.5]), np.array([0.0]), np.array([50.0]), np.array([0.0]))
    assert log_posterior(state, far) == -math.inf


def test_duplicating_a_datum_adds_its_term(base):
    state, cat = base
    one = log_posterior(state, cat)
    dup = Catalog(*(np.append(getattr(cat, k), getattr(cat, k)[2]) for k in ("x1", "x2", "v3", "sigma_v3")))
    two = log_posterior(state, dup)
    assert two - one == pytest.approx(math.log(convolved_density(2, state, cat)), rel=1e-10)


def test_single_datum_hand_composed(base):
    state, _ = base
    g = state.grid
    f = np.zeros((g.n_eps, g.n_ell))
    f[0, 0] = 0.3
    s = state.with_pdf(PdfMatrix(g, f))
    d = KinematicDatum(0.3, 0.1, 0.05)
    cat = Catalog.from_data([d])
    vol = cell_volume(0, d, 1, 1, s.potential, g, s.lmax0).value
    z = normalization_constant(s)
    priors = PriorSpec()
    expected = math.log(0.3 * vol / z) - math.log(6)
    assert log_posterior(s, cat, priors) == pytest.approx(expected, rel=1e-3)


def test_prior_band_edges(base):
    state, _ = base
    priors = PriorSpec()
    lo, hi = priors.density_bounds(state.profile.grid)
    ref = priors.nfw(state.profile.grid.centers)
    np.testing.assert_allclose(lo, 1e-3 * ref, rtol=1e-14)
    np.testing.assert_allclose(hi, 1e3 * ref, rtol=1e-14)
    assert log_prior(state, priors) == pytest.approx(-math.log(6))
    assert priors.log_prior_n_ell(11) == -math.inf
    with pytest.raises(ValueError):
        PriorSpec(n_ell_support=(6, 5))
    with pytest.raises(ValueError):
        PriorSpec(rho0=1e3)


def test_f_above_cap_is_outside_support(base):
    state, _ = base
    f = state.pdf.f.copy()
    f[0, 0] = 2.0
    assert log_prior(state.with_pdf(PdfMatrix(state.grid, f)), PriorSpec()) == -math.inf


@pytest.fixture(scope="module")
def terms(base):
    state, cat = base
    return state, cat, density_terms(state, cat)


@settings(max_examples=N_CASES, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(1e-6, 1e6))
def test_scale_invariance(terms, seed, alpha):
    state, _, t = terms
    g = state.grid
    rng = np.random.default_rng(seed)
    f = PdfMatrix.from_increments(g, rng.uniform(0.01, 1, (g.n_eps - 1, g.n_ell))).f
    np.testing.assert_allclose(t.convolved(alpha * f), t.convolved(f), rtol=1e-10)
    assert t.log_likelihood(alpha * f) == pytest.approx(t.log_likelihood(f), rel=1e-10, abs=1e-9)


@settings(max_examples=N_CASES, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_finite_on_positive_pdf(terms, seed):
    state, _, t = terms
    g = state.grid
    rng = np.random.default_rng(seed)
    f = PdfMatrix.from_increments(g, rng.uniform(0.01, 1, (g.n_eps - 1, g.n_ell))).f
    assert math.isfinite(t.log_likelihood(f))


@settings(max_examples=N_CASES, deadline=None)
@given(b=st.integers(0, 7), factor=st.floats(-6, 6))
def test_prior_support_band(base, b, factor):
    state, _ = base
    priors = PriorSpec()
    grid = state.profile.grid
    rho = priors.nfw(grid.centers).copy()
    rho[b] *= 10.0**factor
    # keep the profile non-increasing so only the band decides
    rho = np.minimum.accumulate(rho)
    s = ModelState(DensityProfile(grid, rho), state.pdf)
    lo, hi = priors.density_bounds(grid)
    inside = np.all((rho >= lo) & (rho <= hi))
    assert (log_prior(s, priors) > -math.inf) == inside


def test_model_state_rederives_potential(base):
    state, _ = base
    grid = state.profile.grid
    heavier = ModelState(DensityProfile(grid, 2.0 * state.profile.rho), state.pdf)
    assert heavier.potential.phi_at_zero == pytest.approx(2.0 * state.potential.phi_at_zero)
    assert heavier.lmax0 > state.lmax0
    assert state.with_pdf(PdfMatrix.zeros(state.grid)).potential is state.potential


def test_likelihood_config_nodes_are_used(base):
    state, cat = base
    t = density_terms(state, cat[:2], LikelihoodConfig(gh_nodes=5))
    assert t.volumes.shape[1] == 5 and t.node_weights.shape == (2, 5)
