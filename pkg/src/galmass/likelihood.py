"""Observable density, its normalisation, error convolution and the posterior.

All density-dependent work is gathered in :class:`DensityTerms`, which holds
cell volumes for every datum (at each Gauss-Hermite pseudo-velocity) and
the full phase-space volume of each cell inside the observed window.  Any
pdf matrix on the same phase grid can then be scored by a pair of tensor
contractions, which is what makes pdf-only moves cheap in the sampler.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .data import Catalog, KinematicDatum  # noqa: F401  (re-exported)
from .elgrid import PdfMatrix, PhaseGrid
from .errors import NumericalError
from .potential import DensityProfile, lmax_zero, solve_potential
from .projection import OverlapConfig, phase_volume_table, volume_table


@dataclass(frozen=True)
class PriorSpec:
    nfw_span_decades: float = 3.0
    n_ell_support: tuple = (5, 10)
    rho0: float = 0.1
    r_s: float = 1.0
    rho0_range: tuple = (1e-4, 1e2)
    rs_range: tuple = (0.05, 50.0)
    f_max: float = 1.0

    def __post_init__(self):
        lo, hi = self.n_ell_support
        if not (1 <= lo <= hi):
            raise ValueError("empty n_ell support")
        for a, b in (self.rho0_range, self.rs_range):
            if not a <= b:
                raise ValueError("empty hyperparameter interval")
        if not (self.rho0_range[0] <= self.rho0 <= self.rho0_range[1]):
            raise ValueError("rho0 outside its configured range")
        if not (self.rs_range[0] <= self.r_s <= self.rs_range[1]):
            raise ValueError("r_s outside its configured range")
        if self.nfw_span_decades <= 0 or self.f_max <= 0:
            raise ValueError("prior widths must be positive")

    def nfw(self, r):
        x = np.asarray(r, dtype=float) / self.r_s
        return self.rho0 / (x * (1.0 + x) ** 2)

    def density_bounds(self, grid):
        ref = self.nfw(grid.centers)
        span = 10.0**self.nfw_span_decades
        return ref / span, ref * span

    def log_prior_n_ell(self, n_ell):
        lo, hi = self.n_ell_support
        if lo <= n_ell <= hi:
            return -math.log(hi - lo + 1)
        return -math.inf


@dataclass(frozen=True)
class LikelihoodConfig:
    overlap: OverlapConfig = OverlapConfig()
    gh_nodes: int = 7
    r_out_factor: float = 2.0
    z_nodes: int = 64


@dataclass(frozen=True)
class ModelState:
    profile: DensityProfile
    pdf: PdfMatrix
    r_out_factor: float = 2.0
    potential: object = field(init=False, repr=False)
    lmax0: float = field(init=False)

    def __post_init__(self):
        pot = solve_potential(self.profile, r_out=self.r_out_factor * self.profile.grid.outer_edge)
        object.__setattr__(self, "potential", pot)
        object.__setattr__(self, "lmax0", lmax_zero(pot))

    @property
    def grid(self):
        return self.pdf.grid

    @property
    def n_ell(self):
        return self.pdf.grid.n_ell

    @property
    def n_eps(self):
        return self.pdf.grid.n_eps

    @property
    def window(self):
        g = self.profile.grid
        return g.r_min, g.outer_edge

    def with_pdf(self, pdf):
        """Same density, new pdf (reuses the solved potential)."""
        new = object.__new__(ModelState)
        for k in ("profile", "r_out_factor", "potential", "lmax0"):
            object.__setattr__(new, k, getattr(self, k))
        object.__setattr__(new, "pdf", pdf)
        return new


def gauss_hermite(n):
    """Nodes/weights so that E[g(e)] for e ~ N(0, 1) is sum(w * g(x))."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


@dataclass
class DensityTerms:
    """Density-dependent quantities for one (profile, phase grid, catalog)."""

    potential: object
    lmax0: float
    grid: PhaseGrid
    volumes: np.ndarray  # (n_data, n_nodes, n_eps, n_ell)
    node_weights: np.ndarray  # (n_data, n_nodes)
    window_volumes: np.ndarray  # (n_eps, n_ell); full-sphere, full line of sight

    def nu(self, f):
        """Unnormalised marginal density at every datum and pseudo-velocity."""
        return np.einsum("knij,ij->kn", self.volumes, f)

    def z(self, f):
        return 0.5 * float(np.sum(self.window_volumes * f))

    def convolved(self, f):
        z = self.z(f)
        if not z > 0.0:
            raise NumericalError("normalisation constant is zero for a non-empty catalog")
        return np.sum(self.nu(f) * self.node_weights, axis=1) / z

    def log_likelihood(self, f):
        z = self.z(f)
        if not z > 0.0:
            return -math.inf
        nt = np.sum(self.nu(f) * self.node_weights, axis=1)
        if np.any(nt <= 0.0):
            return -math.inf
        return float(np.sum(np.log(nt)) - nt.size * math.log(z))


def density_terms(state, catalog, cfg=LikelihoodConfig()):
    """Volumes of every cell for every datum, plus the window volumes."""
    pot, lmax0, grid = state.potential, state.lmax0, state.grid
    rp = np.asarray(catalog.rp, dtype=float)
    v3 = np.asarray(catalog.v3, dtype=float)
    sig = np.asarray(catalog.sigma_v3, dtype=float)
    if np.any(sig > 0):
        x, w = gauss_hermite(cfg.gh_nodes)
        # pseudo-data at v3 - sigma * x; error-free rows only need one column
        vv = v3[:, None] - sig[:, None] * x[None, :]
        ww = np.where(sig[:, None] > 0, w[None, :], 0.0)
        ww[sig == 0, cfg.gh_nodes // 2] = 1.0
        vv[sig == 0] = v3[sig == 0, None]
        vol = volume_table(np.repeat(rp, x.size), vv.ravel(), pot, grid, lmax0, cfg.overlap)
        vol = vol.reshape(rp.size, x.size, grid.n_eps, grid.n_ell)
    else:
        vol = volume_table(rp, v3, pot, grid, lmax0, cfg.overlap)[:, None]
        ww = np.ones((rp.size, 1))
    r_lo, r_hi = state.window
    wv = phase_volume_table(pot, grid, lmax0, r_lo, r_hi, cfg.z_nodes)
    return DensityTerms(pot, lmax0, grid, vol, ww, wv)


def marginal_density(k, state, catalog, cfg=LikelihoodConfig()):
    """nu for datum k at its observed velocity (no error convolution)."""
    d = catalog[k]
    vol = volume_table(np.array([d.rp]), np.array([d.v3]), state.potential, state.grid, state.lmax0, cfg.overlap)
    return float(np.sum(vol[0] * state.pdf.f))


def normalization_constant(state, cfg=LikelihoodConfig()):
    """Integral of nu over projected radii in the window and all line-of-sight velocities."""
    r_lo, r_hi = state.window
    wv = phase_volume_table(state.potential, state.grid, state.lmax0, r_lo, r_hi, cfg.z_nodes)
    return 0.5 * float(np.sum(wv * state.pdf.f))


def convolved_density(k, state, catalog, cfg=LikelihoodConfig()):
    """Error-convolved, normalised density of datum k."""
    terms = density_terms(state, catalog[k : k + 1], cfg)
    return float(terms.convolved(state.pdf.f)[0])


def log_prior(state, priors):
    """Box priors on density and pdf plus the discrete-uniform prior on n_ell."""
    lo, hi = priors.density_bounds(state.profile.grid)
    rho = state.profile.rho
    if np.any(rho < lo) or np.any(rho > hi):
        return -math.inf
    f = state.pdf.f
    if np.any(f < 0.0) or np.any(f > priors.f_max):
        return -math.inf
    return priors.log_prior_n_ell(state.n_ell)


def log_posterior(state, catalog, priors=PriorSpec(), cfg=LikelihoodConfig(), terms=None):
    """Unnormalised log posterior; -inf for states outside the prior support."""
    lp = log_prior(state, priors)
    if lp == -math.inf:
        return lp
    if terms is None:
        terms = density_terms(state, catalog, cfg)
    return terms.log_likelihood(state.pdf.f) + lp
