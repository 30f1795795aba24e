"""Adaptive Metropolis-Hastings over density and pdf increments.

The chain state stores increments rather than values,

    rho_b   = rho_{b+1} + delta_b,       rho_{n_x + 1} = 0
    f_{c,d} = f_{c+1,d} + gamma_{c,d},   f_{n_eps,d}  = 0,

so any non-negative increment vector gives a monotone, non-negative
profile and pdf matrix.  Increments are proposed from folded normals,
which is a symmetric kernel on [0, inf), so acceptance reduces to the
posterior ratio.

One iteration is: a joint move of all density increments, a sweep of
single-site moves over the pdf increments, and (every ``nell_period``
iterations) a move of the number of angular-momentum bins.
"""

from dataclasses import dataclass, field, replace
import json
import math

import numpy as np

from .diagnostics import ChainRecord
from .elgrid import PdfMatrix, PhaseGrid, resample
from .errors import ConstraintViolation, NumericalError
from .likelihood import LikelihoodConfig, ModelState, PriorSpec, density_terms
from .potential import DensityProfile

CHECKPOINT_VERSION = 1


def propose_folded(current, variance, rng):
    """|z| with z ~ N(current, variance); works elementwise on arrays."""
    current = np.asarray(current, dtype=float)
    z = current + np.sqrt(variance) * rng.standard_normal(current.shape)
    return np.abs(z)


def folded_normal_density(b, a, variance):
    """Density of proposing b from a; symmetric in (a, b)."""
    sd = math.sqrt(variance)
    norm = 1.0 / (sd * math.sqrt(2.0 * math.pi))
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    return norm * (np.exp(-0.5 * ((b - a) / sd) ** 2) + np.exp(-0.5 * ((b + a) / sd) ** 2))


@dataclass
class AdaptState:
    """Running first and second moments of a block of coordinates since iteration n0."""

    init_variance: np.ndarray
    n0: int = 1000
    floor_variance: float = 1e-12
    count: int = 0
    s1: np.ndarray = None
    s2: np.ndarray = None

    def __post_init__(self):
        self.init_variance = np.maximum(np.asarray(self.init_variance, dtype=float), self.floor_variance)
        if self.s1 is None:
            self.s1 = np.zeros_like(self.init_variance)
            self.s2 = np.zeros_like(self.init_variance)

    def update(self, x, it):
        if it >= self.n0:
            x = np.asarray(x, dtype=float)
            self.count += 1
            self.s1 += x
            self.s2 += x * x


def adapt_variance(adapt, history=None):
    """Proposal variance from the two-moment formula, floored.

    ``history`` (iterations since n0, along axis 0) may be given instead
    of the running sums held in ``adapt``.
    """
    if history is not None:
        h = np.asarray(history, dtype=float)
        n = h.shape[0]
        s1, s2 = h.sum(axis=0), (h * h).sum(axis=0)
    else:
        n, s1, s2 = adapt.count, adapt.s1, adapt.s2
    if n < 2:
        return adapt.init_variance.copy()
    var = s2 / n - (s1 / n) ** 2
    return np.maximum(var, adapt.floor_variance)


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 1000
    thin: int = 10
    checkpoint_every: int = 0
    n_eps: int = 8
    n_ell_init: int = 7
    learn_n_ell: bool = True
    nell_period: int = 10
    n0: int = 1000
    floor_variance: float = 1e-12
    init_rel_std: float = 0.05
    init_f_top: float = 0.5
    adapt_stop: int = -1  # freeze adaptation from this iteration (-1: never)
    target_accept_block: float = 0.234
    target_accept_site: float = 0.44
    prior_only: bool = False
    check_drift: bool = True

    def __post_init__(self):
        if self.n_iter < 0 or self.thin < 1 or self.n_eps < 2 or self.n_ell_init < 1:
            raise ValueError("invalid sampler configuration")


@dataclass
class ChainState:
    delta: np.ndarray
    gamma: np.ndarray
    n_ell: int
    log_post: float
    iter: int = 0

    @property
    def rho(self):
        return np.cumsum(self.delta[::-1])[::-1]

    @property
    def f(self):
        f = np.zeros((self.gamma.shape[0] + 1, self.gamma.shape[1]))
        f[:-1] = np.cumsum(self.gamma[::-1], axis=0)[::-1]
        return f


def _rm_gain(it):
    return min(0.5, 5.0 / (it + 1.0) ** 0.6)


def _site_initial_var(gamma, rel):
    scale = max(float(np.mean(gamma)), 1e-6)
    return (rel * np.where(gamma > 0, gamma, scale)) ** 2


class Sampler:
    """Holds the chain state, adaptation statistics and likelihood caches."""

    def __init__(self, catalog, radial_grid, cfg=SamplerConfig(), priors=PriorSpec(),
                 lik_cfg=LikelihoodConfig(), rng=None, loglik=None):
        self.catalog = catalog
        self.radial_grid = radial_grid
        self.cfg = cfg
        self.priors = priors
        self.lik_cfg = lik_cfg
        self.rng = rng if rng is not None else np.random.default_rng()
        self._custom_loglik = loglik
        lo, hi = priors.n_ell_support
        if not cfg.learn_n_ell:
            lo = hi = cfg.n_ell_init
        self.n_ell_support = (lo, hi)
        if not lo <= cfg.n_ell_init <= hi:
            raise ValueError("initial n_ell outside the n_ell support")

        rho0 = priors.nfw(radial_grid.centers)
        delta = np.append(rho0[:-1] - rho0[1:], rho0[-1])
        ne = cfg.n_eps
        gamma = np.full((ne - 1, cfg.n_ell_init), cfg.init_f_top / (ne - 1))
        self.state = ChainState(delta, gamma, cfg.n_ell_init, -math.inf, 0)
        self.delta_adapt = AdaptState((cfg.init_rel_std * delta) ** 2, cfg.n0, cfg.floor_variance)
        self.delta_log_scale = 0.0
        self.gamma_adapt = {}
        self.gamma_log_scale = {}
        self.accepts = {"delta": [0, 0], "gamma": [0, 0], "n_ell": [0, 0]}
        self._refresh()

    # -- likelihood plumbing ----------------------------------------------

    def _model(self, delta, gamma):
        grid = PhaseGrid(gamma.shape[0] + 1, gamma.shape[1])
        profile = DensityProfile.from_increments(self.radial_grid, delta)
        return ModelState(profile, PdfMatrix.from_increments(grid, gamma), self.lik_cfg.r_out_factor)

    def _prior(self, rho, f, n_ell):
        lo, hi = self.priors.density_bounds(self.radial_grid)
        if np.any(rho < lo) or np.any(rho > hi) or np.any(f > self.priors.f_max):
            return -math.inf
        a, b = self.n_ell_support
        if not a <= n_ell <= b:
            return -math.inf
        return -math.log(b - a + 1)

    def _terms(self, delta, gamma):
        """(volumes collapsed over error nodes, half window volumes) for a density."""
        if self.cfg.prior_only or self._custom_loglik is not None:
            return None
        t = density_terms(self._model(delta, gamma), self.catalog, self.lik_cfg)
        vc = np.einsum("knij,kn->kij", t.volumes, t.node_weights)
        return vc, 0.5 * t.window_volumes

    def _loglik(self, terms, f, delta=None, gamma=None):
        if self._custom_loglik is not None:
            return float(self._custom_loglik(delta, gamma))
        if terms is None:
            return 0.0
        vc, wz = terms
        z = float(np.sum(wz * f))
        nt = np.einsum("kij,ij->k", vc, f)
        if not z > 0.0 or np.any(nt <= 0.0):
            return -math.inf
        return float(np.sum(np.log(nt)) - nt.size * math.log(z))

    def _refresh(self):
        s = self.state
        self.terms = self._terms(s.delta, s.gamma)
        s.log_post = self._loglik(self.terms, s.f, s.delta, s.gamma) + self._prior(s.rho, s.f, s.n_ell)

    def fresh_log_post(self):
        s = self.state
        terms = self._terms(s.delta, s.gamma)
        return self._loglik(terms, s.f, s.delta, s.gamma) + self._prior(s.rho, s.f, s.n_ell)

    # -- moves -------------------------------------------------------------

    def _adapting(self, it):
        return self.cfg.adapt_stop < 0 or it < self.cfg.adapt_stop

    def _gamma_adapt(self, n_ell, gamma):
        if n_ell not in self.gamma_adapt:
            self.gamma_adapt[n_ell] = AdaptState(
                _site_initial_var(gamma, self.cfg.init_rel_std), self.cfg.n0, self.cfg.floor_variance
            )
            self.gamma_log_scale[n_ell] = np.zeros_like(gamma)
        return self.gamma_adapt[n_ell], self.gamma_log_scale[n_ell]

    def _delta_move(self, it):
        s = self.state
        d = s.delta.size
        var = adapt_variance(self.delta_adapt) * (2.38**2 / d) * math.exp(self.delta_log_scale)
        prop = propose_folded(s.delta, var, self.rng)
        rho = np.cumsum(prop[::-1])[::-1]
        f = s.f
        lp = self._prior(rho, f, s.n_ell)
        terms = None
        if lp > -math.inf:
            try:
                terms = self._terms(prop, s.gamma)
                lp += self._loglik(terms, f, prop, s.gamma)
            except (ConstraintViolation, NumericalError):
                lp = -math.inf
        ok = self._accept(lp - s.log_post)
        if ok:
            s.delta, s.log_post, self.terms = prop, lp, terms
        self.accepts["delta"][0] += ok
        self.accepts["delta"][1] += 1
        if self._adapting(it):
            self.delta_log_scale += _rm_gain(it) * (float(ok) - self.cfg.target_accept_block)
            self.delta_adapt.update(s.delta, it)

    def _gamma_sweep(self, it):
        s = self.state
        adapt, log_scale = self._gamma_adapt(s.n_ell, s.gamma)
        var = adapt_variance(adapt) * np.exp(log_scale)
        ne1, nl = s.gamma.shape
        prop_all = propose_folded(s.gamma, var, self.rng)
        u_all = self.rng.uniform(size=s.gamma.shape)
        gamma = s.gamma.copy()
        colsum = gamma.sum(axis=0)
        custom = self._custom_loglik is not None
        if self.terms is not None:
            vc, wz = self.terms
            # changing gamma[c, d] shifts f[0..c, d]: cumulative sums over c
            cvc = np.cumsum(vc[:, :-1, :], axis=1)
            cwz = np.cumsum(wz[:-1, :], axis=0)
            f = s.f
            nt = np.einsum("kij,ij->k", vc, f)
            z = float(np.sum(wz * f))
            base_ll = float(np.sum(np.log(nt)) - nt.size * math.log(z)) if z > 0 and np.all(nt > 0) else -math.inf
        n_acc = 0
        gain = _rm_gain(it)
        for c in range(ne1):
            for d in range(nl):
                new = prop_all[c, d]
                step = new - gamma[c, d]
                if colsum[d] + step > self.priors.f_max:
                    ok = False
                elif custom:
                    trial = gamma.copy()
                    trial[c, d] = new
                    ll_new = self._loglik(None, None, s.delta, trial)
                    ll_old = self._loglik(None, None, s.delta, gamma)
                    ok = math.log(u_all[c, d]) < ll_new - ll_old if ll_new > -math.inf else False
                elif self.terms is None:
                    ok = True
                else:
                    nt_new = nt + step * cvc[:, c, d]
                    z_new = z + step * cwz[c, d]
                    if z_new > 0 and np.all(nt_new > 0):
                        ll_new = float(np.sum(np.log(nt_new)) - nt_new.size * math.log(z_new))
                    else:
                        ll_new = -math.inf
                    ok = ll_new > -math.inf and math.log(u_all[c, d]) < ll_new - base_ll
                    if ok:
                        nt, z, base_ll = nt_new, z_new, ll_new
                if ok:
                    gamma[c, d] = new
                    colsum[d] += step
                    n_acc += 1
                if self._adapting(it):
                    log_scale[c, d] += gain * (float(ok) - self.cfg.target_accept_site)
        s.gamma = gamma
        # resynchronise the cached posterior from scratch
        s.log_post = self._loglik(self.terms, s.f, s.delta, s.gamma) + self._prior(s.rho, s.f, s.n_ell)
        self.accepts["gamma"][0] += n_acc
        self.accepts["gamma"][1] += ne1 * nl
        if self._adapting(it):
            adapt.update(s.gamma, it)

    def _n_ell_move(self, it):
        s = self.state
        a, b = self.n_ell_support
        new_n = int(self.rng.integers(a, b + 1))
        u = self.rng.uniform()
        self.accepts["n_ell"][1] += 1
        if new_n == s.n_ell:
            self.accepts["n_ell"][0] += 1
            return
        old_pdf = PdfMatrix(PhaseGrid(s.gamma.shape[0] + 1, s.n_ell), s.f)
        new_pdf = resample(old_pdf, PhaseGrid(old_pdf.grid.n_eps, new_n))
        gamma = new_pdf.increments()
        lp = self._prior(s.rho, new_pdf.f, new_n)
        terms = None
        if lp > -math.inf:
            try:
                terms = self._terms(s.delta, gamma)
                lp += self._loglik(terms, new_pdf.f, s.delta, gamma)
            except (ConstraintViolation, NumericalError):
                lp = -math.inf
        if lp > -math.inf and math.log(u) < lp - s.log_post:
            s.gamma, s.n_ell, s.log_post, self.terms = gamma, new_n, lp, terms
            self.accepts["n_ell"][0] += 1

    def _accept(self, log_ratio):
        u = self.rng.uniform()
        if not log_ratio > -math.inf:
            return False
        return math.log(u) < log_ratio if log_ratio < 0 else True

    # -- orchestration -----------------------------------------------------

    def step(self):
        s = self.state
        it = s.iter
        self._delta_move(it)
        self._gamma_sweep(it)
        if self.n_ell_support[0] < self.n_ell_support[1] and (it + 1) % self.cfg.nell_period == 0:
            self._n_ell_move(it)
        s.iter += 1
        return s

    def acceptance_rates(self):
        return {k: (a / n if n else float("nan")) for k, (a, n) in self.accepts.items()}

    # -- checkpointing -----------------------------------------------------

    def checkpoint(self, path, record=None):
        s = self.state
        header = {
            "version": CHECKPOINT_VERSION,
            "n_x": int(s.delta.size),
            "n_eps": int(s.gamma.shape[0] + 1),
            "n_ell": int(s.n_ell),
            "iter": int(s.iter),
            "log_post": s.log_post,
            "delta_log_scale": self.delta_log_scale,
            "delta_adapt_count": self.delta_adapt.count,
            "gamma_adapt_counts": {str(k): v.count for k, v in self.gamma_adapt.items()},
            "accepts": self.accepts,
            "rng": self.rng.bit_generator.state,
            "grid": [self.radial_grid.r_min, self.radial_grid.delta_r, self.radial_grid.n_x],
        }
        arrays = {
            "delta": s.delta,
            "gamma": s.gamma,
            "delta_init_var": self.delta_adapt.init_variance,
            "delta_s1": self.delta_adapt.s1,
            "delta_s2": self.delta_adapt.s2,
        }
        for k, a in self.gamma_adapt.items():
            arrays[f"g{k}_init_var"] = a.init_variance
            arrays[f"g{k}_s1"] = a.s1
            arrays[f"g{k}_s2"] = a.s2
            arrays[f"g{k}_log_scale"] = self.gamma_log_scale[k]
        if record is not None:
            for name in ("iters", "rho", "f", "n_ell", "log_post"):
                arrays[f"rec_{name}"] = getattr(record, name)
        np.savez(path, header=np.array(json.dumps(header)), **arrays)

    def restore(self, path):
        """Load a checkpoint written by :meth:`checkpoint`; returns the stored record (or None)."""
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            g = self.radial_grid
            if header["grid"] != [g.r_min, g.delta_r, g.n_x]:
                raise ValueError("checkpoint radial grid does not match the catalog")
            arr = {k: z[k] for k in z.files}
        self.state = ChainState(arr["delta"].copy(), arr["gamma"].copy(), header["n_ell"], -math.inf, header["iter"])
        self.delta_log_scale = header["delta_log_scale"]
        self.delta_adapt = AdaptState(arr["delta_init_var"], self.cfg.n0, self.cfg.floor_variance,
                                      header["delta_adapt_count"], arr["delta_s1"].copy(), arr["delta_s2"].copy())
        self.gamma_adapt, self.gamma_log_scale = {}, {}
        for k, cnt in header["gamma_adapt_counts"].items():
            n = int(k)
            self.gamma_adapt[n] = AdaptState(arr[f"g{k}_init_var"], self.cfg.n0, self.cfg.floor_variance,
                                             cnt, arr[f"g{k}_s1"].copy(), arr[f"g{k}_s2"].copy())
            self.gamma_log_scale[n] = arr[f"g{k}_log_scale"].copy()
        self.accepts = {k: list(v) for k, v in header["accepts"].items()}
        self.rng.bit_generator.state = header["rng"]
        self._refresh()
        if "rec_iters" in arr:
            return ChainRecord(arr["rec_iters"], arr["rec_rho"], arr["rec_f"], arr["rec_n_ell"],
                               arr["rec_log_post"], (g.r_min, g.delta_r, g.n_x))
        return None


def mh_step(sampler):
    """Advance the chain by one iteration and return the new state."""
    return sampler.step()


@dataclass
class _Recorder:
    n_eps: int
    max_ell: int
    iters: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    f: list = field(default_factory=list)
    n_ell: list = field(default_factory=list)
    log_post: list = field(default_factory=list)

    def add(self, s):
        pad = np.full((self.n_eps, self.max_ell), np.nan)
        pad[:, : s.n_ell] = s.f
        self.iters.append(s.iter)
        self.rho.append(s.rho)
        self.f.append(pad)
        self.n_ell.append(s.n_ell)
        self.log_post.append(s.log_post)

    def extend(self, rec):
        for i in range(len(rec)):
            self.iters.append(int(rec.iters[i]))
            self.rho.append(rec.rho[i])
            self.f.append(rec.f[i])
            self.n_ell.append(int(rec.n_ell[i]))
            self.log_post.append(float(rec.log_post[i]))

    def record(self, grid):
        return ChainRecord(
            np.asarray(self.iters, dtype=int),
            np.asarray(self.rho, dtype=float).reshape(len(self.iters), -1),
            np.asarray(self.f, dtype=float).reshape(len(self.iters), self.n_eps, self.max_ell),
            np.asarray(self.n_ell, dtype=int),
            np.asarray(self.log_post, dtype=float),
            (grid.r_min, grid.delta_r, grid.n_x),
        )


@dataclass
class ChainSummary:
    record: ChainRecord
    acceptance: dict
    final_state: ChainState
    drift: list


def run_chain(sampler, n_iter=None, checkpoint_path=None, record=None, progress=None):
    """Run ``n_iter`` iterations (default ``cfg.n_iter``), recording every ``cfg.thin``-th state.

    With ``record`` (from :meth:`Sampler.restore`) the new draws extend it.
    The initial state is recorded when starting from iteration 0.
    """
    cfg = sampler.cfg
    n_iter = cfg.n_iter if n_iter is None else n_iter
    rec = _Recorder(cfg.n_eps, sampler.n_ell_support[1])
    if record is not None:
        rec.extend(record)
    elif sampler.state.iter == 0:
        rec.add(sampler.state)
    drift = []
    for _ in range(n_iter):
        s = sampler.step()
        if s.iter % cfg.thin == 0:
            rec.add(s)
        if cfg.checkpoint_every and s.iter % cfg.checkpoint_every == 0:
            if cfg.check_drift:
                fresh = sampler.fresh_log_post()
                if np.isfinite(fresh) or np.isfinite(s.log_post):
                    rel = abs(fresh - s.log_post) / max(abs(fresh), 1.0)
                    drift.append((s.iter, rel))
                    if rel > 1e-8:
                        raise NumericalError(f"cached log posterior drifted by {rel:.3g} at iteration {s.iter}")
            if checkpoint_path is not None:
                sampler.checkpoint(checkpoint_path, rec.record(sampler.radial_grid))
        if progress is not None:
            progress(s)
    return ChainSummary(rec.record(sampler.radial_grid), sampler.acceptance_rates(), replace(sampler.state), drift)
