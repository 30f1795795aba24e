"""Posterior summaries: HPD intervals, marginal modes, enclosed mass and a
split-chain drift check."""

from dataclasses import dataclass
import csv
import math

import numpy as np
from scipy import stats

from .potential import DensityProfile, RadialGrid


@dataclass
class ChainRecord:
    """Thinned chain: per-sample density vector, padded pdf matrix, n_ell, log posterior."""

    iters: np.ndarray
    rho: np.ndarray  # (n, n_x)
    f: np.ndarray  # (n, n_eps, max n_ell), NaN beyond the sample's n_ell
    n_ell: np.ndarray
    log_post: np.ndarray
    grid: tuple = None  # (r_min, delta_r, n_x)

    def __len__(self):
        return int(self.iters.size)

    def save(self, path):
        np.savez(
            path,
            iters=self.iters,
            rho=self.rho,
            f=self.f,
            n_ell=self.n_ell,
            log_post=self.log_post,
            grid=np.asarray(self.grid if self.grid is not None else (np.nan, np.nan, np.nan), dtype=float),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            g = z["grid"]
            grid = None if np.isnan(g).any() else (float(g[0]), float(g[1]), int(g[2]))
            return cls(z["iters"], z["rho"], z["f"], z["n_ell"], z["log_post"], grid)

    def after_burn_in(self, fraction=0.5):
        k = int(math.floor(fraction * len(self)))
        return ChainRecord(self.iters[k:], self.rho[k:], self.f[k:], self.n_ell[k:], self.log_post[k:], self.grid)


@dataclass(frozen=True)
class IntervalSummary:
    name: str
    mode: float
    hpd_lo: float
    hpd_hi: float


def _check_len(x, n=20):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < n:
        raise ValueError(f"need at least {n} samples, got {x.size}")
    return x


def hpd_interval(samples, level=0.95):
    """Shortest window of the sorted samples holding ceil(level * n) points."""
    x = np.sort(_check_len(samples))
    n = x.size
    m = min(n, int(math.ceil(level * n)))
    widths = x[m - 1 :] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])


def marginal_mode(samples):
    """Centre of the fullest Freedman-Diaconis histogram bin (ties go to the lower bin)."""
    x = _check_len(samples)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return lo
    q75, q25 = np.percentile(x, [75, 25])
    width = 2.0 * (q75 - q25) / x.size ** (1.0 / 3.0)
    if width <= 0:
        # more than half the mass sits on one value
        vals, counts = np.unique(x, return_counts=True)
        return float(vals[np.argmax(counts)])
    nb = max(1, int(math.ceil((hi - lo) / width)))
    counts, edges = np.histogram(x, bins=nb, range=(lo, hi))
    i = int(np.argmax(counts))
    return float(0.5 * (edges[i] + edges[i + 1]))


def summarize(samples, name, level=0.95):
    lo, hi = hpd_interval(samples, level)
    mode = min(max(marginal_mode(samples), lo), hi)
    return IntervalSummary(name, mode, lo, hi)


def enclosed_mass(profile):
    """Mass inside each outer bin edge, from exact shell volumes.

    The innermost bin's density also fills the core below r_min, matching
    the potential solver.
    """
    e = profile.grid.mass_edges
    shells = 4.0 * np.pi / 3.0 * profile.rho * (e[1:] ** 3 - e[:-1] ** 3)
    return np.cumsum(shells)


def enclosed_mass_area_weighted(profile):
    """Alternative reading M_i = sum_j 4 pi rho_j dr^2 (j^2 - (j-1)^2), kept for comparison."""
    dr = profile.grid.delta_r
    j = np.arange(1, profile.grid.n_x + 1)
    return np.cumsum(4.0 * np.pi * profile.rho * dr**2 * (j**2 - (j - 1) ** 2))


@dataclass(frozen=True)
class SplitReport:
    names: tuple
    statistics: np.ndarray  # (n_params, n_pairs)
    pvalues: np.ndarray
    pairs: tuple
    alpha: float

    @property
    def flags(self):
        return self.pvalues < self.alpha

    @property
    def flagged(self):
        return [n for n, row in zip(self.names, self.flags) if row.any()]


def split_chain_check(samples, names=None, parts=3, burn_in=0.5, alpha=0.01):
    """Two-sample KS tests between equal, non-overlapping parts of a chain.

    ``samples`` is (n_draws, n_params) or a ChainRecord (density vector).
    """
    if isinstance(samples, ChainRecord):
        x = samples.rho
        names = names or tuple(f"rho_{b + 1}" for b in range(x.shape[1]))
    else:
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
    x = x[int(math.floor(burn_in * x.shape[0])) :]
    m = x.shape[0] // parts
    if m < 20:
        raise ValueError("chain too short for the split check")
    chunks = [x[i * m : (i + 1) * m] for i in range(parts)]
    pairs = tuple((i, j) for i in range(parts) for j in range(i + 1, parts))
    st = np.zeros((x.shape[1], len(pairs)))
    pv = np.zeros_like(st)
    for p in range(x.shape[1]):
        for q, (i, j) in enumerate(pairs):
            res = stats.ks_2samp(chunks[i][:, p], chunks[j][:, p])
            st[p, q], pv[p, q] = res.statistic, res.pvalue
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(x.shape[1]))
    return SplitReport(names, st, pv, pairs, alpha)


def profile_summaries(record, burn_in=0.5, level=0.95):
    """Interval summaries for every rho_b and enclosed mass M_b."""
    rec = record.after_burn_in(burn_in)
    grid = RadialGrid(*record.grid)
    masses = np.array([enclosed_mass(DensityProfile(grid, r)) for r in rec.rho])
    rho_s = [summarize(rec.rho[:, b], f"rho_{b + 1}", level) for b in range(grid.n_x)]
    mass_s = [summarize(masses[:, b], f"M_{b + 1}", level) for b in range(grid.n_x)]
    return grid, rho_s, mass_s


def write_summary_csv(path, summaries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "mode", "hpd_lo", "hpd_hi"])
        for s in summaries:
            w.writerow([s.name, repr(s.mode), repr(s.hpd_lo), repr(s.hpd_hi)])


def write_profile_csv(path, grid, rho_s, mass_s):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r_b", "r_outer", "rho_mode", "rho_hpd_lo", "rho_hpd_hi", "M_mode", "M_hpd_lo", "M_hpd_hi"])
        for rb, ro, a, b in zip(grid.centers, grid.edges[1:], rho_s, mass_s):
            w.writerow([repr(float(x)) for x in (rb, ro, a.mode, a.hpd_lo, a.hpd_hi, b.mode, b.hpd_lo, b.hpd_hi)])
