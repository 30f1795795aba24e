"""Energy / angular-momentum grid and the discretised distribution function.

Energies are normalised by -phi(0) so that eps lies in [-1, 0]; angular
momenta by l_max(0) so that the normalised value lies in [0, 1].  Cell
(c, d) (1-based) covers eps in [-1 + (c-1)/n_eps, -1 + c/n_eps] and
l in [(d-1)/n_ell, d/n_ell].
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolation, DomainError, UnboundBinning
from .potential import check_monotone


@dataclass(frozen=True)
class PhaseGrid:
    n_eps: int
    n_ell: int

    def __post_init__(self):
        if self.n_eps < 1 or self.n_ell < 1:
            raise ValueError(f"invalid phase grid {self}")

    @property
    def delta_eps(self):
        return 1.0 / self.n_eps

    @property
    def delta_ell(self):
        return 1.0 / self.n_ell

    @property
    def eps_edges(self):
        e = -1.0 + np.arange(self.n_eps + 1) / self.n_eps
        e[-1] = 0.0
        return e

    @property
    def ell_edges(self):
        e = np.arange(self.n_ell + 1) / self.n_ell
        e[-1] = 1.0
        return e

    @property
    def eps_centers(self):
        return -1.0 + (np.arange(self.n_eps) + 0.5) / self.n_eps

    @property
    def ell_centers(self):
        return (np.arange(self.n_ell) + 0.5) / self.n_ell


def cell_bounds(grid, c, d):
    """((eps_lo, eps_hi), (l_lo, l_hi)) of the 1-based cell (c, d)."""
    if not (1 <= c <= grid.n_eps and 1 <= d <= grid.n_ell):
        raise IndexError(f"cell ({c}, {d}) outside {grid.n_eps}x{grid.n_ell} grid")
    ee, le = grid.eps_edges, grid.ell_edges
    return (float(ee[c - 1]), float(ee[c])), (float(le[d - 1]), float(le[d]))


@dataclass(frozen=True)
class PdfMatrix:
    """Non-negative pdf values f[c, d], non-increasing in c, last row zero.

    Indices are 0-based in the array; row ``n_eps - 1`` is the pinned
    escape-energy row.
    """

    grid: PhaseGrid
    f: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.shape != (self.grid.n_eps, self.grid.n_ell):
            raise ValueError(f"pdf matrix shape {f.shape} does not match {self.grid}")
        if np.any(f[-1] != 0.0):
            raise ConstraintViolation("top energy row of the pdf matrix must be zero")
        check_monotone(f, "pdf matrix")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @classmethod
    def from_increments(cls, grid, gamma):
        """f[c] = f[c+1] + gamma[c] with f[n_eps-1] = 0; gamma has n_eps-1 rows."""
        gamma = np.asarray(gamma, dtype=float).reshape(grid.n_eps - 1, grid.n_ell)
        f = np.zeros((grid.n_eps, grid.n_ell))
        f[:-1] = np.cumsum(gamma[::-1], axis=0)[::-1]
        return cls(grid, f)

    def increments(self):
        return self.f[:-1] - self.f[1:]

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n_eps, grid.n_ell)))


def _cell_index(x, n):
    # boundaries belong to the lower-index cell; x = 1 maps to the last cell
    idx = np.ceil(np.asarray(x, dtype=float) * n).astype(int) - 1
    return np.clip(idx, 0, n - 1)


def lookup(pdf, eps, ell_frac):
    """pdf value of the cell containing (eps, ell_frac)."""
    eps = np.asarray(eps, dtype=float)
    ell_frac = np.asarray(ell_frac, dtype=float)
    if np.any((eps < -1.0) | (eps > 0.0)) or np.any((ell_frac < 0.0) | (ell_frac > 1.0)):
        raise DomainError("lookup coordinates outside [-1, 0] x [0, 1]")
    c = _cell_index(eps + 1.0, pdf.grid.n_eps)
    d = _cell_index(ell_frac, pdf.grid.n_ell)
    return pdf.f[c, d]


def resample(pdf, grid):
    """Carry a pdf matrix onto another grid by sampling it at the new cell centres.

    Row monotonicity is preserved; the new top row is re-pinned to zero.
    """
    ec, lc = np.meshgrid(grid.eps_centers, grid.ell_centers, indexing="ij")
    f = np.array(lookup(pdf, ec, lc), dtype=float)
    f[-1] = 0.0
    return PdfMatrix(grid, f)


def eps_max_from_catalog(r_min, r_max, v3_max, pot, n_ell, lmax0):
    """Unnormalised energy bound used to size the energy bins."""
    return float(pot.phi(r_max)) + 0.5 * v3_max**2 + (n_ell * lmax0) ** 2 / (2.0 * r_min**2)


def n_eps_from_eps_max(eps_max, phi0):
    """int(phi0 / (2 eps_max)), at least 1; eps_max must be negative."""
    if not eps_max < 0.0:
        raise UnboundBinning(
            f"energy bound {eps_max:.6g} >= 0: reduce n_ell or flag outlying data "
            "(large |v3| or small projected radius)"
        )
    return max(1, int(phi0 / (2.0 * eps_max)))


def compute_n_eps(rp, v3, pot, n_ell, lmax0):
    """Number of energy bins implied by a catalog's extremes.

    Parameters
    ----------
    rp, v3 : array_like
        Projected radii and line-of-sight velocities of the catalog.
    pot : PotentialTable
    n_ell : int
    lmax0 : float
        Raw l_max at the escape energy.
    """
    rp = np.asarray(rp, dtype=float)
    v3 = np.asarray(v3, dtype=float)
    if rp.size == 0:
        raise ValueError("empty catalog")
    eps_max = eps_max_from_catalog(rp.min(), rp.max(), np.abs(v3).max(), pot, n_ell, lmax0)
    return n_eps_from_eps_max(eps_max, pot.phi_at_zero)
