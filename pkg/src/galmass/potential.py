"""Radial binning, piecewise-constant density profiles and their potentials.

Units are dimensionless with G = 1.  The potential follows the usual
sign convention (Laplacian of phi = +4 pi G rho), so phi <= 0 and a
particle with zero energy is marginally unbound.

The innermost density bin is extended down to r = 0, i.e. the core
r < r_min carries the density of bin 1.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintViolation, DomainError

G = 1.0


@dataclass(frozen=True)
class RadialGrid:
    r_min: float
    delta_r: float
    n_x: int

    def __post_init__(self):
        if not (self.r_min >= 0 and self.delta_r > 0 and self.n_x >= 1):
            raise ValueError(f"invalid radial grid {self}")

    @property
    def edges(self):
        """Nominal bin edges r_min + b * delta_r, b = 0..n_x."""
        return self.r_min + self.delta_r * np.arange(self.n_x + 1)

    @property
    def centers(self):
        return self.r_min + self.delta_r * (np.arange(1, self.n_x + 1) - 0.5)

    @property
    def outer_edge(self):
        return self.r_min + self.n_x * self.delta_r

    @property
    def mass_edges(self):
        """Edges used for the mass distribution (first edge moved to 0)."""
        e = self.edges.copy()
        e[0] = 0.0
        return e

    def bin_index(self, r):
        """0-based bin containing r (the last bin is closed on the right)."""
        idx = np.floor((np.asarray(r, dtype=float) - self.r_min) / self.delta_r).astype(int)
        return np.clip(idx, 0, self.n_x - 1)


def check_monotone(values, what="profile", atol=0.0):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ConstraintViolation(f"{what} has non-finite entries")
    if np.any(values < 0):
        raise ConstraintViolation(f"{what} has negative entries")
    if np.any(np.diff(values, axis=0) > atol):
        raise ConstraintViolation(f"{what} is not non-increasing")


@dataclass(frozen=True)
class DensityProfile:
    grid: RadialGrid
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).copy()
        if rho.shape != (self.grid.n_x,):
            raise ValueError(f"rho has shape {rho.shape}, expected ({self.grid.n_x},)")
        check_monotone(rho, "density profile")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_increments(cls, grid, delta):
        """Build rho_b = rho_{b+1} + delta_b with rho_{n_x+1} = 0."""
        delta = np.asarray(delta, dtype=float)
        return cls(grid, np.cumsum(delta[::-1])[::-1])

    def increments(self):
        return self.rho - np.append(self.rho[1:], 0.0)


@dataclass(frozen=True)
class PotentialTable:
    """Potential of a piecewise-constant spherical density.

    ``phi(r)`` is evaluated from the closed-form piecewise solution; the
    dense table (``r_table``, ``phi_table``) is kept for inspection and
    plotting only.
    """

    grid: RadialGrid
    rho: np.ndarray
    r_out: float
    mass_edges: np.ndarray
    cum_mass: np.ndarray
    outer_int: np.ndarray
    m_total: float
    phi_at_zero: float
    r_table: np.ndarray = field(repr=False)
    phi_table: np.ndarray = field(repr=False)

    def mass(self, r):
        r = np.asarray(r, dtype=float)
        e = self.mass_edges
        j = np.clip(np.searchsorted(e, r, side="right") - 1, 0, self.grid.n_x - 1)
        inside = self.cum_mass[j] + 4.0 * np.pi / 3.0 * self.rho[j] * (np.minimum(r, e[j + 1]) ** 3 - e[j] ** 3)
        return np.where(r >= e[-1], self.m_total, inside)

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        e = self.mass_edges
        j = np.clip(np.searchsorted(e, r, side="right") - 1, 0, self.grid.n_x - 1)
        rr = np.minimum(r, e[-1])
        m = self.cum_mass[j] + 4.0 * np.pi / 3.0 * self.rho[j] * (rr**3 - e[j] ** 3)
        outer = 0.5 * self.rho[j] * (e[j + 1] ** 2 - rr**2) + self.outer_int[j + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            inner_term = np.where(r > 0, m / np.where(r > 0, r, 1.0), 0.0)
            exterior = -G * self.m_total / np.where(r > 0, r, 1.0)
        return np.where(r >= e[-1], exterior, -G * inner_term - 4.0 * np.pi * G * outer)

    def dphi_dr(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, G * self.mass(r) / np.where(r > 0, r, 1.0) ** 2, 0.0)

    def kernel_arrays(self):
        """Flat arrays consumed by the compiled volume kernels."""
        return (self.mass_edges, self.rho, self.cum_mass, self.outer_int, float(self.m_total))


def solve_potential(profile, r_out=None, n_table=1024):
    """Solve the spherical Poisson equation for a binned density profile.

    Parameters
    ----------
    profile : DensityProfile
    r_out : float, optional
        Outer evaluation radius; defaults to twice the outer bin edge.
    n_table : int
        Number of radii in the stored uniform table on [0, r_out].

    Returns
    -------
    PotentialTable
    """
    check_monotone(profile.rho, "density profile")
    grid = profile.grid
    if r_out is None:
        r_out = 2.0 * grid.outer_edge
    if r_out < grid.outer_edge:
        raise ValueError("r_out must not be inside the outer bin edge")
    if n_table < 2:
        raise ValueError("n_table must be >= 2")
    rho = np.asarray(profile.rho, dtype=float)
    e = grid.mass_edges
    shell_mass = 4.0 * np.pi / 3.0 * rho * (e[1:] ** 3 - e[:-1] ** 3)
    cum_mass = np.concatenate([[0.0], np.cumsum(shell_mass)])
    shell_outer = 0.5 * rho * (e[1:] ** 2 - e[:-1] ** 2)
    outer_int = np.concatenate([np.cumsum(shell_outer[::-1])[::-1], [0.0]])
    m_total = float(cum_mass[-1])
    phi0 = -4.0 * np.pi * G * float(outer_int[0])
    r_table = np.linspace(0.0, r_out, n_table)
    pot = PotentialTable(
        grid=grid,
        rho=rho,
        r_out=float(r_out),
        mass_edges=e,
        cum_mass=cum_mass,
        outer_int=outer_int,
        m_total=m_total,
        phi_at_zero=phi0,
        r_table=r_table,
        phi_table=np.zeros(0),
    )
    object.__setattr__(pot, "phi_table", pot.phi(r_table))
    return pot


class PlummerPotential:
    """Analytic Plummer sphere, duck-compatible with PotentialTable."""

    def __init__(self, mass=1.0, a=1.0, r_out=50.0):
        self.m_total = float(mass)
        self.a = float(a)
        self.r_out = float(r_out)
        self.phi_at_zero = -G * self.m_total / self.a

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return 3.0 * self.m_total / (4.0 * np.pi * self.a**3) * (1.0 + r**2 / self.a**2) ** -2.5

    def mass(self, r):
        r = np.asarray(r, dtype=float)
        return self.m_total * r**3 / (r**2 + self.a**2) ** 1.5

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        return -G * self.m_total / np.sqrt(r**2 + self.a**2)

    def dphi_dr(self, r):
        r = np.asarray(r, dtype=float)
        return G * self.m_total * r / (r**2 + self.a**2) ** 1.5

    def escape_speed(self, r):
        return np.sqrt(-2.0 * self.phi(r))

    def binned_density(self, grid):
        """Shell-averaged density of each radial bin (core folded into bin 1)."""
        e = grid.mass_edges
        return (self.mass(e[1:]) - self.mass(e[:-1])) / (4.0 * np.pi / 3.0 * (e[1:] ** 3 - e[:-1] ** 3))


@dataclass(frozen=True)
class PhasePoint:
    s: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if s.shape[-1] != 3 or v.shape[-1] != 3:
            raise ValueError("position and velocity must be 3-vectors")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ValueError("phase point must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)


def energy(p, pot):
    """Energy normalised by -phi(0): -1 at the bottom of the well, 0 at escape.

    Positive values (unbound states) are returned as they are.
    """
    r = np.linalg.norm(p.s, axis=-1)
    e = pot.phi(r) + 0.5 * np.sum(p.v * p.v, axis=-1)
    return e / (-pot.phi_at_zero)


def angular_momentum(p):
    return np.linalg.norm(np.cross(p.s, p.v), axis=-1)


def angular_momentum_rotated(r, cos_gamma, v):
    """L from the rotated frame where s_1 = 0 and cos(gamma) = s_3 / r."""
    cos_gamma = np.asarray(cos_gamma, dtype=float)
    sin_gamma = np.sqrt(np.clip(1.0 - cos_gamma**2, 0.0, None))
    v = np.asarray(v, dtype=float)
    return r * np.sqrt(v[..., 0] ** 2 + (v[..., 1] * cos_gamma - v[..., 2] * sin_gamma) ** 2)


def _circular_condition(r, e, pot):
    # d/dr [2 r^2 (e - phi)] / (2 r); strictly decreasing in r
    return 2.0 * (e - pot.phi(r)) - r * pot.dphi_dr(r)


def lmax_and_rc(eps, pot, rtol=1e-10, max_iter=200):
    """Largest angular momentum at normalised energy ``eps`` and its circular radius.

    The circular radius maximises 2 r^2 (E - phi(r)) over (0, r_out].
    Returns ``(lmax, r_c)`` in raw units.
    """
    eps = float(eps)
    if eps < -1.0 - 1e-12:
        raise DomainError(f"normalised energy {eps} below -1")
    phi0 = pot.phi_at_zero
    e = eps * (-phi0)
    if eps <= -1.0 or e <= phi0:
        return 0.0, 0.0
    r_hi = pot.r_out
    if _circular_condition(r_hi, e, pot) >= 0.0:
        r_c = r_hi
    else:
        lo, hi = 0.0, r_hi
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if _circular_condition(mid, e, pot) > 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rtol * hi:
                break
        r_c = 0.5 * (lo + hi)
    val = 2.0 * r_c**2 * (e - float(pot.phi(r_c)))
    return float(np.sqrt(max(val, 0.0))), float(r_c)


def lmax_zero(pot):
    """l_max at the escape energy, the normalising scale for angular momentum."""
    return lmax_and_rc(0.0, pot)[0]
