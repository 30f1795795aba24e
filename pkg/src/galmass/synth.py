"""Synthetic tracer catalogs drawn from two-integral distribution functions
in a Plummer potential.

Both families share the anisotropy factor exp(-L^2 / (r_a sigma^2)); the
energy part is exp(-E / sigma^2) ("WD") or exp(-E / sigma^2) - 1
("Michie").  Support is restricted to bound states, E <= 0.
"""

from dataclasses import dataclass
import math

import numpy as np

from .data import Catalog
from .errors import EnvelopeError
from .potential import PlummerPotential

KINDS = ("WD", "Michie")


@dataclass(frozen=True)
class SynthModel:
    kind: str = "WD"
    sigma: float = 0.25
    r_a: float = 3.0
    M: float = 1.0
    a: float = 1.0
    n_data: int = 198
    sigma_v3: float = 0.0
    mass_fraction: float = 0.999

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if min(self.sigma, self.r_a, self.M, self.a) <= 0:
            raise ValueError("sigma, r_a, M and a must be positive")
        if self.n_data < 0 or self.sigma_v3 < 0:
            raise ValueError("n_data and sigma_v3 must be non-negative")
        if not 0 < self.mass_fraction < 1:
            raise ValueError("mass_fraction must lie in (0, 1)")

    @property
    def potential(self):
        return PlummerPotential(self.M, self.a, r_out=self.r_cut)

    @property
    def r_cut(self):
        """Radius enclosing ``mass_fraction`` of the Plummer mass."""
        q = self.mass_fraction ** (2.0 / 3.0)
        return self.a * math.sqrt(q / (1.0 - q))


def f_value(model, E, L):
    """Distribution function at raw energy E and angular momentum L (zero for E >= 0)."""
    E = np.asarray(E, dtype=float)
    L = np.asarray(L, dtype=float)
    s2 = model.sigma**2
    aniso = np.exp(-(L**2) / (model.r_a * s2))
    en = np.exp(-np.minimum(E, 0.0) / s2)
    if model.kind == "Michie":
        en = en - 1.0
    val = aniso * en / math.sqrt(2.0 * math.pi * s2)
    return np.where(E < 0.0, val, 0.0)


def _envelope(model, pot, n_cells=4096, safety=1.5):
    """Piecewise-constant bound on the radial weight over [0, r_cut].

    At fixed r the weight f * r^2 * v_esc^3 peaks at v = 0 (E = phi,
    L = 0); each cell takes the largest of that peak over a few interior
    samples, times ``safety``.  Returns (edges, per-cell bound).
    """
    edges = np.linspace(0.0, model.r_cut, n_cells + 1)
    r = np.linspace(0.0, model.r_cut, 8 * n_cells + 1)
    g = f_value(model, pot.phi(r), 0.0) * r**2 * pot.escape_speed(r) ** 3
    cell = np.maximum(g[:-1], g[1:]).reshape(n_cells, 8).max(axis=1)
    return edges, safety * cell


def _random_unit(rng, n):
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    s = np.sqrt(1.0 - z * z)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def sample_phase_points(model, rng, n, batch=20000, min_efficiency=1e-5, max_attempts=None):
    """Rejection-sample n bound (s, v) states; returns two (n, 3) arrays.

    Proposal: r from the piecewise-constant radial envelope, isotropic
    direction, v uniform in the local escape ball.  The target-to-proposal
    ratio is proportional to f * r^2 * v_esc^3 over the cell's bound.
    """
    pot = model.potential
    edges, bound = _envelope(model, pot)
    cdf = np.cumsum(bound)
    if max_attempts is None:
        max_attempts = max(int(n / min_efficiency), batch)
    pos, vel = [], []
    got = attempts = 0
    while got < n:
        if attempts >= max_attempts:
            raise EnvelopeError(
                f"rejection sampler accepted {got} of {attempts} proposals; envelope needs tuning"
            )
        j = np.minimum(np.searchsorted(cdf, rng.uniform(0.0, cdf[-1], batch), side="right"), bound.size - 1)
        r = edges[j] + (edges[j + 1] - edges[j]) * rng.uniform(size=batch)
        s = r[:, None] * _random_unit(rng, batch)
        vesc = pot.escape_speed(r)
        v = (vesc * rng.uniform(size=batch) ** (1.0 / 3.0))[:, None] * _random_unit(rng, batch)
        E = pot.phi(r) + 0.5 * np.sum(v * v, axis=1)
        L = np.linalg.norm(np.cross(s, v), axis=1)
        w = f_value(model, E, L) * r**2 * vesc**3
        if np.any(w > bound[j]):
            raise EnvelopeError("proposal weight exceeds the rejection envelope")
        keep = (rng.uniform(size=batch) * bound[j] < w) & (E < 0.0) & (r > 0.0)
        pos.append(s[keep])
        vel.append(v[keep])
        got += int(keep.sum())
        attempts += batch
    return np.concatenate(pos)[:n], np.concatenate(vel)[:n]


def sample_catalog(model, rng):
    """Observed catalog: sky position (x1, x2) = (s_x, s_y), line-of-sight velocity v_z.

    With ``model.sigma_v3 > 0`` Gaussian measurement noise of that width
    is added to v3 and recorded in the sigma_v3 column.
    """
    s, v = sample_phase_points(model, rng, model.n_data)
    v3 = v[:, 2].copy()
    if model.sigma_v3 > 0:
        v3 += model.sigma_v3 * rng.standard_normal(v3.size)
    return Catalog(s[:, 0], s[:, 1], v3, np.full(v3.size, model.sigma_v3))

