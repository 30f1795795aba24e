"""How one observed star spreads over the (energy, angular momentum) grid.

A star is seen at projected radius R with line-of-sight velocity v3.  Its
depth s3 and sky-plane velocities (v1, v2) are unknown.  At each depth the
energy bin is a circular annulus in (v1, v2) and the angular-momentum bin an
elliptical one; the overlap area, integrated over depth, is the star's volume
in that cell.  Here we check one overlap against brute-force sampling and then
print the full cell-volume table.

    python demos/02_projected_cells.py
"""

import numpy as np

from galmass.data import KinematicDatum
from galmass.elgrid import PhaseGrid
from galmass.potential import DensityProfile, PlummerPotential, RadialGrid, lmax_zero, solve_potential
from galmass.projection import (
    annulus_circle_radii,
    annulus_ellipse_params,
    overlap_area,
    phase_volume_table,
    s3_max,
    volume_table,
)

grid = RadialGrid(0.05, 0.2, 8)
pot = solve_potential(DensityProfile(grid, PlummerPotential().binned_density(grid)))
pg = PhaseGrid(6, 5)
l0 = lmax_zero(pot)
star = KinematicDatum(0.6, 0.0, 0.25)
c, d = 3, 2

print(f"Star at R = {star.rp}, v3 = {star.v3}; cell (energy bin {c}, L bin {d})")
print(f"deepest populated depth s3_max = {s3_max(c, d, star, pot, pg, l0):.3f}\n")

rng = np.random.default_rng(1)
print("  s3     overlap   sampled (1e6 pts)")
for s3 in (0.0, 0.3, 0.8, 1.5):
    circ = annulus_circle_radii(c, star, s3, pot, pg)
    ell = annulus_ellipse_params(d, star, s3, pg, l0)
    area = overlap_area(circ, ell, w2=star.v3**2)
    # brute force: sample (v1, v2) in a box and test E and L directly
    r = np.hypot(star.rp, s3)
    h = 2.0
    v12 = rng.uniform(-h, h, (1_000_000, 2))
    s = np.array([0.0, star.rp, s3])
    v = np.column_stack([v12, np.full(len(v12), star.v3)])
    E = float(pot.phi(r)) + 0.5 * np.sum(v * v, axis=1)
    L = np.linalg.norm(np.cross(s, v), axis=1)
    e_lo, e_hi = pg.eps_edges[c - 1 : c + 1] * (-pot.phi_at_zero)
    l_lo, l_hi = pg.ell_edges[d - 1 : d + 1] * l0
    hit = (E >= e_lo) & (E < e_hi) & (L >= l_lo) & (L < l_hi)
    print(f"  {s3:4.1f}  {area:9.5f}  {hit.mean() * (2 * h) ** 2:9.5f}")

vol = volume_table(np.array([star.rp]), np.array([star.v3]), pot, pg, l0)[0]
print("\nCell volumes for this star (rows: energy bins, columns: L bins)")
with np.printoptions(precision=4, suppress=True):
    print(vol)
print("\nThe top energy row is where f is pinned to zero; any star that can only")
print("live there has zero likelihood.")

W = phase_volume_table(pot, pg, l0, grid.r_min, grid.outer_edge)
print("\nWhole-window phase volumes (the normaliser's building blocks)")
with np.printoptions(precision=3):
    print(W)
