"""A binned Plummer sphere, its potential, and the circular-orbit envelope.

The inference never sees an analytic potential: every density profile is a
stack of constant-density shells, and the potential comes from solving the
spherical Poisson equation shell by shell.  This script shows how close that
gets to the analytic answer and what the angular-momentum ceiling looks like.

    python demos/01_potential_and_orbits.py
"""

import numpy as np

from galmass.potential import DensityProfile, PlummerPotential, RadialGrid, lmax_and_rc, solve_potential

plummer = PlummerPotential()

print("Binned Plummer sphere vs the analytic potential -1/sqrt(r^2 + 1)")
for n_bins in (8, 64, 1000):
    grid = RadialGrid(0.0, 50.0 / n_bins, n_bins)
    pot = solve_potential(DensityProfile(grid, plummer.binned_density(grid)))
    r = np.linspace(0.0, 5.0, 501)
    err = np.max(np.abs(pot.phi(r) / plummer.phi(r) - 1.0))
    print(f"  {n_bins:5d} shells out to r = 50: max relative error on [0, 5] = {err:.2e}")

# the coarse 8-shell model used for inference looks like this
grid = RadialGrid(0.05, 0.2, 8)
pot = solve_potential(DensityProfile(grid, plummer.binned_density(grid)))
print("\nEight shells between r = 0.05 and r = 1.65 (the core takes the first shell's density)")
print("   r      rho_bin    phi(r)")
for lo, rho in zip(grid.edges[:-1], plummer.binned_density(grid)):
    print(f"  {lo:5.2f}  {rho:9.4f}  {float(pot.phi(lo)):8.4f}")

# l_max(eps) grows from 0 at the bottom of the well to its escape value
print("\nCircular orbits: largest angular momentum at each normalised energy")
print("   eps     l_max    r_c")
for eps in (-0.9, -0.7, -0.5, -0.3, -0.1, 0.0):
    lmax, rc = lmax_and_rc(eps, pot)
    print(f"  {eps:5.2f}  {lmax:7.4f}  {rc:6.3f}")
