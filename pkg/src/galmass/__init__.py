"""Bayesian mass-profile inference for spherical stellar systems from line-of-sight kinematics."""

__version__ = "0.1.0"
