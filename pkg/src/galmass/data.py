"""Observed kinematic catalogs."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class KinematicDatum:
    x1: float
    x2: float
    v3: float
    sigma_v3: float = 0.0

    def __post_init__(self):
        if self.sigma_v3 < 0:
            raise DataError("sigma_v3 must be non-negative")
        if self.rp <= 0:
            raise DataError("projected radius must be positive")

    @property
    def rp(self):
        return float(np.hypot(self.x1, self.x2))


@dataclass(frozen=True)
class Catalog:
    """Column-oriented set of observed particles."""

    x1: np.ndarray
    x2: np.ndarray
    v3: np.ndarray
    sigma_v3: np.ndarray

    def __post_init__(self):
        cols = [np.atleast_1d(np.asarray(getattr(self, k), dtype=float)) for k in ("x1", "x2", "v3", "sigma_v3")]
        n = cols[0].size
        if any(c.shape != (n,) for c in cols):
            raise DataError("catalog columns must be 1-d and of equal length")
        for k, c in zip(("x1", "x2", "v3", "sigma_v3"), cols):
            c.setflags(write=False)
            object.__setattr__(self, k, c)
        if np.any(self.sigma_v3 < 0):
            raise DataError("sigma_v3 must be non-negative")

    @classmethod
    def from_data(cls, data):
        data = list(data)
        return cls(
            np.array([d.x1 for d in data]),
            np.array([d.x2 for d in data]),
            np.array([d.v3 for d in data]),
            np.array([d.sigma_v3 for d in data]),
        )

    def __len__(self):
        return self.x1.size

    def __getitem__(self, k):
        if isinstance(k, (int, np.integer)):
            return KinematicDatum(float(self.x1[k]), float(self.x2[k]), float(self.v3[k]), float(self.sigma_v3[k]))
        return Catalog(self.x1[k], self.x2[k], self.v3[k], self.sigma_v3[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def rp(self):
        return np.hypot(self.x1, self.x2)
