"""Empirical multivariate return distributions.

A return distribution is a finite sample matrix.  Summing two independent
return distributions is the cross-sum of their samples (optionally capped by
seeded subsampling), and the dominance test is first-order lower-orthant
stochastic dominance evaluated on a fixed rectangular grid.

Grid CDF values are kept as integer counts so dominance comparisons are
exact rational comparisons (k1/m1 vs k2/m2 via cross-multiplication), never
subject to floating-point epsilons.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class DistributionError(ValueError):
    """Bad samples, mismatched dimensions, or an invalid grid."""


@dataclass(frozen=True, eq=True)
class CdfGrid:
    """Rectangular evaluation lattice: `n_bins` points per dimension spanning [r_min, r_max]."""

    r_min: tuple[float, ...]
    r_max: tuple[float, ...]
    n_bins: int = 128

    def __post_init__(self):
        object.__setattr__(self, "r_min", tuple(float(v) for v in self.r_min))
        object.__setattr__(self, "r_max", tuple(float(v) for v in self.r_max))
        if len(self.r_min) != len(self.r_max):
            raise DistributionError("r_min and r_max must have equal length")
        if self.n_bins < 2:
            raise DistributionError("n_bins must be at least 2")
        if not all(lo < hi for lo, hi in zip(self.r_min, self.r_max)):
            raise DistributionError(f"need r_min < r_max componentwise, got {self.r_min} vs {self.r_max}")

    @property
    def d(self) -> int:
        return len(self.r_min)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(lo, hi, self.n_bins) for lo, hi in zip(self.r_min, self.r_max)
        )

    def key(self):
        return (self.r_min, self.r_max, self.n_bins)


class ReturnDistribution:
    """An immutable empirical distribution over d-dimensional return vectors.

    Stores an (m, d) sample matrix; grid CDFs are memoised per grid since the
    same distribution is compared many times during pruning.
    """

    __slots__ = ("samples", "_cdf_cache")

    def __init__(self, samples):
        arr = np.array(samples, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DistributionError(f"expected (m, d) sample matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DistributionError("samples must be finite")
        arr.setflags(write=False)
        self.samples = arr
        self._cdf_cache: dict = {}

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def grid_cdf(self, grid: CdfGrid) -> np.ndarray:
        """Integer CDF counts on the grid lattice, shape (n_bins,) * d.

        Entry at multi-index j counts samples <= grid point j componentwise.
        Samples outside [r_min, r_max] are clamped into the box with a warning.
        """
        if grid.d != self.d:
            raise DistributionError(f"grid dimension {grid.d} != distribution dimension {self.d}")
        cached = self._cdf_cache.get(grid.key())
        if cached is not None:
            return cached

        lo = np.asarray(grid.r_min)
        hi = np.asarray(grid.r_max)
        pts = self.samples
        if np.any(pts < lo) or np.any(pts > hi):
            warnings.warn(
                f"samples outside grid box [{grid.r_min}, {grid.r_max}] were clamped",
                RuntimeWarning,
                stacklevel=2,
            )
            pts = np.clip(pts, lo, hi)

        hist = np.zeros((grid.n_bins,) * self.d, dtype=np.int64)
        idx = tuple(
            np.searchsorted(grid.axes[k], pts[:, k], side="left") for k in range(self.d)
        )
        np.add.at(hist, idx, 1)
        for axis in range(self.d):
            np.cumsum(hist, axis=axis, out=hist)

        self._cdf_cache[grid.key()] = hist
        return hist

    def __repr__(self):
        return f"ReturnDistribution(m={self.m}, d={self.d})"


def point_mass(v) -> ReturnDistribution:
    """Degenerate single-sample distribution at vector v."""
    return ReturnDistribution(np.asarray(v, dtype=np.float64).reshape(1, -1))


def cdf_at(z: ReturnDistribution, v) -> float:
    """Empirical lower-orthant CDF: fraction of samples <= v componentwise."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (z.d,):
        raise DistributionError(f"vector shape {v.shape} != (d,) = ({z.d},)")
    return float(np.all(z.samples <= v, axis=1).sum()) / z.m


def expected_value(z: ReturnDistribution) -> np.ndarray:
    """Componentwise sample mean."""
    return z.samples.mean(axis=0)


def convolve(a: ReturnDistribution, b: ReturnDistribution, cap: int | None = None, seed=None) -> ReturnDistribution:
    """Distribution of the sum of independent draws from a and b.

    The result's samples are the Cartesian pairwise sums.  If their count
    exceeds `cap`, a uniform subsample of size `cap` is drawn without
    replacement using `seed`; `cap=None` keeps the full cross-sum (exact
    mode, used by oracles).
    """
    if a.d != b.d:
        raise DistributionError(f"dimension mismatch: {a.d} vs {b.d}")
    if cap is not None and cap < 1:
        raise DistributionError(f"cap must be >= 1, got {cap}")

    total = a.m * b.m
    if cap is None or total <= cap:
        sums = (a.samples[:, None, :] + b.samples[None, :, :]).reshape(total, a.d)
        return ReturnDistribution(sums)

    if seed is None:
        raise DistributionError("seed required when the convolution cap triggers subsampling")
    rng = np.random.default_rng(seed)
    idx = rng.choice(total, size=cap, replace=False)
    sums = a.samples[idx // b.m] + b.samples[idx % b.m]
    return ReturnDistribution(sums)


def _dominates_counts(c1: np.ndarray, m1: int, c2: np.ndarray, m2: int) -> bool:
    # F1(v) <= F2(v) everywhere with strict inequality somewhere; exact
    # integer comparison of c1/m1 vs c2/m2.
    lhs = c1 * m2
    rhs = c2 * m1
    if not np.all(lhs <= rhs):
        return False
    return bool(np.any(lhs < rhs))


def esr_dominates(z: ReturnDistribution, z2: ReturnDistribution, grid: CdfGrid) -> bool:
    """First-order stochastic dominance of z over z2 on the grid lattice.

    True iff F_z <= F_z2 at every grid point with strict inequality at one
    or more points.  Irreflexive, asymmetric, and transitive on a fixed grid.
    """
    if z.d != z2.d:
        raise DistributionError(f"dimension mismatch: {z.d} vs {z2.d}")
    return _dominates_counts(z.grid_cdf(grid), z.m, z2.grid_cdf(grid), z2.m)


def max_cdf_gap(z: ReturnDistribution, z2: ReturnDistribution, grid: CdfGrid) -> float:
    """Sup-norm distance between the two grid CDFs (0.0 means identical on the grid)."""
    c1 = z.grid_cdf(grid).astype(np.int64)
    c2 = z2.grid_cdf(grid).astype(np.int64)
    num = np.abs(c1 * z2.m - c2 * z.m).max()
    return float(num) / (z.m * z2.m)


def save_samples(z: ReturnDistribution, path) -> None:
    """Write samples as delimited text: one sample per row, one column per objective."""
    np.savetxt(path, z.samples, delimiter=",", fmt="%.17g")


def load_samples(path) -> ReturnDistribution:
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return ReturnDistribution(arr)
