"""Gaussian kernels, bandwidth selection, empirical centering and Gram columns.

Gram matrices are never formed here.  Everything is produced a row panel at a
time (a panel is a few consecutive rows, which equal the columns because the
matrices are symmetric), so memory stays linear in the sample count.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from ._parallel import ordered_map, panels
from .ode import Trajectory, l2_features

__all__ = [
    "AugmentedProductSource",
    "CenteringStats",
    "DegenerateSampleError",
    "DenseSource",
    "GaussianSource",
    "ParameterBlock",
    "SubsetSpec",
    "augmented_subset_column",
    "centering_stats",
    "gaussian_eval",
    "median_bandwidth",
    "output_gram_column",
    "output_source",
]

MEDIAN_MAX_POINTS = 5000
# above this many coordinates squared distances are formed one row at a time
_DIRECT_DIM_LIMIT = 16


class DegenerateSampleError(ValueError):
    """All samples coincide, so no kernel bandwidth can be chosen."""


def _as_matrix(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("samples must be an (n, d) matrix")
    return x


def gaussian_eval(x, y, sigma):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    d = x - y
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def median_bandwidth(samples, max_points=MEDIAN_MAX_POINTS, seed=0):
    """Median of all pairwise Euclidean distances between sample rows.

    For more than ``max_points`` rows the median is taken over a seeded
    uniform subsample of that many rows.
    """
    x = _as_matrix(samples)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if n > max_points:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(n, size=max_points, replace=False))]
    med = float(np.median(pdist(x)))
    if not med > 0:
        raise DegenerateSampleError(
            "median pairwise distance is zero; samples are (mostly) identical"
        )
    return med


@dataclass(frozen=True, eq=False)
class ParameterBlock:
    """One input X_i: its samples and the bandwidth of its Gaussian kernel."""

    name: str
    samples: np.ndarray
    bandwidth: float

    def __post_init__(self):
        x = _as_matrix(self.samples)
        if x.shape[0] < 2:
            raise ValueError(f"block {self.name!r}: need n >= 2 samples")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"block {self.name!r}: samples must be finite")
        if not self.bandwidth > 0:
            raise ValueError(f"block {self.name!r}: bandwidth must be positive")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @classmethod
    def from_samples(cls, name, samples, bandwidth=None, seed=0):
        if bandwidth is None:
            bandwidth = median_bandwidth(samples, seed=seed)
        return cls(name, samples, bandwidth)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class CenteringStats:
    """Row means and grand mean of a block's Gram matrix under the empirical measure."""

    row_means: np.ndarray
    grand_mean: float


@dataclass(frozen=True)
class SubsetSpec:
    """Sorted, duplicate-free tuple of zero-based block indices."""

    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in subset {idx}")
        if any(i < 0 for i in idx):
            raise ValueError(f"negative index in subset {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @classmethod
    def of(cls, indices, p):
        spec = cls(tuple(indices))
        if any(i >= p for i in spec.indices):
            raise ValueError(f"subset {spec.indices} out of range for p = {p}")
        return spec

    def complement(self, p):
        return SubsetSpec(tuple(i for i in range(p) if i not in self.indices))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def label(self, names):
        return "+".join(names[i] for i in self.indices) or "{}"


def _sqdist_rows(x, j0, j1):
    n, d = x.shape
    out = np.zeros((j1 - j0, n))
    if d <= _DIRECT_DIM_LIMIT:
        for k in range(d):
            diff = x[j0:j1, k, None] - x[None, :, k]
            diff *= diff
            out += diff
    else:
        for r, j in enumerate(range(j0, j1)):
            diff = x - x[j]
            out[r] = np.einsum("ij,ij->i", diff, diff)
    return out


def gaussian_rows(x, sigma, j0, j1, sqdist=None):
    """Rows j0..j1-1 of the plain Gaussian Gram matrix of ``x``."""
    if sqdist is not None:
        rows = sqdist[j0:j1].copy()
    else:
        rows = _sqdist_rows(x, j0, j1)
    rows *= -1.0 / (2.0 * sigma * sigma)
    np.exp(rows, out=rows)
    return rows


def centering_stats(block, workers=1):
    """Empirical centering statistics of one block's Gaussian Gram matrix.

    Single pass over row panels; O(n) memory.  Row sums use numpy's pairwise
    summation along contiguous rows and the grand mean an exactly rounded
    sum, so the result does not depend on ``workers``.
    """
    x, sigma, n = block.samples, block.bandwidth, block.n

    def panel_means(bounds):
        return gaussian_rows(x, sigma, *bounds).sum(axis=1) / n

    row_means = np.concatenate(ordered_map(panel_means, panels(n), workers))
    return CenteringStats(row_means, math.fsum(row_means) / n)


def augmented_rows(block, stats, j0, j1):
    """Rows of the augmented kernel 1 + K_c under empirical centering.

    Entries are formed as (K + (1 + g)) - (r_s + r_t), which is exactly
    symmetric in s and t.
    """
    rows = gaussian_rows(block.samples, block.bandwidth, j0, j1)
    r = stats.row_means
    rows += 1.0 + stats.grand_mean
    rows -= r[j0:j1, None] + r[None, :]
    return rows


def _product_rows(blocks, stats, subset, j0, j1, cache=None):
    n = blocks[0].n
    out = None
    for i in subset:
        panel = cache[i] if cache is not None else augmented_rows(blocks[i], stats[i], j0, j1)
        if out is None:
            out = panel.copy()
        else:
            out *= panel
    if out is None:
        out = np.ones((j1 - j0, n))
    return out


def augmented_subset_column(blocks, stats, subset, j):
    """Column j of K_A, the product over blocks in A of augmented kernels."""
    n = blocks[0].n
    if not 0 <= j < n:
        raise IndexError(f"column {j} out of range for n = {n}")
    if len(stats) != len(blocks):
        raise ValueError("stats must align with blocks")
    return _product_rows(blocks, stats, subset, j, j + 1)[0]


class AugmentedProductSource:
    """Column source for K_A over a subset A of input blocks."""

    def __init__(self, blocks, stats, subset):
        if len(stats) != len(blocks):
            raise ValueError("stats must align with blocks")
        ns = {b.n for b in blocks}
        if len(ns) != 1:
            raise ValueError("all blocks must hold the same number of samples")
        self.blocks = list(blocks)
        self.stats = list(stats)
        self.subset = subset if isinstance(subset, SubsetSpec) else SubsetSpec(tuple(subset))
        self.n = ns.pop()

    def rows(self, j0, j1):
        return _product_rows(self.blocks, self.stats, self.subset, j0, j1)

    def column(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"column {j} out of range for n = {self.n}")
        return self.rows(j, j + 1)[0]


class GaussianSource:
    """Column source for a plain Gaussian Gram matrix on vector features.

    With ``precompute=True`` the squared distances are computed once
    (n x n storage); this is only worth it for wide features such as
    discretised trajectories.
    """

    def __init__(self, features, sigma, precompute=False):
        if not sigma > 0:
            raise ValueError("bandwidth must be positive")
        self.features = _as_matrix(features)
        self.sigma = float(sigma)
        self.n = self.features.shape[0]
        self._sqdist = None
        if precompute:
            from scipy.spatial.distance import squareform

            self._sqdist = squareform(pdist(self.features, "sqeuclidean"))

    def rows(self, j0, j1):
        return gaussian_rows(self.features, self.sigma, j0, j1, self._sqdist)

    def column(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"column {j} out of range for n = {self.n}")
        return self.rows(j, j + 1)[0]


class DenseSource:
    """Column source backed by an explicit matrix (testing and small problems)."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        self.n = self.matrix.shape[0]

    def rows(self, j0, j1):
        return self.matrix[j0:j1].copy()

    def column(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"column {j} out of range for n = {self.n}")
        return self.matrix[:, j].copy()


def output_features(y_samples):
    """Euclidean features for outputs: scalars, vectors, or Trajectory lists."""
    if len(y_samples) and isinstance(y_samples[0], Trajectory):
        times = y_samples[0].times
        for tr in y_samples:
            if not np.array_equal(tr.times, times):
                raise ValueError("trajectory outputs must share one time grid")
        values = np.stack([tr.values for tr in y_samples])
        return l2_features(values, times)
    return _as_matrix(y_samples)


def output_source(y_samples, sigma=None, precompute=None, seed=0):
    feats = output_features(y_samples)
    if sigma is None:
        sigma = median_bandwidth(feats, seed=seed)
    if precompute is None:
        precompute = feats.shape[1] > _DIRECT_DIM_LIMIT and feats.shape[0] <= 4096
    return GaussianSource(feats, sigma, precompute=precompute)


def output_gram_column(y_samples, sigma_Y, j):
    feats = output_features(y_samples)
    n = feats.shape[0]
    if not 0 <= j < n:
        raise IndexError(f"column {j} out of range for n = {n}")
    return GaussianSource(feats, sigma_Y).column(j)
