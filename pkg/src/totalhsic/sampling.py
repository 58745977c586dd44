"""Seeded sampling of input laws and model-reduction helpers.

Random streams come from numpy's PCG64 seeded through SeedSequence, so a
(seed, stream-key) pair always yields the same bits on every platform.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianLaw",
    "NotPSDError",
    "UniformBoxLaw",
    "conditional_law",
    "empirical_moments",
    "fix_coordinate",
    "mvn_sample",
    "psd_factor",
    "rng_for",
    "uniform_sample",
]

log = logging.getLogger(__name__)


class NotPSDError(ValueError):
    pass


def rng_for(seed, *keys):
    """Generator for an independent named substream of ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def _spectral_norm(m):
    return float(np.abs(np.linalg.eigvalsh(m)).max()) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        p = mu.size
        if cov.shape != (p, p):
            raise ValueError(f"covariance must be {p}x{p}, got {cov.shape}")
        scale = max(_spectral_norm(cov), np.finfo(float).tiny)
        if np.abs(cov - cov.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        cov = (cov + cov.T) / 2
        if np.linalg.eigvalsh(cov).min(initial=0.0) < -1e-10 * scale:
            raise NotPSDError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.size

    def correlation(self):
        sd = np.sqrt(np.diag(self.covariance))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = self.covariance / np.outer(sd, sd)
        corr[~np.isfinite(corr)] = 0.0
        np.fill_diagonal(corr, 1.0)
        return corr


@dataclass(frozen=True, eq=False)
class UniformBoxLaw:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise ValueError("need lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def mean(self):
        return (self.lower + self.upper) / 2

    @classmethod
    def around(cls, center, rel_width):
        """Box center * (1 -/+ rel_width); center entries must be nonzero."""
        c = np.asarray(center, dtype=float)
        a, b = c * (1 - rel_width), c * (1 + rel_width)
        return cls(np.minimum(a, b), np.maximum(a, b))


def psd_factor(cov, tol=1e-8):
    """F with F F^T = cov.  Cholesky first; clipped eigendecomposition if that fails."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(cov)
    scale = float(np.abs(w).max()) if w.size else 0.0
    if w.size and w.min() < -tol * scale:
        raise NotPSDError(f"covariance has eigenvalue {w.min():.3e} (norm {scale:.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def mvn_sample(law, n, seed, stream=0):
    """n draws from N(mean, covariance); rows are samples."""
    F = psd_factor(law.covariance)
    z = rng_for(seed, 1, stream).standard_normal((n, law.dim))
    # column-by-column accumulation keeps results independent of BLAS threading
    x = np.tile(law.mean, (n, 1))
    for k in range(law.dim):
        x += z[:, k, None] * F[None, :, k]
    return x


def uniform_sample(law, n, seed, stream=0):
    u = rng_for(seed, 2, stream).random((n, law.dim))
    x = law.lower + (law.upper - law.lower) * u
    # guard against rounding onto the open upper end
    return np.minimum(x, np.nextafter(law.upper, law.lower))


def sample(law, n, seed, stream=0):
    if isinstance(law, GaussianLaw):
        return mvn_sample(law, n, seed, stream)
    if isinstance(law, UniformBoxLaw):
        return uniform_sample(law, n, seed, stream)
    raise TypeError(f"unsupported law {type(law).__name__}")


def fix_coordinate(samples, i, value):
    x = np.array(samples, dtype=float, copy=True)
    if x.ndim != 2:
        raise ValueError("samples must be an (n, p) matrix")
    if not -x.shape[1] <= i < x.shape[1]:
        raise IndexError(f"coordinate {i} out of range for p = {x.shape[1]}")
    x[:, i] = value
    return x


def conditional_law(law, i, value):
    """Gaussian law of X given X_i = value (coordinate i becomes degenerate)."""
    mu, cov = law.mean, law.covariance
    if not 0 <= i < law.dim:
        raise IndexError(f"coordinate {i} out of range for p = {law.dim}")
    s_ii = cov[i, i]
    if s_ii <= 0:
        m = mu.copy()
        m[i] = value
        return GaussianLaw(m, cov)
    gain = cov[:, i] / s_ii
    m = mu + gain * (value - mu[i])
    c = cov - np.outer(gain, cov[i, :])
    c[i, :] = c[:, i] = 0.0
    m[i] = value
    return GaussianLaw(m, (c + c.T) / 2)


def empirical_moments(samples):
    """Sample mean, unbiased covariance and correlation matrix.

    A zero-variance column gets zero correlations (unit diagonal kept) and a
    RuntimeWarning.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / (n - 1)
    sd = np.sqrt(np.diag(cov))
    flat = sd == 0
    if np.any(flat):
        warnings.warn(f"zero-variance columns {np.flatnonzero(flat).tolist()}", RuntimeWarning)
    safe = np.where(flat, 1.0, sd)
    corr = cov / np.outer(safe, safe)
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    np.fill_diagonal(corr, 1.0)
    return mean, cov, corr
