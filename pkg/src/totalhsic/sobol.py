"""Total-effect Sobol' indices by Jansen's pick-and-freeze estimator.

Only valid for independent inputs.  Used as the variance-based baseline that
the HSIC indices are compared against on the Ishigami function.
"""

from dataclasses import dataclass

import numpy as np

from .sampling import UniformBoxLaw, sample

__all__ = ["SobolTotals", "ZeroVarianceError", "jansen_total"]

MIN_BASE_SAMPLES = 100


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SobolTotals:
    totals: np.ndarray
    n: int
    variance_hat: float
    evaluations: int = 0

    def as_dict(self, names=None):
        names = names or [f"X{i + 1}" for i in range(self.totals.size)]
        return {
            "kind": "sobol_total_jansen",
            "n": self.n,
            "evaluations": self.evaluations,
            "variance_hat": self.variance_hat,
            "totals": dict(zip(names, self.totals.tolist())),
        }


def jansen_total(model, law, n, seed):
    """Jansen total-effect indices for a batched ``model`` under a product law.

    S_T,i = mean((f(A) - f(A_B^i))^2) / (2 V), where A_B^i is A with column
    i taken from B and V is the sample variance of f over A and B together.
    Uses n (p + 2) model evaluations.

    Parameters
    ----------
    model : callable
        Maps an (m, p) input matrix to m outputs.
    law : UniformBoxLaw
        Independent inputs; correlated laws are rejected.
    n : int
        Base sample count (rows of A and of B).
    seed : int
    """
    if not isinstance(law, UniformBoxLaw):
        raise TypeError("jansen_total needs independent inputs (a UniformBoxLaw)")
    if n < MIN_BASE_SAMPLES:
        raise ValueError(f"n must be at least {MIN_BASE_SAMPLES}")
    p = law.dim
    A = sample(law, n, seed, stream=0)
    B = sample(law, n, seed, stream=1)
    mixed = np.repeat(A[None], p, axis=0)
    for i in range(p):
        mixed[i, :, i] = B[:, i]
    # one batched call: A, B, then the p mixed matrices
    y = np.asarray(model(np.concatenate([A, B, mixed.reshape(p * n, p)])), dtype=float)
    if y.shape != (n * (p + 2),):
        raise ValueError("model must return one scalar per input row")
    fA, fB, fmix = y[:n], y[n : 2 * n], y[2 * n :].reshape(p, n)
    V = float(np.var(np.concatenate([fA, fB]), ddof=1))
    if not V > 0:
        raise ZeroVarianceError("model output has zero variance; indices are undefined")
    totals = np.mean((fA[None, :] - fmix) ** 2, axis=1) / (2 * V)
    return SobolTotals(totals, n, V, y.size)
