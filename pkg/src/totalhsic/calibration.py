"""Ordinary least-squares calibration of the cholera model to synthetic I(t) data.

Parameters are fitted in log space (theta = exp(phi)) by Gauss-Newton with a
forward-difference Jacobian and step-halving line search.  The resulting
asymptotic covariance sigma^2 (J^T J)^{-1} and its correlation matrix define
the Gaussian law used for correlated sampling.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .models import CHOLERA_NAMES, CHOLERA_T_END, CholeraParams, simulate_cholera
from .ode import IntegrationError, IntegratorOptions
from .sampling import GaussianLaw, mvn_sample, psd_factor, rng_for

__all__ = [
    "FitOptions",
    "FitResult",
    "ObservedData",
    "SingularJacobianError",
    "correlated_law_from_fit",
    "fd_jacobian",
    "gauss_newton",
    "gauss_newton_fit",
    "sample_positive",
    "synth_data",
]

log = logging.getLogger(__name__)

N_OBS = 151
# J^T J is declared singular beyond this condition number
MAX_CONDITION = 1e15


class SingularJacobianError(np.linalg.LinAlgError):
    def __init__(self, condition):
        super().__init__(f"J^T J is numerically singular (condition estimate {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    fd_step: float = 1e-6
    step_tol: float = 1e-8
    rss_tol: float = 1e-10
    max_halvings: int = 30
    # relative singular-value cutoff for the Gauss-Newton step, and the
    # largest allowed change of any coordinate in one step
    step_rcond: float = 1e-4
    max_step: float = 1.0
    integrator: IntegratorOptions = IntegratorOptions(output_points=N_OBS)
    workers: int = 1
    # "error": singular J^T J raises.  "truncate": pseudo-inverse that drops
    # directions whose log-scale standard error would exceed max_log_se.
    singular: str = "error"
    max_log_se: float = 1.0

    def __post_init__(self):
        if self.singular not in ("error", "truncate"):
            raise ValueError(f"singular must be 'error' or 'truncate', got {self.singular!r}")
        if not self.max_log_se > 0:
            raise ValueError("max_log_se must be positive")


@dataclass(frozen=True, eq=False)
class ObservedData:
    times: np.ndarray
    values: np.ndarray
    noise_sigma: float = 0.0
    seed: int = None


@dataclass(eq=False)
class FitResult:
    theta_hat: np.ndarray
    residual_variance: float
    covariance: np.ndarray
    correlation: np.ndarray
    iterations: int
    converged: bool
    rss: float = float("nan")
    condition: float = float("nan")
    rss_history: list = field(default_factory=list)
    names: tuple = CHOLERA_NAMES
    rank: int = None

    def to_dict(self):
        return {
            "kind": "cholera_ols_fit",
            "names": list(self.names),
            "theta_hat": self.theta_hat.tolist(),
            "residual_variance": self.residual_variance,
            "covariance": self.covariance.tolist(),
            "correlation": self.correlation.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "rss": self.rss,
            "condition": self.condition,
            "rss_history": list(self.rss_history),
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            residual_variance=float(d["residual_variance"]),
            covariance=np.asarray(d["covariance"], dtype=float),
            correlation=np.asarray(d["correlation"], dtype=float),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            rss=float(d.get("rss", "nan")),
            condition=float(d.get("condition", "nan")),
            rss_history=list(d.get("rss_history", [])),
            names=tuple(d.get("names", CHOLERA_NAMES)),
            rank=d.get("rank"),
        )


def _grid_options(times, base=None):
    times = np.asarray(times, dtype=float)
    base = base or IntegratorOptions()
    expected = np.linspace(0.0, CHOLERA_T_END, times.size)
    if times.size < 2 or not np.allclose(times, expected, rtol=0, atol=1e-12 * CHOLERA_T_END):
        raise ValueError("observation times must be evenly spaced on [0, 300] starting at 0")
    return IntegratorOptions(base.rel_tol, base.abs_tol, base.max_step, times.size, base.max_steps)


def _as_theta(theta):
    if isinstance(theta, CholeraParams):
        return theta.as_vector()
    return np.asarray(theta, dtype=float)


def synth_data(theta_star=None, times=N_OBS, noise_sigma=None, seed=0, opts=None):
    """Model I(t) at the observation times plus i.i.d. Gaussian noise.

    ``times`` is either a count of evenly spaced times on [0, 300] or the
    times themselves.  ``noise_sigma`` defaults to 1% of the peak of I.
    """
    theta_star = _as_theta(theta_star if theta_star is not None else CholeraParams())
    if np.isscalar(times):
        times = np.linspace(0.0, CHOLERA_T_END, int(times))
    gopts = _grid_options(times, opts)
    _, out = simulate_cholera(theta_star[None, :], gopts)
    clean = out[0, :, 0]
    if noise_sigma is None:
        noise_sigma = 0.01 * float(np.max(np.abs(clean)))
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    values = clean.copy()
    if noise_sigma > 0:
        values = values + noise_sigma * rng_for(seed, 3).standard_normal(clean.size)
    return ObservedData(np.asarray(times, dtype=float), values, float(noise_sigma), seed)


def fd_jacobian(fun, x, f0=None, step=1e-6):
    """Forward differences of a batched ``fun`` (rows of x -> rows of output)."""
    x = np.asarray(x, dtype=float)
    pts = np.tile(x, (x.size + (f0 is None), 1))
    offset = int(f0 is None)
    for k in range(x.size):
        pts[offset + k, k] += step
    vals = fun(pts)
    if f0 is None:
        f0 = vals[0]
    return (vals[offset:] - f0).T / step, f0


def _trial(residual_fun, x):
    # a trial point where the model cannot be evaluated counts as infinitely bad
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            r = residual_fun(x[None, :])[0]
    except (IntegrationError, FloatingPointError, OverflowError):
        return None, float("inf")
    rss = float(r @ r)
    return r, rss if np.isfinite(rss) else float("inf")


def gauss_newton(residual_fun, x0, opts=None):
    """Gauss-Newton on a batched residual function with step halving.

    Steps come from a truncated-SVD least-squares solve (``step_rcond``) and
    are scaled down so no coordinate moves by more than ``max_step``.

    ``residual_fun`` maps a (k, p) array of parameter vectors to (k, m)
    residuals.  Returns (x, r, J, iterations, converged, rss_history).
    """
    opts = opts or FitOptions()
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fun(x[None, :])[0]
    rss = float(r @ r)
    history = [rss]
    converged = False
    J = None
    it = 0
    for it in range(1, opts.max_iter + 1):
        J, _ = fd_jacobian(residual_fun, x, r, opts.fd_step)
        step = np.linalg.lstsq(J, -r, rcond=opts.step_rcond)[0]
        longest = np.max(np.abs(step))
        if longest > opts.max_step:
            step *= opts.max_step / longest
        if np.max(np.abs(step)) < opts.step_tol:
            converged = True
            break
        lam = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            trial = x + lam * step
            r_new, rss_new = _trial(residual_fun, trial)
            if np.isfinite(rss_new) and rss_new < rss:
                accepted = True
                break
            lam /= 2
        if not accepted:
            # no descent along the Gauss-Newton direction: stationary to FD accuracy
            converged = True
            break
        rel_drop = (rss - rss_new) / rss if rss > 0 else 0.0
        x, r, rss = trial, r_new, rss_new
        history.append(rss)
        if np.max(np.abs(lam * step)) < opts.step_tol or rel_drop < opts.rss_tol:
            converged = True
            J, _ = fd_jacobian(residual_fun, x, r, opts.fd_step)
            break
    return x, r, J, it, converged, history


def gauss_newton_fit(data, theta0=None, opts=None):
    """OLS fit of the nine cholera parameters to observed I(t).

    Covariance is sigma^2 (J^T J)^{-1}, sigma^2 = RSS / (K - 9), evaluated in
    log space and mapped to natural parameters by the chain rule.
    """
    opts = opts or FitOptions()
    theta0 = _as_theta(theta0 if theta0 is not None else CholeraParams())
    if np.any(theta0 <= 0):
        raise ValueError("theta0 must be strictly positive")
    if not np.all(np.isfinite(data.values)):
        raise ValueError("data must be finite")
    gopts = _grid_options(data.times, opts.integrator)

    def residuals(phi):
        _, out = simulate_cholera(np.exp(phi), gopts, workers=opts.workers)
        return out[:, :, 0] - data.values[None, :]

    phi, r, J_phi, iterations, converged, history = gauss_newton(residuals, np.log(theta0), opts)
    theta = np.exp(phi)
    rss = float(r @ r)
    dof = data.values.size - theta.size
    sigma2 = rss / dof
    _, sv, Vt = np.linalg.svd(J_phi, full_matrices=False)
    condition = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else float("inf")
    if condition < MAX_CONDITION:
        cov_phi = sigma2 * np.linalg.inv(J_phi.T @ J_phi)
        rank = theta.size
    elif opts.singular == "error":
        raise SingularJacobianError(condition)
    else:
        cov_phi, rank = _truncated_covariance(sv, Vt, sigma2, opts.max_log_se)
        log.warning(
            "J^T J singular (condition %.3e); kept %d of %d parameter directions",
            condition, rank, theta.size,
        )
    cov_phi = (cov_phi + cov_phi.T) / 2
    cov = cov_phi * np.outer(theta, theta)
    return FitResult(
        theta_hat=theta,
        residual_variance=sigma2,
        covariance=cov,
        correlation=_correlation(cov),
        iterations=iterations,
        converged=converged,
        rss=rss,
        condition=condition,
        rss_history=history,
        rank=rank,
    )


def _truncated_covariance(sv, Vt, sigma2, max_log_se):
    """sigma^2 (J^T J)^+ restricted to directions with standard error <= max_log_se."""
    keep = np.sqrt(sigma2) <= max_log_se * sv
    keep &= sv > 0
    V = Vt[keep].T
    return (V / sv[keep] ** 2) @ V.T * sigma2, int(keep.sum())


def _correlation(cov):
    d = np.sqrt(np.diag(cov))
    if np.any(d == 0):
        corr = np.eye(cov.shape[0])
        nz = d > 0
        corr[np.ix_(nz, nz)] = cov[np.ix_(nz, nz)] / np.outer(d[nz], d[nz])
        return corr
    corr = cov / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return corr


def correlated_law_from_fit(fit):
    """Gaussian law N(theta_hat, covariance), clipped to PSD if needed."""
    if not fit.converged:
        raise ValueError("fit did not converge; refusing to build a sampling law")
    cov = (fit.covariance + fit.covariance.T) / 2
    w, V = np.linalg.eigh(cov)
    if w.min() < 0:
        cov = (V * np.clip(w, 0, None)) @ V.T
        cov = (cov + cov.T) / 2
    return GaussianLaw(fit.theta_hat, cov)


def sample_positive(law, n, seed, max_rounds=1000, stream_offset=0):
    """Draw n samples with every coordinate > 0, redrawing rejected rows.

    Rounds use separate substreams, so the result is a deterministic
    function of (law, n, seed, stream_offset).
    """
    psd_factor(law.covariance)
    kept = []
    have = 0
    rejected = 0
    for rnd in range(max_rounds):
        x = mvn_sample(law, n, seed, stream=(stream_offset << 16) + rnd)
        ok = np.all(x > 0, axis=1)
        rejected += int((~ok).sum())
        kept.append(x[ok])
        have += int(ok.sum())
        if have >= n:
            break
    else:
        raise RuntimeError(f"could not draw {n} positive samples in {max_rounds} rounds")
    if rejected:
        log.info("rejected %d non-positive parameter draws out of %d", rejected, have + rejected)
    return np.concatenate(kept)[:n]
