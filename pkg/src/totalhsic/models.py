"""Benchmark models: Ishigami, the correlated portfolio, and the cholera ODE."""

from dataclasses import astuple, dataclass, fields

import numpy as np

from ._parallel import ordered_map
from .ode import (  # noqa: F401  (re-exported)
    IntegratorOptions,
    StiffnessError,
    Trajectory,
    integrate_batch,
    integrate_rk45,
    trajectory_distance,
)

ISHIGAMI_A = 5.0
ISHIGAMI_B = 0.1

PORTFOLIO_COEFFS = np.array([20.0, 16.0, 12.0, 10.0, 4.0])

N_POP = 10_000
CHOLERA_T_END = 300.0
CHOLERA_STATE = ("S", "I", "R", "B_H", "B_L")


def ishigami(x, a=ISHIGAMI_A, b=ISHIGAMI_B):
    """Ishigami function; ``x`` is a 3-vector or an (n, 3) sample matrix."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    s1 = np.sin(x1)
    return s1 + a * np.sin(x2) ** 2 + b * x3**4 * s1


def ishigami_sobol_analytic(a=ISHIGAMI_A, b=ISHIGAMI_B):
    """Closed-form total-effect Sobol' indices of the Ishigami function.

    Inputs are independent U(-pi, pi).  Returns (S_T1, S_T2, S_T3).
    """
    pi4 = np.pi**4
    pi8 = np.pi**8
    v1 = 0.5 * (1 + b * pi4 / 5) ** 2
    v2 = a**2 / 8
    v13 = 8 * b**2 * pi8 / 225
    total = a**2 / 8 + b * pi4 / 5 + b**2 * pi8 / 18 + 0.5
    return ((v1 + v13) / total, v2 / total, v13 / total)


def portfolio(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 5:
        raise ValueError("portfolio takes 5 inputs")
    # explicit sum keeps the result free of BLAS summation order
    c = PORTFOLIO_COEFFS
    return c[0] * x[..., 0] + c[1] * x[..., 1] + c[2] * x[..., 2] + c[3] * x[..., 3] + c[4] * x[..., 4]


def portfolio_sigma(rho):
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    sigma = np.eye(5)
    for (i, j), c in {(0, 1): 0.5, (0, 2): 0.5, (0, 4): 0.8, (2, 4): 0.3}.items():
        sigma[i, j] = sigma[j, i] = c * rho
    if np.linalg.eigvalsh(sigma).min() < -1e-10:
        raise ValueError(f"portfolio covariance is not PSD at rho = {rho}")
    return sigma


@dataclass(frozen=True)
class CholeraParams:
    """Cholera model parameters (rates in 1/week, capacities in bacteria/mL)."""

    beta_L: float = 1.5
    beta_H: float = 7.5
    kappa_L: float = 1e6
    kappa_H: float = 7e8
    b: float = 1 / 1560
    chi: float = 1 / 168
    xi: float = 70.0
    delta: float = 7 / 30
    gamma: float = 7 / 5

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be strictly positive")

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_vector(cls, theta):
        return cls(*(float(v) for v in theta))

    def as_vector(self):
        return np.array(astuple(self), dtype=float)


CHOLERA_NAMES = CholeraParams.names()


def cholera_initial_state(n_pop=N_POP):
    return np.array([n_pop - 1.0, 1.0, 0.0, 0.0, 0.0])


def cholera_rhs(t, y, params, n_pop=N_POP):
    """Right-hand side of the cholera system.

    ``y`` holds (S, I, R, B_H, B_L) along its last axis.  ``params`` is a
    CholeraParams or any object whose attributes broadcast against
    ``y[..., 0]`` (e.g. per-sample arrays).
    """
    y = np.asarray(y, dtype=float)
    S, I, R, BH, BL = (y[..., k] for k in range(5))
    p = params
    inf_L = p.beta_L * S * (BL / (p.kappa_L + BL))
    inf_H = p.beta_H * S * (BH / (p.kappa_H + BH))
    out = np.empty_like(y)
    out[..., 0] = p.b * n_pop - inf_L - inf_H - p.b * S
    out[..., 1] = inf_L + inf_H - (p.gamma + p.b) * I
    out[..., 2] = p.gamma * I - p.b * R
    out[..., 3] = p.xi * I - p.chi * BH
    out[..., 4] = p.chi * BH - p.delta * BL
    return out


class _ParamColumns:
    # attribute view over rows of an (N, 9) parameter matrix
    def __init__(self, theta, rows):
        for k, name in enumerate(CHOLERA_NAMES):
            setattr(self, name, theta[rows, k])


def simulate_cholera(theta, opts=None, n_pop=N_POP, observe=(1,), chunk=1024, workers=1):
    """Integrate the cholera model for each parameter row of ``theta``.

    Returns the output grid and an (N, T, len(observe)) array; by default
    only the infected compartment I(t) is kept.
    """
    theta = np.array(theta, dtype=float, ndmin=2)
    if theta.shape[1] != 9:
        raise ValueError("theta must have 9 columns in CholeraParams order")
    opts = opts or IntegratorOptions()
    y0 = cholera_initial_state(n_pop)

    def run(bounds):
        lo, hi = bounds
        block = theta[lo:hi]

        def rhs(t, y, rows):
            return cholera_rhs(t, y, _ParamColumns(block, rows), n_pop)

        return integrate_batch(
            rhs, np.tile(y0, (hi - lo, 1)), (0.0, CHOLERA_T_END), opts, observe=list(observe)
        )

    bounds = [(lo, min(lo + chunk, len(theta))) for lo in range(0, len(theta), chunk)]
    parts = ordered_map(run, bounds, workers)
    return parts[0][0], np.concatenate([p[1] for p in parts], axis=0)


def cholera_trajectory(params=None, opts=None, n_pop=N_POP):
    """Full-state nominal trajectory as a Trajectory."""
    params = params or CholeraParams()
    return integrate_rk45(
        lambda t, y: cholera_rhs(t, y, params, n_pop),
        cholera_initial_state(n_pop),
        (0.0, CHOLERA_T_END),
        opts,
    )
