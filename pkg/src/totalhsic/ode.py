"""Adaptive Dormand-Prince 5(4) integration and function-valued outputs.

The integrator advances a whole batch of independent initial value problems
in lockstep, each sample with its own step size and error control, and
resamples every solution onto a shared uniform output grid through the
pair's fourth-order continuous extension.  All per-sample arithmetic is
elementwise, so a sample's result does not depend on which batch it ran in.
"""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IntegrationError",
    "IntegratorOptions",
    "StepLimitError",
    "StiffnessError",
    "Trajectory",
    "integrate_batch",
    "integrate_rk45",
    "l2_features",
    "trapezoid_weights",
    "trajectory_distance",
]

# Dormand & Prince (1980) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = _A[6] + [0.0]
# fifth-order minus embedded fourth-order weights
_E = [
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
]
# continuous extension: y(t + th*h) = y + h * sum_i k_i * (P[i] @ [th, th^2, th^3, th^4])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

# PI step-size controller (Hairer, Norsett & Wanner, DOPRI5 defaults)
_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2
_FAC_MAX = 10.0


class IntegrationError(RuntimeError):
    """The integrator could not reach the end of the time span."""


class StepLimitError(IntegrationError):
    pass


class StiffnessError(IntegrationError):
    """Step size underflowed; the problem is likely stiff or singular."""

    def __init__(self, t, sample=None):
        where = "" if sample is None else f" (sample {sample})"
        super().__init__(f"step size underflow at t = {t:.17g}{where}")
        self.t = t
        self.sample = sample


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    max_step: float = np.inf
    output_points: int = 601
    max_steps: int = 200_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.output_points < 2:
            raise ValueError("output grid needs at least two points")

    def grid(self, t_span):
        return np.linspace(float(t_span[0]), float(t_span[1]), self.output_points)


@dataclass(frozen=True)
class Trajectory:
    """A function-valued output sampled on a time grid.

    ``values`` has one row per time and one column per observed component.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.shape[0] != times.size:
            raise ValueError("values must have one row per time point")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def to_csv(self, path, columns=None):
        columns = columns or [f"y{k}" for k in range(self.values.shape[1])]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", *columns])
            for t, row in zip(self.times, self.values):
                writer.writerow([repr(float(t)), *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


def trapezoid_weights(times):
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def trajectory_distance(t1, t2):
    """L2 distance between two trajectories on the same grid (trapezoid rule)."""
    if t1.times.shape != t2.times.shape or not np.array_equal(t1.times, t2.times):
        raise ValueError("trajectories are not on a common time grid")
    if t1.values.shape != t2.values.shape:
        raise ValueError("trajectories have different numbers of components")
    diff = t1.values - t2.values
    sq = np.sum(diff * diff, axis=1)
    return float(np.sqrt(np.dot(trapezoid_weights(t1.times), sq)))


def l2_features(values, times):
    """Embed sampled curves so that Euclidean distance equals trajectory L2 distance.

    ``values`` is (n, T) or (n, T, m); returns an (n, T*m) array.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[:, :, None]
    root_w = np.sqrt(trapezoid_weights(times))
    return (values * root_w[None, :, None]).reshape(values.shape[0], -1)


def _wrms(e, scale):
    # column loop keeps the reduction order independent of batch layout
    acc = np.zeros(e.shape[0])
    for c in range(e.shape[1]):
        q = e[:, c] / scale[:, c]
        acc += q * q
    return np.sqrt(acc / e.shape[1])


def _initial_step(rhs, t0, y0, f0, rows, opts, direction_span):
    scale = opts.abs_tol + opts.rel_tol * np.abs(y0)
    d0 = _wrms(y0, scale)
    d1 = _wrms(f0, scale)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.where(d1 > 0, d1, 1.0))
    h0 = np.minimum(h0, direction_span)
    y1 = y0 + h0[:, None] * f0
    f1 = rhs(t0 + h0, y1, rows)
    d2 = _wrms(f1 - f0, scale) / h0
    dmax = np.maximum(d1, d2)
    with np.errstate(divide="ignore"):
        h1 = np.where(
            dmax <= 1e-15,
            np.maximum(1e-6, h0 * 1e-3),
            (0.01 / np.where(dmax > 0, dmax, 1.0)) ** (1 / 5),
        )
    return np.minimum(np.minimum(100 * h0, h1), opts.max_step)


def integrate_batch(rhs, y0, t_span, opts=None, observe=None):
    """Integrate a batch of IVPs and resample onto the uniform output grid.

    Parameters
    ----------
    rhs
        Vectorised vector field ``rhs(t, y, rows)`` with ``t`` of shape (k,),
        ``y`` of shape (k, m) and ``rows`` the indices of those k samples in
        the batch.  Returns the (k, m) derivatives.
    y0
        (N, m) initial states.
    t_span
        (t0, t1) with t1 > t0.
    opts
        IntegratorOptions.
    observe
        Optional column index (or list of indices) to keep; by default all
        state components are stored.

    Returns
    -------
    times, values
        The (T,) output grid and the (N, T, q) resampled solutions.
    """
    opts = opts or IntegratorOptions()
    y0 = np.array(y0, dtype=float, ndmin=2)
    t0, t_end = float(t_span[0]), float(t_span[1])
    if not t_end > t0:
        raise ValueError("t_span must be increasing")
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state must be finite")
    n_batch, m = y0.shape
    grid = opts.grid((t0, t_end))
    n_grid = grid.size
    cols = np.arange(m) if observe is None else np.atleast_1d(observe)
    out = np.empty((n_batch, n_grid, cols.size))
    out[:, 0] = y0[:, cols]

    rows = np.arange(n_batch)
    t = np.full(n_batch, t0)
    y = y0.copy()
    f = rhs(t, y, rows)
    h = _initial_step(rhs, t, y, f, rows, opts, t_end - t0)
    facold = np.full(n_batch, 1e-4)
    last_rejected = np.zeros(n_batch, dtype=bool)
    next_k = np.ones(n_batch, dtype=np.intp)
    eps = np.finfo(float).eps
    steps = 0

    while rows.size:
        steps += 1
        if steps > opts.max_steps:
            raise StepLimitError(f"exceeded {opts.max_steps} integration steps")
        remaining = t_end - t
        final = h >= remaining
        h = np.where(final, remaining, h)
        if np.any(h <= 16 * eps * np.abs(t)):
            bad = int(np.argmax(h <= 16 * eps * np.abs(t)))
            raise StiffnessError(float(t[bad]), int(rows[bad]))

        hc = h[:, None]
        k = [f]
        for i in range(1, 7):
            acc = _A[i][0] * k[0]
            for j in range(1, i):
                if _A[i][j]:
                    acc = acc + _A[i][j] * k[j]
            yi = y + hc * acc
            if i == 6:
                y_new = yi
            k.append(rhs(t + _C[i] * h, yi, rows))
        err_vec = _E[0] * k[0]
        for j in range(2, 7):
            err_vec = err_vec + _E[j] * k[j]
        err_vec = hc * err_vec
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = _wrms(err_vec, scale)
        err = np.where(np.isfinite(err), err, np.inf)

        fac11 = err**_EXPO
        fac = fac11 / facold**_BETA
        fac = np.clip(fac / _SAFETY, 1 / _FAC_MAX, 1 / _FAC_MIN)
        accept = err <= 1.0

        h_acc = np.minimum(h / fac, opts.max_step)
        h_acc = np.where(last_rejected, np.minimum(h_acc, h), h_acc)
        with np.errstate(divide="ignore"):
            h_rej = h / np.minimum(1 / _FAC_MIN, fac11 / _SAFETY)

        if np.any(accept):
            t_new = np.where(final, t_end, t + h)
            _dense_output(out, grid, rows, next_k, accept, t, t_new, h, y, y_new, k, cols)
            facold = np.where(accept, np.maximum(err, 1e-4), facold)
            y = np.where(accept[:, None], y_new, y)
            f = np.where(accept[:, None], k[6], f)
            t = np.where(accept, t_new, t)

        h = np.where(accept, h_acc, h_rej)
        last_rejected = ~accept

        finished = accept & final
        if np.any(finished):
            keep = ~finished
            rows, t, y, f, h = rows[keep], t[keep], y[keep], f[keep], h[keep]
            facold, last_rejected, next_k = facold[keep], last_rejected[keep], next_k[keep]

    return grid, out


def _dense_output(out, grid, rows, next_k, accept, t, t_new, h, y, y_new, k, cols):
    n_grid = grid.size
    while True:
        pending = accept & (next_k < n_grid)
        if not np.any(pending):
            return
        tg = grid[np.minimum(next_k, n_grid - 1)]
        sel = np.flatnonzero(pending & (tg <= t_new))
        if sel.size == 0:
            return
        theta = (tg[sel] - t[sel]) / h[sel]
        powers = np.stack([theta, theta**2, theta**3, theta**4])
        w = _P @ powers
        incr = w[0][:, None] * k[0][sel]
        for i in range(2, 7):
            incr = incr + w[i][:, None] * k[i][sel]
        val = y[sel] + h[sel][:, None] * incr
        at_end = tg[sel] >= t_new[sel]
        val = np.where(at_end[:, None], y_new[sel], val)
        out[rows[sel], next_k[sel]] = val[:, cols]
        next_k[sel] += 1


def integrate_rk45(rhs, y0, t_span, opts=None):
    """Integrate a single IVP ``y' = rhs(t, y)`` and return its Trajectory."""
    y0 = np.asarray(y0, dtype=float)
    scalar_state = y0.ndim == 0
    y0 = np.atleast_1d(y0)

    def batched(t, y, rows):
        return np.atleast_1d(np.asarray(rhs(t[0], y[0]), dtype=float))[None, :]

    times, values = integrate_batch(batched, y0[None, :], t_span, opts)
    vals = values[0]
    return Trajectory(times, vals[:, 0] if scalar_state else vals)
