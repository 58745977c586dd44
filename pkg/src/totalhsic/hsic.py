"""Empirical HSIC, total HSIC indices and distance-correlation indices.

The estimator is (1/n^2) tr(K H L H) with H = I - z z^T, z = 1/sqrt(n).  Using
tr(KHLH) = tr(KL) - 2<Kz, Lz> + <z, Kz><z, Lz> it is accumulated one row
panel at a time from per-row quantities

    s_i = <K_i, L_i>,   u_i = <K_i, z>,   v_i = <L_i, z>,

which are merged in index order with exactly rounded sums.  No n x n array is
ever allocated on this path.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map, panels
from .kernel import (
    ParameterBlock,
    SubsetSpec,
    augmented_rows,
    centering_stats,
    output_source,
)

__all__ = [
    "DegenerateOutputError",
    "HsicEstimate",
    "ReportEntry",
    "SensitivityReport",
    "SourceError",
    "denominator_guard",
    "distance_correlation",
    "full_report",
    "hsic_dense",
    "hsic_streaming",
    "hsic_subsets",
    "total_hsic_index",
]

log = logging.getLogger(__name__)

BOUND_TOL = 1e-10
DCORR_TOL = 1e-8


class DegenerateOutputError(ValueError):
    """HSIC denominator too small for the index to mean anything."""


class SourceError(RuntimeError):
    """A Gram column source failed; carries the offending column index."""

    def __init__(self, column, cause):
        super().__init__(f"Gram column source failed at column {column}: {cause!r}")
        self.column = column


def denominator_guard(n, scale=1e-12):
    return scale * (n - 1) / n**2


@dataclass(frozen=True)
class HsicEstimate:
    value: float
    n: int
    subset: SubsetSpec = SubsetSpec()
    bandwidths: tuple = ()
    raw: float = None

    def __post_init__(self):
        if self.raw is None:
            object.__setattr__(self, "raw", self.value)
        object.__setattr__(self, "value", max(float(self.value), 0.0))


def hsic_dense(K, L):
    """(1/n^2) tr(K H L H) by explicit dense products.  O(n^3); oracle only."""
    K = np.asarray(K, dtype=float)
    L = np.asarray(L, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape != L.shape:
        raise ValueError(f"need square matrices of equal size, got {K.shape} and {L.shape}")
    for name, M in (("K", K), ("L", L)):
        if not np.allclose(M, M.T, rtol=0, atol=1e-10 * max(1.0, np.abs(M).max())):
            raise ValueError(f"{name} is not symmetric")
    n = K.shape[0]
    z = np.full((n, 1), 1 / math.sqrt(n))
    H = np.eye(n) - z @ z.T
    return float(np.trace(K @ H @ L @ H)) / n**2


def _combine(s, u, v, n):
    rn = math.sqrt(n)
    S = math.fsum(s)
    uv = math.fsum(u * v)
    uz = math.fsum(u) / rn
    vz = math.fsum(v) / rn
    return (S - 2 * uv + uz * vz) / n**2


def _source_rows(source, j0, j1):
    if hasattr(source, "rows"):
        try:
            return source.rows(j0, j1)
        except Exception as exc:
            raise SourceError(j0, exc) from exc
    get = source.column if hasattr(source, "column") else source
    cols = []
    for j in range(j0, j1):
        try:
            cols.append(np.asarray(get(j), dtype=float))
        except Exception as exc:
            raise SourceError(j, exc) from exc
    return np.stack(cols)


def hsic_streaming(colK, colL, n=None, workers=1, subset=SubsetSpec(), bandwidths=()):
    """Streaming HSIC estimate from two Gram column sources.

    A source is anything with ``rows(j0, j1)`` (a panel of consecutive
    rows), ``column(j)``, or a plain callable ``j -> column``.
    """
    n = n or getattr(colK, "n", None) or getattr(colL, "n", None)
    if n is None or n < 2:
        raise ValueError("need n >= 2")
    rn = math.sqrt(n)

    def run(bounds):
        a = _source_rows(colK, *bounds)
        b = _source_rows(colL, *bounds)
        if a.shape != (bounds[1] - bounds[0], n) or b.shape != a.shape:
            raise SourceError(bounds[0], ValueError("column has wrong length"))
        return (a * b).sum(axis=1), a.sum(axis=1) / rn, b.sum(axis=1) / rn

    parts = ordered_map(run, panels(n), workers)
    s, u, v = (np.concatenate(p) for p in zip(*parts))
    return HsicEstimate(_combine(s, u, v, n), n, subset, tuple(bandwidths))


def hsic_subsets(blocks, stats, y_source, subsets, self_subsets=(), output_self=False, workers=1):
    """HSIC(X_A, Y) for many subsets A in a single pass over the data.

    Also returns HSIC(X_A, X_A) for ``self_subsets`` and HSIC(Y, Y) when
    ``output_self`` is set.  Per-block augmented panels are computed once per
    row panel and shared by every subset.  HSIC with the empty subset is
    exactly zero (K = J and H J H = 0) and is not accumulated.

    Returns
    -------
    cross, self_terms, y_self
        Two dicts keyed by SubsetSpec, and a float (or None).
    """
    n = y_source.n
    subsets = [s if isinstance(s, SubsetSpec) else SubsetSpec(tuple(s)) for s in subsets]
    self_subsets = [s if isinstance(s, SubsetSpec) else SubsetSpec(tuple(s)) for s in self_subsets]
    cross_keys = list(dict.fromkeys(s for s in subsets if len(s)))
    self_keys = list(dict.fromkeys(s for s in self_subsets if len(s)))
    needed = sorted({i for s in cross_keys + self_keys for i in s})
    rn = math.sqrt(n)

    def run(bounds):
        j0, j1 = bounds
        try:
            cache = {i: augmented_rows(blocks[i], stats[i], j0, j1) for i in needed}
        except Exception as exc:
            raise SourceError(j0, exc) from exc
        lrows = _source_rows(y_source, j0, j1)
        v = lrows.sum(axis=1) / rn
        res = {"v": v}
        if output_self:
            res["yy"] = (lrows * lrows).sum(axis=1)
        products = {}
        for key in dict.fromkeys(cross_keys + self_keys):
            idx = key.indices
            k = cache[idx[0]].copy() if len(idx) > 1 else cache[idx[0]]
            for i in idx[1:]:
                k *= cache[i]
            products[key] = (k, k.sum(axis=1) / rn)
        for key in cross_keys:
            k, u = products[key]
            res[("x", key)] = ((k * lrows).sum(axis=1), u)
        for key in self_keys:
            k, u = products[key]
            res[("s", key)] = ((k * k).sum(axis=1), u)
        return res

    parts = ordered_map(run, panels(n), workers)
    v = np.concatenate([p["v"] for p in parts])

    def merged(tag, key):
        s = np.concatenate([p[(tag, key)][0] for p in parts])
        u = np.concatenate([p[(tag, key)][1] for p in parts])
        return s, u

    cross = {}
    for key in subsets:
        if not len(key):
            cross[key] = 0.0
        else:
            s, u = merged("x", key)
            cross[key] = _combine(s, u, v, n)
    self_terms = {}
    for key in self_subsets:
        if not len(key):
            self_terms[key] = 0.0
        else:
            s, u = merged("s", key)
            self_terms[key] = _combine(s, u, u, n)
    y_self = None
    if output_self:
        y_self = _combine(np.concatenate([p["yy"] for p in parts]), v, v, n)
    return cross, self_terms, y_self


def _check_bound(raw, what):
    if not -BOUND_TOL <= raw <= 1 + BOUND_TOL:
        raise ArithmeticError(f"{what} = {raw!r} violates [0, 1] beyond tolerance {BOUND_TOL}")
    return min(max(raw, 0.0), 1.0)


def _total_from(h_comp, h_full, n, subset):
    guard = denominator_guard(n)
    if not h_full > guard:
        raise DegenerateOutputError(
            f"output independent of all inputs at this sample size "
            f"(HSIC(X,Y) = {h_full:.3e} <= {guard:.3e})"
        )
    raw = 1.0 - h_comp / h_full
    return _check_bound(raw, f"total index of {subset.indices}"), raw


def total_hsic_index(blocks, stats, y_source, subset, workers=1, return_raw=False):
    """1 - HSIC(X_~A, Y) / HSIC(X, Y) with augmented product kernels."""
    p = len(blocks)
    subset = SubsetSpec.of(subset.indices if isinstance(subset, SubsetSpec) else subset, p)
    full = SubsetSpec(tuple(range(p)))
    comp = subset.complement(p)
    cross, _, _ = hsic_subsets(blocks, stats, y_source, [comp, full], workers=workers)
    clamped, raw = _total_from(cross[comp], cross[full], y_source.n, subset)
    return (clamped, raw) if return_raw else clamped


def _dcorr_from(h_xy, h_xx, h_yy, n, subset):
    guard = denominator_guard(n)
    if not (h_xx > guard and h_yy > guard):
        raise DegenerateOutputError(
            f"degenerate self-HSIC for subset {subset.indices}: "
            f"HSIC(X,X) = {h_xx:.3e}, HSIC(Y,Y) = {h_yy:.3e}"
        )
    raw = h_xy / math.sqrt(h_xx * h_yy)
    if not -DCORR_TOL <= raw <= 1 + DCORR_TOL:
        raise ArithmeticError(f"distance correlation {raw!r} outside [0, 1]")
    return min(max(raw, 0.0), 1.0), raw


def distance_correlation(blocks, stats, y_source, subset, workers=1, return_raw=False):
    """HSIC(X_A, Y) / sqrt(HSIC(X_A, X_A) HSIC(Y, Y))."""
    subset = SubsetSpec.of(subset.indices if isinstance(subset, SubsetSpec) else subset, len(blocks))
    cross, selfs, yy = hsic_subsets(
        blocks, stats, y_source, [subset], [subset], output_self=True, workers=workers
    )
    clamped, raw = _dcorr_from(cross[subset], selfs[subset], yy, y_source.n, subset)
    return (clamped, raw) if return_raw else clamped


@dataclass
class ReportEntry:
    subset: SubsetSpec
    label: str
    hsic: HsicEstimate
    total_index: float
    total_index_raw: float
    dcorr: float
    dcorr_raw: float


@dataclass
class SensitivityReport:
    entries: list
    full_hsic: HsicEstimate
    output_hsic: float
    n: int
    seed: object
    names: tuple
    bandwidths: tuple
    output_bandwidth: float
    denominator_guard: float
    metadata: dict = field(default_factory=dict)

    def entry(self, subset):
        subset = subset if isinstance(subset, SubsetSpec) else SubsetSpec(tuple(subset))
        for e in self.entries:
            if e.subset == subset:
                return e
        raise KeyError(subset)

    def total_indices(self):
        return np.array([e.total_index for e in self.entries])

    def dcorrs(self):
        return np.array([e.dcorr for e in self.entries])

    def rows(self):
        return [
            {"subset": e.label, "hsic": e.hsic.value, "total_index": e.total_index, "dcorr": e.dcorr}
            for e in self.entries
        ]

    def to_dict(self):
        return {
            "n": self.n,
            "seed": self.seed,
            "inputs": list(self.names),
            "bandwidths": dict(zip(self.names, self.bandwidths)),
            "output_bandwidth": self.output_bandwidth,
            "hsic_full": self.full_hsic.value,
            "hsic_full_raw": self.full_hsic.raw,
            "hsic_output_self": self.output_hsic,
            "denominator_guard": self.denominator_guard,
            "entries": [
                {
                    "subset": e.label,
                    "indices": list(e.subset.indices),
                    "hsic": e.hsic.value,
                    "hsic_raw": e.hsic.raw,
                    "total_index": e.total_index,
                    "total_index_raw": e.total_index_raw,
                    "dcorr": e.dcorr,
                    "dcorr_raw": e.dcorr_raw,
                }
                for e in self.entries
            ],
            **self.metadata,
        }


def make_blocks(samples, names=None, seed=0):
    """One scalar ParameterBlock per column, bandwidths by median heuristic."""
    x = np.asarray(samples, dtype=float)
    names = names or [f"X{i + 1}" for i in range(x.shape[1])]
    return [ParameterBlock.from_samples(nm, x[:, [i]], seed=seed) for i, nm in enumerate(names)]


def full_report(blocks, y_samples, subsets=None, seed=None, workers=1, y_source=None, dcorr=True):
    """Total HSIC indices (and distance correlations) for the requested subsets.

    Centering statistics are computed once per block and the whole report
    takes one pass over the row panels.  Defaults to all singletons.
    """
    p = len(blocks)
    names = tuple(b.name for b in blocks)
    if subsets is None:
        subsets = [SubsetSpec((i,)) for i in range(p)]
    subsets = [s if isinstance(s, SubsetSpec) else SubsetSpec.of(s, p) for s in subsets]
    if len(set(subsets)) != len(subsets):
        raise ValueError("requested subsets must be unique")
    for s in subsets:
        SubsetSpec.of(s.indices, p)
    if y_source is None:
        y_source = output_source(y_samples, seed=0 if seed is None else seed)
    n = y_source.n
    if any(b.n != n for b in blocks):
        raise ValueError("inputs and outputs must have the same number of samples")

    stats = [centering_stats(b, workers=workers) for b in blocks]
    full = SubsetSpec(tuple(range(p)))
    comps = [s.complement(p) for s in subsets]
    cross, selfs, yy = hsic_subsets(
        blocks,
        stats,
        y_source,
        [full, *comps, *subsets],
        self_subsets=subsets if dcorr else (),
        output_self=dcorr,
        workers=workers,
    )
    h_full = cross[full]
    bw = tuple(b.bandwidth for b in blocks)
    entries = []
    for s, c in zip(subsets, comps):
        t, t_raw = _total_from(cross[c], h_full, n, s)
        if dcorr:
            d, d_raw = _dcorr_from(cross[s], selfs[s], yy, n, s)
        else:
            d = d_raw = float("nan")
        entries.append(
            ReportEntry(s, s.label(names), HsicEstimate(cross[s], n, s, bw), t, t_raw, d, d_raw)
        )
    return SensitivityReport(
        entries=entries,
        full_hsic=HsicEstimate(h_full, n, full, bw),
        output_hsic=yy,
        n=n,
        seed=seed,
        names=names,
        bandwidths=bw,
        output_bandwidth=y_source.sigma if hasattr(y_source, "sigma") else None,
        denominator_guard=denominator_guard(n),
    )
