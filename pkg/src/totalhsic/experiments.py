"""Study drivers behind the command line: indices, convergence, rho sweeps,
model reduction, calibration and the streaming benchmark.

Every driver is a deterministic function of (config, seed); worker counts
only change wall time.  Writers put a ``#`` metadata line (tool version and
config hash) above the header of every CSV and the same fields into JSON.
"""

import csv
import io
import json
import logging
import math
import time
import tracemalloc
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__
from ._parallel import ordered_map
from .calibration import (
    FitOptions,
    FitResult,
    correlated_law_from_fit,
    gauss_newton_fit,
    sample_positive,
    synth_data,
)
from .config import ConfigError, rho_grid
from .hsic import full_report, hsic_dense, hsic_streaming, make_blocks
from .kernel import (
    AugmentedProductSource,
    SubsetSpec,
    centering_stats,
    gaussian_rows,
    output_source,
)
from .models import (
    CHOLERA_NAMES,
    CholeraParams,
    ishigami,
    portfolio,
    portfolio_sigma,
    simulate_cholera,
)
from .ode import IntegratorOptions, l2_features
from .sampling import (
    GaussianLaw,
    UniformBoxLaw,
    conditional_law,
    fix_coordinate,
    sample,
)
from .sobol import jansen_total

log = logging.getLogger(__name__)

# substream keys, kept apart so studies never share random bits
_STREAM_MAIN = 0
_STREAM_REDUCTION = 100


@dataclass
class Problem:
    """Samples of the inputs and the matching outputs."""

    names: tuple
    x: np.ndarray
    y: np.ndarray
    trajectory: bool = False
    times: np.ndarray = None


# --------------------------------------------------------------------- output


def _clean(obj):
    # JSON has no NaN/inf and no numpy scalars
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def meta_line(cfg, command):
    return f"# totalhsic {__version__} config_sha256={cfg.sha256()} command={command}"


def write_csv(path, cfg, command, header, rows):
    buf = io.StringIO()
    buf.write(meta_line(cfg, command) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return Path(path)


def write_json(path, cfg, command, payload):
    doc = {
        "schema_version": 1,
        "tool_version": __version__,
        "config_sha256": cfg.sha256(),
        "command": command,
        "config": cfg.data | {"workers": None},
        **payload,
    }
    Path(path).write_text(json.dumps(_clean(doc), indent=2) + "\n", encoding="utf-8")
    return Path(path)


def read_csv(path):
    """Rows of a CSV written by this module, skipping the metadata line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    return list(csv.DictReader(body))


# ---------------------------------------------------------------- models/laws


def input_names(cfg):
    model = cfg.model
    if model == "ishigami":
        return ("X1", "X2", "X3")
    if model == "portfolio":
        return ("X1", "X2", "X3", "X4", "X5")
    if model == "cholera":
        return CHOLERA_NAMES
    with open(cfg.resolve_path(cfg["model_options"]["inputs"]), encoding="utf-8") as fh:
        header = next(csv.reader(ln for ln in fh if not ln.startswith("#")))
    return tuple(h.strip() for h in header)


def integrator_options(cfg):
    return IntegratorOptions(**cfg["integrator"])


def fit_options(cfg):
    c = cfg["calibration"]
    keys = ("max_iter", "fd_step", "step_tol", "rss_tol", "max_halvings", "step_rcond",
            "max_step", "singular", "max_log_se")
    opts = {k: c[k] for k in keys if k in c}
    return FitOptions(workers=cfg["workers"], **opts)


def run_fit(cfg):
    """Synthetic data and a Gauss-Newton fit as described by ``calibration``."""
    c = cfg["calibration"]
    nominal = CholeraParams().as_vector()
    theta_star = np.asarray(c.get("theta_star", nominal), dtype=float)
    peak = None
    if "noise_fraction" in c:
        clean = synth_data(theta_star, times=c.get("observations", 151), noise_sigma=0.0)
        peak = float(np.max(np.abs(clean.values)))
    noise = c.get("noise_sigma", None if peak is None else c["noise_fraction"] * peak)
    data = synth_data(
        theta_star,
        times=c.get("observations", 151),
        noise_sigma=noise,
        seed=c.get("data_seed", 0),
    )
    theta0 = c.get("theta0_scale", 1.0) * theta_star
    return data, gauss_newton_fit(data, theta0, fit_options(cfg))


@lru_cache(maxsize=8)
def _cached_fit(blob):
    from .config import validate

    cfg = validate(json.loads(blob))
    return run_fit(cfg)[1]


def fitted_result(cfg):
    law = cfg["law"]
    if "path" in law:
        with open(cfg.resolve_path(law["path"]), encoding="utf-8") as fh:
            return FitResult.from_dict(json.load(fh))
    # workers do not change the fit, so they stay out of the cache key
    key = {"name": "fit", "model": "cholera", "n": 2, "law": {"kind": "fitted"},
           "calibration": cfg["calibration"]}
    return _cached_fit(json.dumps(key, sort_keys=True))


def build_law(cfg, rho=None):
    law = cfg["law"]
    kind = law["kind"]
    if kind == "uniform":
        return UniformBoxLaw(law["lower"], law["upper"])
    if kind == "uniform_around":
        center = law.get("center", "nominal")
        if center == "nominal":
            if cfg.model != "cholera":
                raise ConfigError(f"{cfg.source}: law.center 'nominal' needs the cholera model")
            center = CholeraParams().as_vector()
        return UniformBoxLaw.around(center, law["rel_width"])
    if kind == "gaussian":
        return GaussianLaw(law["mean"], law["covariance"])
    if kind == "portfolio":
        r = law.get("rho", 0.0) if rho is None else rho
        return GaussianLaw(np.asarray(law.get("mean", np.zeros(5)), dtype=float), portfolio_sigma(r))
    if kind == "fitted":
        return correlated_law_from_fit(fitted_result(cfg))
    raise ConfigError(f"{cfg.source}: unsupported law kind {kind!r}")


def draw(cfg, law, n, seed, stream=_STREAM_MAIN):
    if cfg.model == "cholera" and isinstance(law, GaussianLaw):
        return sample_positive(law, n, seed, stream_offset=stream)
    return sample(law, n, seed, stream)


def evaluate(cfg, x):
    """Model outputs for the rows of ``x``: (n,) scalars or (n, T) curves."""
    model = cfg.model
    opts = cfg["model_options"]
    if model == "ishigami":
        return ishigami(x, opts.get("a", 5.0), opts.get("b", 0.1)), None
    if model == "portfolio":
        return portfolio(x), None
    if model == "cholera":
        grid, out = simulate_cholera(x, integrator_options(cfg), workers=cfg["workers"])
        return out[:, :, 0], grid
    raise ConfigError(f"{cfg.source}: model {model!r} cannot be evaluated")


def _load_matrix(path):
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    return np.loadtxt(rows[1:], delimiter=",", ndmin=2)


def build_problem(cfg, n=None, seed=None, rho=None):
    n = cfg.n if n is None else n
    seed = cfg.seed if seed is None else seed
    names = input_names(cfg)
    if cfg.model == "external-samples":
        opts = cfg["model_options"]
        x = _load_matrix(cfg.resolve_path(opts["inputs"]))
        y = _load_matrix(cfg.resolve_path(opts["outputs"]))
        if x.shape[0] != y.shape[0]:
            raise ConfigError(f"{cfg.source}: inputs and outputs have different row counts")
        if x.shape[1] != len(names):
            raise ConfigError(f"{cfg.source}: input header does not match the data columns")
        return Problem(names, x, y[:, 0] if y.shape[1] == 1 else y)
    x = draw(cfg, build_law(cfg, rho), n, seed)
    y, grid = evaluate(cfg, x)
    return Problem(names, x, y, grid is not None, grid)


def _subsets(cfg, names):
    spec = cfg["subsets"]
    if spec is None:
        return None
    out = []
    for k, sub in enumerate(spec):
        idx = []
        for item in sub:
            if isinstance(item, str):
                if item not in names:
                    raise cfg.error(("subsets",), f"unknown input {item!r} in subset {k}")
                idx.append(names.index(item))
            else:
                idx.append(int(item))
        out.append(SubsetSpec.of(idx, len(names)))
    return out


def report_for(cfg, problem, seed=None, workers=None):
    workers = cfg["workers"] if workers is None else workers
    seed = cfg.seed if seed is None else seed
    blocks = make_blocks(problem.x, list(problem.names), seed=seed)
    y = l2_features(problem.y, problem.times) if problem.trajectory else problem.y
    y_source = output_source(y, seed=seed)
    return full_report(
        blocks,
        y,
        subsets=_subsets(cfg, problem.names),
        seed=seed,
        workers=workers,
        y_source=y_source,
        dcorr="dcorr" in cfg["indices"],
    )


# --------------------------------------------------------------------- studies


def run_indices(cfg, out_dir):
    problem = build_problem(cfg)
    report = report_for(cfg, problem)
    out_dir = Path(out_dir)
    rows = [(r["subset"], r["hsic"], r["total_index"], r["dcorr"]) for r in report.rows()]
    files = [write_csv(out_dir / f"{cfg.name}_indices.csv", cfg, "indices",
                       ("subset", "hsic", "total_index", "dcorr"), rows)]
    payload = {"report": report.to_dict()}
    if "sobol" in cfg["indices"]:
        totals = sobol_for(cfg)
        payload["sobol"] = totals.as_dict(list(problem.names))
        files.append(write_csv(out_dir / f"{cfg.name}_sobol.csv", cfg, "indices",
                               ("input", "sobol_total"), zip(problem.names, totals.totals)))
    files.append(write_json(out_dir / f"{cfg.name}_indices.json", cfg, "indices", payload))
    return report, files


def sobol_for(cfg):
    law = build_law(cfg)
    if not isinstance(law, UniformBoxLaw):
        raise ConfigError(f"{cfg.source}: sobol indices need an independent uniform law")
    if cfg.model not in ("ishigami", "portfolio"):
        raise ConfigError(f"{cfg.source}: sobol indices need a scalar model")
    return jansen_total(lambda x: evaluate(cfg, x)[0], law, cfg["sobol"]["n"], cfg.seed)


def run_convergence(cfg, out_dir, n_grid=None, seeds=None):
    conv = cfg.get("convergence") or {}
    n_grid = list(n_grid or conv.get("n_grid") or [cfg.n])
    seeds = list(seeds or conv.get("seeds") or [cfg.seed])
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    cells = [(n, s) for n in n_grid for s in seeds]

    def cell(key):
        n, s = key
        rep = report_for(cfg, build_problem(cfg, n=n, seed=s), seed=s, workers=1)
        return [(n, s, e.label, e.total_index) for e in rep.entries]

    rows = [r for part in ordered_map(cell, cells, cfg["workers"]) for r in part]
    path = write_csv(Path(out_dir) / f"{cfg.name}_convergence.csv", cfg, "convergence",
                     ("n", "seed", "input", "total_index"), rows)
    return rows, [path]


def run_rho_sweep(cfg, out_dir):
    grid = rho_grid(cfg.get("sweep") or {"rho": [cfg["law"].get("rho", 0.0)]})

    def cell(rho):
        rep = report_for(cfg, build_problem(cfg, rho=rho), workers=1)
        return [(rho, e.label, e.total_index, e.dcorr) for e in rep.entries]

    rows = [r for part in ordered_map(cell, grid, cfg["workers"]) for r in part]
    path = write_csv(Path(out_dir) / f"{cfg.name}_rho_sweep.csv", cfg, "rho-sweep",
                     ("rho", "input", "total_index", "dcorr"), rows)
    return rows, [path]


def _fixed_value(spec, law, i):
    v = spec.get("value", "mean")
    return float(law.mean[i]) if v == "mean" else float(v)


def _reduced_inputs(cfg, law, x_full, i, value, mode, n, seed):
    if mode == "replace":
        return fix_coordinate(x_full, i, value)
    if not isinstance(law, GaussianLaw):
        raise ConfigError(f"{cfg.source}: conditional reduction needs a Gaussian law")
    return draw(cfg, conditional_law(law, i, value), n, seed, _STREAM_REDUCTION + 1 + i)


def run_reduction(cfg, out_dir):
    """Compare outputs with all inputs random against outputs with one input fixed."""
    spec = cfg["reduction"]
    if spec is None:
        raise ConfigError(f"{cfg.source}: config has no 'reduction' section")
    names = input_names(cfg)
    n = spec.get("n", cfg.n)
    mode = spec.get("mode", "replace")
    bins = spec.get("bins", 50)
    seed = cfg.seed
    rhos = spec.get("rho") or [None]
    summary, table = [], []
    for rho in rhos:
        law = build_law(cfg, rho)
        x_full = draw(cfg, law, n, seed, _STREAM_REDUCTION)
        y_full, grid = evaluate(cfg, x_full)
        for name in spec["fix"]:
            if name not in names:
                raise cfg.error(("reduction", "fix"), f"unknown input {name!r}")
            i = names.index(name)
            value = _fixed_value(spec, law, i)
            x_red = _reduced_inputs(cfg, law, x_full, i, value, mode, n, seed)
            y_red, _ = evaluate(cfg, x_red)
            entry = {"rho": rho, "fixed": name, "value": value, "mode": mode, "n": n}
            if grid is None:
                ks = sps.ks_2samp(y_full, y_red)
                entry |= {
                    "ks": float(ks.statistic),
                    "ks_pvalue": float(ks.pvalue),
                    "mean_full": float(np.mean(y_full)),
                    "mean_reduced": float(np.mean(y_red)),
                    "var_full": float(np.var(y_full, ddof=1)),
                    "var_reduced": float(np.var(y_red, ddof=1)),
                }
                edges = np.histogram_bin_edges(np.concatenate([y_full, y_red]), bins=bins)
                cf, _ = np.histogram(y_full, edges)
                cr, _ = np.histogram(y_red, edges)
                for k in range(bins):
                    table.append((_fmt_rho(rho), name, edges[k], edges[k + 1], int(cf[k]), int(cr[k])))
            else:
                m_full = y_full.mean(axis=0)
                m_red = y_red.mean(axis=0)
                rel = np.abs(m_red - m_full) / np.abs(m_full)
                entry |= {"max_rel_error": float(rel.max()), "t_max_rel_error": float(grid[rel.argmax()])}
                for t, a, b, e in zip(grid, m_full, m_red, rel):
                    table.append((name, t, a, b, e))
            summary.append(entry)
    out_dir = Path(out_dir)
    if grid is None:
        header = ("rho", "fixed", "bin_lo", "bin_hi", "count_full", "count_reduced")
    else:
        header = ("fixed", "time", "mean_full", "mean_reduced", "rel_error")
    files = [
        write_csv(out_dir / f"{cfg.name}_reduction.csv", cfg, "reduce", header, table),
        write_json(out_dir / f"{cfg.name}_reduction.json", cfg, "reduce", {"reduction": summary}),
    ]
    return summary, files


def _fmt_rho(rho):
    return "" if rho is None else rho


def run_calibrate(cfg, out_dir):
    if cfg.model != "cholera":
        raise ConfigError(f"{cfg.source}: calibrate needs the cholera model")
    data, fit = run_fit(cfg)
    out_dir = Path(out_dir)
    payload = fit.to_dict() | {
        "noise_sigma": data.noise_sigma,
        "data_seed": data.seed,
        "observation_times": data.times,
        "observations": data.values,
    }
    files = [write_json(out_dir / f"{cfg.name}_fit.json", cfg, "calibrate", payload)]
    rows = [(nm, *fit.correlation[k]) for k, nm in enumerate(fit.names)]
    files.append(write_csv(out_dir / f"{cfg.name}_correlation.csv", cfg, "calibrate",
                           ("parameter", *fit.names), rows))
    return fit, files


# ------------------------------------------------------------------- benchmark


def _bench_problem(n, seed):
    # bandwidths are chosen here, outside the timed and audited region
    law = UniformBoxLaw([-np.pi] * 3, [np.pi] * 3)
    x = sample(law, n, seed)
    return make_blocks(x, seed=seed), output_source(ishigami(x), seed=seed)


def streaming_full_hsic(blocks, y_source, workers=1):
    stats = [centering_stats(b, workers=workers) for b in blocks]
    src = AugmentedProductSource(blocks, stats, SubsetSpec(tuple(range(len(blocks)))))
    return hsic_streaming(src, y_source, workers=workers).value


def dense_full_hsic(blocks, y_source):
    n = blocks[0].n
    K = np.ones((n, n))
    for b in blocks:
        G = gaussian_rows(b.samples, b.bandwidth, 0, n)
        r = G.mean(axis=1)
        K *= 1.0 + (G - r[:, None] - r[None, :] + r.mean())
    return hsic_dense(K, y_source.rows(0, n))


def _timed(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def allocation_audit(fn):
    """Peak bytes allocated while ``fn`` runs, as seen by tracemalloc."""
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak


def run_bench(cfg, out_dir, n_values=(1000, 2000, 4000, 8000, 20000), dense_max=4000, repeats=3,
              audit_n=None):
    workers = cfg["workers"]
    rows = []
    audit_n = audit_n or max(n_values)
    for n in n_values:
        blocks, y = _bench_problem(n, cfg.seed)
        reps = repeats if n <= 8000 else 1
        t_stream = _timed(lambda: streaming_full_hsic(blocks, y, workers), reps)
        peak = allocation_audit(lambda: streaming_full_hsic(blocks, y, workers)) if n == audit_n else None
        rows.append((n, "streaming", t_stream, "" if peak is None else peak, 8 * n * n))
        if n <= dense_max:
            t_dense = _timed(lambda: dense_full_hsic(blocks, y), 1)
            rows.append((n, "dense", t_dense, "", 8 * n * n))
    times = {r[0]: r[2] for r in rows if r[1] == "streaming"}
    summary = {"streaming_seconds": times}
    if 4000 in times and 8000 in times:
        summary["time_ratio_8000_4000"] = times[8000] / times[4000]
    audited = [r for r in rows if r[1] == "streaming" and r[3] != ""]
    if audited:
        n, _, _, peak, full = audited[0]
        summary |= {"audit_n": n, "audit_peak_bytes": peak, "dense_gram_bytes": full,
                    "audit_peak_fraction": peak / full}
    out_dir = Path(out_dir)
    files = [
        write_csv(out_dir / "bench.csv", cfg, "bench",
                  ("n", "method", "seconds", "peak_bytes", "dense_gram_bytes"), rows),
        write_json(out_dir / "bench.json", cfg, "bench", {"bench": summary}),
    ]
    return summary, files
