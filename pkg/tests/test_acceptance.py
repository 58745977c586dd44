"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the "acceptance criteria" section of the terminal summary.
"""

import itertools
import time
from functools import cache

import numpy as np

from conftest import dense_augmented, dense_gaussian
from totalhsic import experiments as ex
from totalhsic.cli import main
from totalhsic.config import load_preset
from totalhsic.hsic import hsic_dense, hsic_streaming, hsic_subsets, make_blocks
from totalhsic.kernel import (
    AugmentedProductSource,
    ParameterBlock,
    SubsetSpec,
    centering_stats,
    output_source,
)
from totalhsic.models import (
    CholeraParams,
    cholera_initial_state,
    cholera_rhs,
    cholera_trajectory,
    integrate_rk45,
    ishigami,
    ishigami_sobol_analytic,
    portfolio,
    portfolio_sigma,
)
from totalhsic.ode import IntegratorOptions
from totalhsic.sampling import GaussianLaw, UniformBoxLaw, sample
from totalhsic.sobol import jansen_total

PRESETS = ("cholera_correlated", "cholera_uniform", "ishigami", "portfolio")
ISHIGAMI_BOX = UniformBoxLaw([-np.pi] * 3, [np.pi] * 3)


@cache
def ishigami_totals(n, seed):
    cfg = load_preset("ishigami")
    rep = ex.report_for(cfg, ex.build_problem(cfg, n=n, seed=seed), seed=seed)
    return rep.total_indices()


@cache
def preset_report(name, rho=None):
    cfg = load_preset(name)
    p = len(ex.input_names(cfg))
    cfg.data["subsets"] = [[i] for i in range(p)] + [list(range(p)), []]
    cfg.data["indices"] = ["total_hsic"]
    return ex.report_for(cfg, ex.build_problem(cfg, rho=rho))


def rk4(f, y0, t0, t1, h):
    steps = int(round((t1 - t0) / h))
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    for k in range(steps):
        t = t0 + k * h
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y.copy())
    return np.array(out)


def test_c01_streaming_equals_dense(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for n in (10, 50, 200, 500):
        for k in range(50):
            dim = 1 if k % 2 == 0 else 3
            p = int(rng.integers(1, 4))
            blocks = [ParameterBlock.from_samples(f"X{i}", rng.normal(size=(n, dim))) for i in range(p)]
            x = np.hstack([b.samples for b in blocks])
            y = np.sin(x).sum(axis=1) + 0.3 * rng.normal(size=n)
            ys = output_source(y)
            stats = [centering_stats(b) for b in blocks]
            sub = SubsetSpec(tuple(range(p)))
            stream = hsic_streaming(AugmentedProductSource(blocks, stats, sub), ys).value
            dense = hsic_dense(dense_augmented(blocks, sub), dense_gaussian(y, ys.sigma))
            worst = max(worst, abs(stream - dense) / abs(dense))
            count += 1
    elapsed = time.perf_counter() - t0
    criterion(1, count == 200 and worst <= 1e-10 and elapsed < 30,
              f"{count} instances, max rel diff {worst:.2e}, {elapsed:.1f} s")


def test_c02_trace_identity(criterion):
    rng = np.random.default_rng(2)
    n = 64
    z = np.full(n, 1 / np.sqrt(n))
    worst = 0.0
    for _ in range(100):
        A, B = rng.normal(size=(2, n, n))
        K, L = A + A.T, B + B.T
        expansion = (np.trace(K @ L) - 2 * (K @ z) @ (L @ z) + (z @ K @ z) * (z @ L @ z)) / n**2
        worst = max(worst, abs(hsic_dense(K, L) - expansion) / abs(expansion))
    criterion(2, worst <= 1e-12, f"100 random symmetric 64x64 pairs, max rel diff {worst:.2e}")


def _nested_check(blocks, y, rng, pairs):
    p = len(blocks)
    stats = [centering_stats(b) for b in blocks]
    subsets = [SubsetSpec(c) for r in range(p + 1) for c in itertools.combinations(range(p), r)]
    h, _, _ = hsic_subsets(blocks, stats, output_source(y), subsets)
    full = h[SubsetSpec(tuple(range(p)))]
    violations = 0
    for _ in range(pairs):
        B = [i for i in range(p) if rng.random() < 0.6] or [int(rng.integers(p))]
        A = [i for i in B if rng.random() < 0.5]
        if len(A) == len(B):
            A = A[:-1]
        if not h[SubsetSpec(tuple(A))] <= h[SubsetSpec(tuple(B))] + 1e-10 * full:
            violations += 1
    return violations


def test_c03_monotonicity(criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    x = sample(ISHIGAMI_BOX, 500, 0)
    bad = {"ishigami": _nested_check(make_blocks(x), ishigami(x), rng, 100)}
    for rho in (0.0, 0.5, 1.0):
        x = sample(GaussianLaw(np.zeros(5), portfolio_sigma(rho)), 500, 0)
        bad[f"portfolio rho={rho}"] = _nested_check(make_blocks(x), portfolio(x), rng, 100)
    elapsed = time.perf_counter() - t0
    criterion(3, sum(bad.values()) == 0 and elapsed < 120,
              f"violations {bad} over 4 x 100 nested pairs, {elapsed:.1f} s")


def test_c04_bounds(criterion):
    raws, exact = [], []
    for name in PRESETS:
        reps = [preset_report(name)]
        if name == "portfolio":
            reps.append(preset_report(name, rho=1.0))
        for rep in reps:
            p = len(rep.names)
            raws += [e.total_index_raw for e in rep.entries]
            exact.append(rep.entry(tuple(range(p))).total_index_raw == 1.0)
            exact.append(rep.entry(()).total_index_raw == 0.0)
    lo, hi = min(raws), max(raws)
    ok = lo >= -1e-10 and hi <= 1 + 1e-10 and all(exact)
    criterion(4, ok, f"{len(raws)} raw indices in [{lo:.3e}, {hi:.3e}], full = 1 and empty = 0 exact: {all(exact)}")


def test_c05_ishigami_ranking(criterion):
    t0 = time.perf_counter()
    hits = sum(bool(t[0] > t[2] > t[1]) for t in (ishigami_totals(1000, s) for s in range(10)))
    elapsed = time.perf_counter() - t0
    criterion(5, hits >= 9 and elapsed < 60, f"T1 > T3 > T2 in {hits}/10 seeds, {elapsed:.1f} s")


def test_c06_convergence(criterion):
    small = np.array([ishigami_totals(250, s) for s in range(10)])
    large = np.array([ishigami_totals(1000, s) for s in range(10)])
    r250 = np.ptp(small, axis=0)
    r1000 = np.ptp(large, axis=0)
    ok = bool(np.all(r1000 <= 0.6 * r250))
    criterion(6, ok, f"range at n=1000 {np.round(r1000, 4).tolist()} vs n=250 {np.round(r250, 4).tolist()}")


def test_c07_sobol_baseline(criterion):
    est = jansen_total(ishigami, ISHIGAMI_BOX, 20000, seed=0).totals
    exact = np.array(ishigami_sobol_analytic())
    err = np.abs(est - exact).max()
    ordered = bool(est[0] > est[2] > est[1])
    criterion(7, err <= 0.02 and ordered,
              f"estimates {np.round(est, 4).tolist()} vs analytic {np.round(exact, 4).tolist()}, max err {err:.4f}")


def test_c08_portfolio_sweep(criterion, tmp_path):
    t0 = time.perf_counter()
    rows, _ = ex.run_rho_sweep(load_preset("portfolio"), tmp_path)
    elapsed = time.perf_counter() - t0
    table = {}
    for rho, name, t, _ in rows:
        table.setdefault(rho, {})[name] = t
    at0 = table[0.0]
    order0 = sorted(at0, key=at0.get, reverse=True)
    # coefficients 20 > 16 > 12 > 10 > 4 belong to X1..X5 in turn
    coeff_order = order0 == ["X1", "X2", "X3", "X4", "X5"]
    x1_top = all(max(row, key=row.get) == "X1" for row in table.values())
    at1 = table[1.0]
    x5 = at1["X5"] > at1["X4"] and at1["X5"] > at1["X3"]
    ok = len(table) == 21 and coeff_order and x1_top and x5 and elapsed < 600
    criterion(8, ok, f"rho=0 order {order0}, X1 top at all rho: {x1_top}, "
                     f"rho=1 T5 {at1['X5']:.3f} T4 {at1['X4']:.3f} T3 {at1['X3']:.3f}, {elapsed:.1f} s")


def test_c09_reduction(criterion, tmp_path):
    summary, _ = ex.run_reduction(load_preset("portfolio"), tmp_path)
    ks = {(s["rho"], s["fixed"]): s["ks"] for s in summary}
    ratio = ks[(1.0, "X5")] / ks[(1.0, "X4")]
    ok = ks[(0.0, "X5")] <= 0.05 and ratio >= 3
    criterion(9, ok, f"KS(rho=0, X5) {ks[(0.0, 'X5')]:.4f}, KS ratio at rho=1 {ratio:.2f} at 1e5 per arm")


def test_c10_cholera(criterion, tmp_path):
    t0 = time.perf_counter()
    tr = cholera_trajectory()
    conservation = float(np.abs(tr.values[:, :3].sum(axis=1) - 10_000).max())

    p = CholeraParams()
    ref = rk4(lambda t, y: cholera_rhs(t, y, p), cholera_initial_state(), 0.0, 50.0, 1e-3)[::500]
    tr50 = integrate_rk45(lambda t, y: cholera_rhs(t, y, p), cholera_initial_state(), (0.0, 50.0),
                          IntegratorOptions(output_points=101))
    nz = np.abs(ref) > 1e-12
    rk = float((np.abs(tr50.values[nz] - ref[nz]) / np.abs(ref[nz])).max())

    rankings, errors = {}, {}
    for name in ("cholera_uniform", "cholera_correlated"):
        rep = preset_report(name)
        t = {e.label: e.total_index for e in rep.entries if len(e.subset) == 1}
        rankings[name] = (max(t, key=t.get), min(t, key=t.get))
        summary, _ = ex.run_reduction(load_preset(name), tmp_path)
        errors[name] = summary[0]["max_rel_error"]
    elapsed = time.perf_counter() - t0

    ranking_ok = all(r == ("beta_H", "b") for r in rankings.values())
    ok = (conservation <= 1e-4 and rk <= 1e-5 and ranking_ok
          and all(e <= 0.05 for e in errors.values()) and elapsed < 1200)
    criterion(10, ok, f"conservation {conservation:.1e}, RK4 rel {rk:.1e}, "
                      f"(top, bottom) {rankings}, fix-b mean-I rel err {errors}, {elapsed:.0f} s")


def test_c11_bench(criterion, tmp_path):
    summary, _ = ex.run_bench(load_preset("ishigami"), tmp_path)
    frac = summary["audit_peak_fraction"]
    ratio = summary["time_ratio_8000_4000"]
    ok = summary["audit_n"] == 20000 and frac < 0.05 and 3 <= ratio <= 5
    criterion(11, ok, f"n=20000 audited peak {summary['audit_peak_bytes'] / 1e6:.1f} MB "
                      f"({frac:.2%} of an n x n matrix), time ratio 8000/4000 {ratio:.2f}")


COMMANDS = {
    "ishigami": ("indices", "convergence"),
    "portfolio": ("indices", "rho-sweep", "reduce"),
    "cholera_uniform": ("indices", "reduce"),
    "cholera_correlated": ("indices", "reduce", "calibrate"),
}


def test_c12_determinism(criterion, tmp_path):
    mismatched, compared = [], 0
    for name, cmds in COMMANDS.items():
        for cmd in cmds:
            outs = []
            for w in (1, 8):
                out = tmp_path / f"{name}_{cmd}_w{w}"
                assert main([cmd, "--preset", name, "--out", str(out), "--threads", str(w)]) == 0
                outs.append(out)
            files = sorted(f.name for f in outs[0].iterdir())
            assert files == sorted(f.name for f in outs[1].iterdir())
            for f in files:
                compared += 1
                if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes():
                    mismatched.append(f)
    criterion(12, not mismatched and compared > 0,
              f"{compared} output files compared at 1 vs 8 workers, mismatched: {mismatched or 'none'}")
