"""Command line driver.

    totalhsic indices --preset ishigami --out results/
    totalhsic rho-sweep --preset portfolio --threads 8
    totalhsic calibrate --config my_cholera.json --seed 3

Exit codes: 0 success, 2 invalid config or arguments, 3 calibration did not
converge, 1 any other failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from . import experiments as ex
from .calibration import SingularJacobianError
from .config import ConfigError, load_config, load_preset, preset_names

log = logging.getLogger("totalhsic")

COMMANDS = ("indices", "convergence", "rho-sweep", "reduce", "calibrate", "bench")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="totalhsic",
        description="Total HSIC sensitivity studies with augmented kernels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="experiment config (JSON)")
    src.add_argument("--preset", help=f"shipped config: {', '.join(preset_names())}")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("indices", parents=[common], help="total HSIC indices and distance correlations")
    conv = sub.add_parser("convergence", parents=[common], help="indices over a grid of n and seeds")
    conv.add_argument("--n-grid", type=_int_list, help="comma-separated sample sizes")
    conv.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    sub.add_parser("rho-sweep", parents=[common], help="portfolio indices across correlation levels")
    red = sub.add_parser("reduce", parents=[common], help="full vs reduced-model output comparison")
    red.add_argument("--samples", type=int, help="override reduction samples per arm")
    sub.add_parser("calibrate", parents=[common], help="OLS fit of the cholera model")
    bench = sub.add_parser("bench", parents=[common], help="streaming vs dense scaling study")
    bench.add_argument("--n-values", type=_int_list, default=[1000, 2000, 4000, 8000, 20000])
    bench.add_argument("--dense-max", type=int, default=4000)
    return parser


def _load(args):
    if args.command == "bench" and args.config is None and args.preset is None:
        cfg = load_preset("ishigami")
    elif args.config is not None:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = load_preset(args.preset)
    else:
        raise ConfigError("give --config PATH or --preset NAME")
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be positive")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be nonnegative")
    cfg = cfg.with_overrides(seed=args.seed, workers=args.threads)
    if getattr(args, "samples", None):
        if cfg.get("reduction") is None:
            raise ConfigError(f"{cfg.source}: config has no 'reduction' section")
        cfg.data["reduction"]["n"] = args.samples
    return cfg


def run(args):
    cfg = _load(args)
    args.out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "indices":
        report, files = ex.run_indices(cfg, args.out)
        for e in report.entries:
            print(f"{e.label:>12}  T = {e.total_index:.4f}  dcorr = {e.dcorr:.4f}")
    elif cmd == "convergence":
        _, files = ex.run_convergence(cfg, args.out, args.n_grid, args.seeds)
    elif cmd == "rho-sweep":
        _, files = ex.run_rho_sweep(cfg, args.out)
    elif cmd == "reduce":
        summary, files = ex.run_reduction(cfg, args.out)
        for s in summary:
            metric = f"KS = {s['ks']:.4f}" if "ks" in s else f"max rel err = {s['max_rel_error']:.4%}"
            rho = "" if s["rho"] is None else f" rho = {s['rho']}"
            print(f"fix {s['fixed']}{rho}: {metric}")
    elif cmd == "calibrate":
        fit, files = ex.run_calibrate(cfg, args.out)
        if not fit.converged:
            for f in files:
                print(f"wrote {f}")
            print(f"calibration did not converge after {fit.iterations} iterations "
                  f"(rss {fit.rss:.6g})", file=sys.stderr)
            return 3
    else:
        summary, files = ex.run_bench(cfg, args.out, args.n_values, args.dense_max)
        for n, t in summary["streaming_seconds"].items():
            print(f"n = {n:>6}  streaming {t:.3f} s")
        if "time_ratio_8000_4000" in summary:
            print(f"time ratio 8000/4000 = {summary['time_ratio_8000_4000']:.2f}")
    for f in files:
        print(f"wrote {f}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SingularJacobianError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
