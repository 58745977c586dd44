"""Experiment configuration: JSON loading, validation and shipped presets.

Validation errors carry ``file:line`` so a bad entry can be found directly.
Relative file paths inside a config resolve against the config's directory.
"""

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

SCHEMA_VERSION = 1
MODELS = ("ishigami", "portfolio", "cholera", "external-samples")
LAW_KINDS = ("uniform", "uniform_around", "gaussian", "portfolio", "fitted")
INDEX_KINDS = ("total_hsic", "dcorr", "sobol")
REDUCTION_MODES = ("replace", "conditional")

_TOP_KEYS = {
    "schema_version", "name", "model", "model_options", "law", "n", "seed", "subsets",
    "indices", "sobol", "convergence", "sweep", "reduction", "integrator", "calibration",
    "workers", "description",
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``source:line:``."""


def _locate(text, path):
    # line of the last key along ``path``, found by scanning forward key by key
    if text is None:
        return None
    pos = 0
    line = None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


@dataclass
class ExperimentConfig:
    """A validated experiment description plus where it came from."""

    data: dict
    source: str = "<dict>"
    text: str = None
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def name(self):
        return self.data["name"]

    @property
    def model(self):
        return self.data["model"]

    @property
    def n(self):
        return self.data["n"]

    @property
    def seed(self):
        return self.data["seed"]

    def error(self, path, message):
        line = _locate(self.text, path)
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(p) for p in path)
        return ConfigError(f"{where}: {dotted}: {message}" if dotted else f"{where}: {message}")

    def resolve_path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def with_overrides(self, seed=None, workers=None):
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = int(seed)
        if workers is not None:
            data["workers"] = int(workers)
        return ExperimentConfig(data, self.source, self.text, self.base_dir)

    def sha256(self):
        # workers never change results, so they are left out of the hash
        payload = {k: v for k, v in self.data.items() if k != "workers"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_json(text, source="<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def load_config(path):
    """Read and validate a config file.  A saved fit result is also accepted
    and becomes a cholera config sampling from the fitted law."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    data = parse_json(text, str(path))
    if isinstance(data, dict) and data.get("kind") == "cholera_ols_fit":
        data = {
            "name": path.stem,
            "model": "cholera",
            "law": {"kind": "fitted", "path": path.name},
            "n": 1500,
            "seed": 0,
        }
        text = None
    return validate(data, str(path), text, path.parent)


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("totalhsic.presets").iterdir()
                  if p.name.endswith(".json"))


def load_preset(name):
    res = resources.files("totalhsic.presets") / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    text = res.read_text(encoding="utf-8")
    return validate(parse_json(text, f"preset:{name}"), f"preset:{name}", text, Path("."))


def _defaults(data):
    d = copy.deepcopy(data)
    d.setdefault("schema_version", SCHEMA_VERSION)
    d.setdefault("model_options", {})
    d.setdefault("seed", 0)
    d.setdefault("subsets", None)
    d.setdefault("indices", ["total_hsic", "dcorr"])
    d.setdefault("workers", 1)
    d.setdefault("integrator", {})
    d.setdefault("calibration", {})
    return d


def validate(data, source="<dict>", text=None, base_dir=Path(".")):
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: config must be a JSON object")
    cfg = ExperimentConfig(_defaults(data), source, text, Path(base_dir))
    d = cfg.data

    unknown = sorted(set(d) - _TOP_KEYS)
    if unknown:
        raise cfg.error((unknown[0],), "unknown key")
    if d["schema_version"] != SCHEMA_VERSION:
        raise cfg.error(("schema_version",), f"unsupported schema version (expected {SCHEMA_VERSION})")
    if not isinstance(d.get("name"), str) or not d["name"]:
        raise cfg.error(("name",), "a non-empty name is required")
    if d.get("model") not in MODELS:
        raise cfg.error(("model",), f"must be one of {', '.join(MODELS)}")
    if not isinstance(d.get("n"), int) or isinstance(d["n"], bool) or d["n"] < 2:
        raise cfg.error(("n",), "must be an integer >= 2")
    if not isinstance(d["seed"], int) or d["seed"] < 0:
        raise cfg.error(("seed",), "must be a nonnegative integer")
    if not isinstance(d["workers"], int) or d["workers"] < 1:
        raise cfg.error(("workers",), "must be a positive integer")
    bad = [k for k in d["indices"] if k not in INDEX_KINDS]
    if bad:
        raise cfg.error(("indices",), f"unknown index kind {bad[0]!r}")

    if d["model"] == "external-samples":
        opts = d["model_options"]
        for key in ("inputs", "outputs"):
            if key not in opts:
                raise cfg.error(("model_options",), f"external-samples needs {key!r}")
            if not cfg.resolve_path(opts[key]).is_file():
                raise cfg.error(("model_options", key), f"file not found: {opts[key]}")
    else:
        _validate_law(cfg)

    _validate_sections(cfg)
    return cfg


def _validate_law(cfg):
    law = cfg.data.get("law")
    if not isinstance(law, dict):
        raise cfg.error(("law",), "a sampling law object is required")
    kind = law.get("kind")
    if kind not in LAW_KINDS:
        raise cfg.error(("law", "kind"), f"must be one of {', '.join(LAW_KINDS)}")
    if kind == "portfolio":
        rho = law.get("rho", 0.0)
        if not isinstance(rho, (int, float)) or not 0 <= rho <= 1:
            raise cfg.error(("law", "rho"), "rho must lie in [0, 1]")
    if kind == "uniform_around":
        w = law.get("rel_width")
        if not isinstance(w, (int, float)) or not 0 < w < 1:
            raise cfg.error(("law", "rel_width"), "must lie in (0, 1)")
    if kind == "fitted":
        if cfg.model != "cholera":
            raise cfg.error(("law", "kind"), "a fitted law only applies to the cholera model")
        if "path" in law and not cfg.resolve_path(law["path"]).is_file():
            raise cfg.error(("law", "path"), f"file not found: {law['path']}")
    if kind in ("uniform", "gaussian"):
        keys = ("lower", "upper") if kind == "uniform" else ("mean", "covariance")
        for key in keys:
            if key not in law:
                raise cfg.error(("law",), f"{kind} law needs {key!r}")


def _validate_sections(cfg):
    d = cfg.data
    conv = d.get("convergence")
    if conv is not None:
        grid = conv.get("n_grid", [])
        if not grid or any(not isinstance(v, int) or v < 2 for v in grid):
            raise cfg.error(("convergence", "n_grid"), "must be a non-empty list of integers >= 2")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise cfg.error(("convergence", "n_grid"), "must be strictly increasing")
        if not conv.get("seeds"):
            raise cfg.error(("convergence", "seeds"), "must be a non-empty list of seeds")
    sweep = d.get("sweep")
    if sweep is not None:
        if d.get("law", {}).get("kind") != "portfolio":
            raise cfg.error(("sweep",), "rho sweeps need a portfolio law")
        try:
            vals = rho_grid(sweep)
        except ValueError as exc:
            raise cfg.error(("sweep", "rho"), str(exc)) from None
        if any(not 0 <= r <= 1 for r in vals):
            raise cfg.error(("sweep", "rho"), "rho values must lie in [0, 1]")
    red = d.get("reduction")
    if red is not None:
        if not red.get("fix"):
            raise cfg.error(("reduction", "fix"), "name at least one input to fix")
        if red.get("mode", "replace") not in REDUCTION_MODES:
            raise cfg.error(("reduction", "mode"), f"must be one of {', '.join(REDUCTION_MODES)}")
        if not isinstance(red.get("n", 2), int) or red.get("n", 2) < 2:
            raise cfg.error(("reduction", "n"), "must be an integer >= 2")
        for rho in red.get("rho", []):
            if not 0 <= rho <= 1:
                raise cfg.error(("reduction", "rho"), "rho values must lie in [0, 1]")
    sob = d.get("sobol")
    if "sobol" in d["indices"] and (sob is None or not isinstance(sob.get("n"), int)):
        raise cfg.error(("sobol",), "sobol indices need a 'sobol': {'n': ...} section")


def rho_grid(sweep):
    """Explicit list, or {"steps": J} meaning rho_j = j / J for j = 0..J."""
    rho = sweep.get("rho")
    if isinstance(rho, dict):
        steps = rho.get("steps")
        if not isinstance(steps, int) or steps < 1:
            raise ValueError("steps must be a positive integer")
        return [j / steps for j in range(steps + 1)]
    if isinstance(rho, list) and rho:
        return [float(r) for r in rho]
    raise ValueError("give a list of rho values or {'steps': J}")

