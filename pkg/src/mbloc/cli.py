"""
Command-line experiment runner.

    mbloc run [config.yaml] [--key value ...]

``--key`` may be any dotted config path (``--dist.nu uniform:0:4``,
``--ensemble.seed 3``, ``--params.beta 2``) or one of the short aliases
listed in :data:`ALIASES`.  Values are parsed as YAML scalars.  Precedence:
flags, then the config file, then built-in defaults.

Outputs, next to each other:

* the results table (``.csv`` or ``.jsonl``; columns :data:`COLUMNS`);
* ``<stem>.meta.json``, the resolved configuration plus library versions,
  sufficient to repeat the run with ``mbloc run <stem>.meta.json``;
* ``<stem>.fit.json`` with the decay or slope fit when one applies.

Relative output paths are resolved against ``$MBLOC_OUTPUT_DIR`` if it is
set.  Exit status: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import scipy
import yaml

from mbloc import ensemble as ens
from mbloc.errors import ConfigError, InvalidSampleError, OracleCapError, SingularSpectrumError

log = logging.getLogger("mbloc")

COLUMNS = ("diagnostic", "r", "x", "y", "region", "t", "E", "k", "mean", "stderr", "n_valid", "n_invalid")
OUTPUT_ENV = "MBLOC_OUTPUT_DIR"

MODEL_DIAGNOSTICS = {
    "xy": ("dynloc", "oracle-check", "gs-corr", "lyapunov"),
    "ising": ("dynloc", "lyapunov"),
    "oscillator": ("dynloc", "gs-corr", "thermal-corr", "negativity", "entropy"),
}

DEFAULT_DISTS = {
    "xy": {"mu": "point:1", "gamma": "point:0", "nu": "uniform:0:4"},
    "ising": {"nu": "uniform:1:3"},
    "oscillator": {"k": "scaled:10:0:1"},
}

FIT_KEYS = ("zeta", "r_min", "r_max")
DIAGNOSTIC_PARAMS = {
    "dynloc": FIT_KEYS + ("alpha", "window"),
    "gs-corr": FIT_KEYS + ("observable",),
    "thermal-corr": FIT_KEYS + ("beta",),
    "negativity": ("regions", "sum_convention"),
    "entropy": ("regions",),
    "lyapunov": ("energies", "steps", "interval"),
    "oracle-check": ("t",),
}

DEFAULTS: dict = {
    "model": "xy",
    "diagnostic": "dynloc",
    "n": 50,
    "d": 1,
    "L": 25,
    "coupling": 1.0,
    "dist": {},
    "params": {},
    "ensemble": {"n_samples": 100, "seed": 0},
    "output": {"path": None},
    "threads": None,
}

ALIASES = {
    "n": "n", "d": "d", "L": "L", "model": "model", "diagnostic": "diagnostic",
    "seed": "ensemble.seed", "samples": "ensemble.n_samples", "threads": "threads",
    "output": "output.path", "o": "output.path", "beta": "params.beta",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _set_dotted(cfg: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_overrides(tokens: Sequence[str]) -> dict:
    """``["--a.b", "1", "--c=x"]`` -> ``{"a": {"b": 1}, "c": "x"}``."""
    out: dict = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("-"):
            raise ConfigError(tok, "expected a --key flag")
        key = tok.lstrip("-")
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(key, "flag needs a value")
            raw = tokens[i + 1]
            i += 2
        key = ALIASES.get(key, key)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        _set_dotted(out, key, value)
    return out


def load_file(path: str | os.PathLike) -> dict:
    """YAML (or JSON) config; a metadata record is unwrapped to its ``config``."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    if "config" in data and "versions" in data:
        data = data["config"]
    return data


def _int(v, key, lo=None, hi=None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(key, f"must be <= {hi}, got {v}")
    return v


def _num(v, key) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    return float(v)


def _num_list(v, key) -> list[float]:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(key, "expected a number or a nonempty list of numbers")
    return [_num(x, key) for x in v]


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``as_dict`` round-trips through :func:`resolve`."""

    model: str
    diagnostic: str
    n: int
    d: int
    L: int
    coupling: float
    dists: dict
    params: dict
    n_samples: int
    seed: int
    output: str
    threads: int = field(default=1, compare=False)

    def as_dict(self) -> dict:
        geom = {"n": self.n} if self.model in ("xy", "ising") else {"d": self.d, "L": self.L, "coupling": self.coupling}
        return {
            "model": self.model, "diagnostic": self.diagnostic, **geom,
            "dist": dict(self.dists), "params": copy.deepcopy(self.params),
            "ensemble": {"n_samples": self.n_samples, "seed": self.seed},
            "output": {"path": self.output},
        }

    def distributions(self) -> dict[str, ens.Distribution]:
        return {k: ens.Distribution.parse(v) for k, v in self.dists.items()}


def resolve(file_cfg: Optional[Mapping] = None, overrides: Optional[Mapping] = None) -> ExperimentConfig:
    """Merge defaults, file and flags, then validate every field."""
    raw = _merge(_merge(DEFAULTS, file_cfg or {}), overrides or {})
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown configuration key")

    model = raw["model"]
    if model not in MODEL_DIAGNOSTICS:
        raise ConfigError("model", f"must be one of {sorted(MODEL_DIAGNOSTICS)}, got {model!r}")
    diag = raw["diagnostic"]
    if diag not in MODEL_DIAGNOSTICS[model]:
        raise ConfigError("diagnostic", f"{diag!r} is not available for model {model!r} "
                                        f"(choose from {', '.join(MODEL_DIAGNOSTICS[model])})")

    n = _int(raw["n"], "n", lo=2)
    d = _int(raw["d"], "d", lo=1, hi=3)
    L = _int(raw["L"], "L", lo=1)
    coupling = _num(raw["coupling"], "coupling")
    if coupling <= 0:
        raise ConfigError("coupling", "must be positive")

    for key in ("dist", "params", "ensemble", "output"):
        if not isinstance(raw[key], dict):
            raise ConfigError(key, "expected a mapping")
    ensemble = raw["ensemble"]
    for k in ensemble:
        if k not in ("n_samples", "seed"):
            raise ConfigError(f"ensemble.{k}", "unknown key")
    n_samples = _int(ensemble.get("n_samples"), "ensemble.n_samples", lo=1)
    seed = _int(ensemble.get("seed"), "ensemble.seed", lo=0, hi=2 ** 64 - 1)

    dists = {k: str(ens.Distribution.parse(v)) for k, v in DEFAULT_DISTS[model].items()}
    for k, v in raw["dist"].items():
        if k not in DEFAULT_DISTS[model]:
            raise ConfigError(f"dist.{k}", f"model {model!r} has families {sorted(DEFAULT_DISTS[model])}")
        try:
            dists[k] = str(ens.Distribution.parse(v))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"dist.{k}", str(exc)) from None
    if model == "ising":
        nu = ens.Distribution.parse(dists["nu"])
        if nu.atom_at_zero:
            log.warning("dist.nu puts mass on 0; those draws are skipped and counted invalid")

    params = _validate_params(model, diag, raw["params"], n, d, L)

    threads = raw["threads"]
    threads = ens.default_workers() if threads is None else _int(threads, "threads", lo=1)

    out = raw["output"].get("path") or f"{model}-{diag}.csv"
    if Path(out).suffix not in (".csv", ".jsonl"):
        raise ConfigError("output.path", "extension must be .csv or .jsonl")
    return ExperimentConfig(model, diag, n, d, L, coupling, dists, params, n_samples, seed, str(out), threads)


def _validate_params(model: str, diag: str, params: Mapping, n: int, d: int, L: int) -> dict:
    allowed = DIAGNOSTIC_PARAMS[diag]
    for k in params:
        if k not in allowed:
            why = ("beta is only meaningful for thermal-corr" if k == "beta"
                   else f"not a parameter of {diag} (allowed: {', '.join(allowed)})")
            raise ConfigError(f"params.{k}", why)
    p = dict(params)
    if diag == "thermal-corr":
        if "beta" not in p:
            raise ConfigError("params.beta", "thermal-corr requires beta")
        if not _num(p["beta"], "params.beta") > 0:
            raise ConfigError("params.beta", "must be positive")
        p["beta"] = float(p["beta"])
    if "zeta" in p and p["zeta"] != "free":
        z = _num(p["zeta"], "params.zeta")
        if not 0 < z <= 1:
            raise ConfigError("params.zeta", "must lie in (0, 1] or be 'free'")
    for k in ("r_min", "r_max"):
        if k in p:
            p[k] = _num(p[k], f"params.{k}")
    if "alpha" in p:
        p["alpha"] = _num(p["alpha"], "params.alpha")
        if model == "oscillator":
            raise ConfigError("params.alpha", "oscillator dynloc uses the fixed vanishing-order majorant")
        if p["alpha"] <= -1:
            raise ConfigError("params.alpha", "must be > -1")
    if "window" in p:
        w = _num_list(p["window"], "params.window")
        if model == "oscillator" or len(w) != 2 or not w[0] < w[1]:
            raise ConfigError("params.window", "expected [lo, hi] with lo < hi (chain models only)")
        p["window"] = w
    if diag == "gs-corr" and model == "xy":
        if n > 8:
            raise ConfigError("n", "xy gs-corr uses the dense oracle; n must be <= 8")
        obs = p.setdefault("observable", "Z")
        if obs not in ("X", "Y", "Z"):
            raise ConfigError("params.observable", "must be X, Y or Z")
    elif "observable" in p:
        raise ConfigError("params.observable", "only used by xy gs-corr")
    if diag == "oracle-check":
        if n > 8:
            raise ConfigError("n", "oracle-check builds the 2^n dense Hamiltonian; n must be <= 8")
        p["t"] = _num_list(p.get("t", [0.1, 1.0, 10.0]), "params.t")
    if diag == "lyapunov":
        p["energies"] = _num_list(p.get("energies", [0.5, 1.0, 1.5]), "params.energies")
        p["steps"] = _int(p["steps"], "params.steps", lo=10_000) if "steps" in p else 100_000
        p["interval"] = _int(p["interval"], "params.interval", lo=1) if "interval" in p else 10
    if diag in ("negativity", "entropy"):
        regs = p.get("regions", [3, 5, 7, 9] if d == 1 else [1, 2])
        regs = [_int(g, "params.regions", lo=1) for g in regs] if isinstance(regs, list) else None
        if not regs:
            raise ConfigError("params.regions", "expected a nonempty list of integers")
        for g in regs:
            if d == 1 and (g % 2 == 0 or g > 2 * L + 1):
                raise ConfigError("params.regions", f"interval lengths must be odd and <= {2 * L + 1}")
            if d > 1 and g > L:
                raise ConfigError("params.regions", f"box half widths must be <= L={L}")
        p["regions"] = regs
        if diag == "negativity":
            conv = p.setdefault("sum_convention", "interior")
            if conv not in ("interior", "as_written"):
                raise ConfigError("params.sum_convention", "must be 'interior' or 'as_written'")
    return p


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    rows: list
    fit: Optional[dict] = None
    n_invalid: int = 0
    invalid: list = field(default_factory=list)


def _spec(cfg: ExperimentConfig, dists=None) -> ens.EnsembleSpec:
    return ens.EnsembleSpec(dists or cfg.distributions(), cfg.n_samples, cfg.seed, cfg.diagnostic)


def _fit_kwargs(cfg: ExperimentConfig, linear_size: int) -> dict:
    p = cfg.params
    return {
        "zeta": p.get("zeta", 1.0),
        "r_range": (p.get("r_min", 2), p.get("r_max", linear_size / 2)),
    }


def _pair_run(cfg: ExperimentConfig, model: ens.Model, kind: str, dists=None, **kw) -> RunResult:
    res = ens.dynloc_experiment(model, _spec(cfg, dists), kind=kind, workers=cfg.threads,
                                **_fit_kwargs(cfg, model.linear_size), **kw)
    for row in res.rows:
        row.diagnostic = cfg.diagnostic
    return RunResult(res.rows, res.fit.as_dict() if res.fit else None, res.n_invalid, res.invalid)


def _run_xy_dynloc(cfg):
    kw = {}
    if "window" in cfg.params:
        from mbloc.single_particle import EnergyWindow
        kw["window"] = EnergyWindow(*cfg.params["window"])
    kind = "correlator" if "alpha" in cfg.params else "dynloc"
    if kind == "correlator":
        kw["alpha"] = cfg.params["alpha"]
    dists = None
    if cfg.model == "ising":
        d = cfg.distributions()
        dists = {"mu": ens.Distribution.point(1.0), "gamma": ens.Distribution.point(1.0), "nu": d["nu"]}
    return _pair_run(cfg, ens.xy_model(cfg.n), kind, dists, **kw)


def _run_oracle_check(cfg):
    from mbloc.xy_model import XYParams, build_dense_oracle, verify_c_evolution

    ts = cfg.params["t"]
    sizes = {"mu": cfg.n - 1, "gamma": cfg.n - 1, "nu": cfg.n}

    def diag(c):
        p = XYParams(c["mu"], c["gamma"], c["nu"])
        oracle = build_dense_oracle(p)
        return np.array([verify_c_evolution(p, t, oracle=oracle) for t in ts])

    res = ens.expectation(_spec(cfg), diag, sizes, cfg.threads, keep_values=True)
    rows = [ens.Row(cfg.diagnostic, float(m), float(s), res.n_valid, res.n_invalid, t=t)
            for t, m, s in zip(ts, res.mean, res.stderr)]
    fit = {"max_residual": float(res.values.max())}
    return RunResult(rows, fit, res.n_invalid, res.invalid)


def _run_xy_gs_corr(cfg):
    from mbloc import xy_model as xy

    n = cfg.n
    obs = {"X": xy.PAULI_X, "Y": xy.PAULI_Y, "Z": xy.PAULI_Z}[cfg.params["observable"]]
    sizes = {"mu": n - 1, "gamma": n - 1, "nu": n}

    def diag(c):
        oracle = xy.build_dense_oracle(xy.XYParams(c["mu"], c["gamma"], c["nu"]))
        w = oracle.eig[0]
        if w[1] - w[0] < 1e-10:
            raise InvalidSampleError(f"degenerate ground state (gap {w[1] - w[0]:.2e})")
        return np.array([xy.ground_state_correlation(oracle, obs, 0, obs, r) for r in range(1, n)])

    res = ens.expectation(_spec(cfg), diag, sizes, cfg.threads)
    rows = []
    for r, m, s in zip(range(1, n), res.mean, res.stderr):
        rows.append(ens.Row("gs-corr", float(m), float(s), res.n_valid, res.n_invalid, r=r, x="0", y=str(r)))
    for r, m, s in zip(range(1, n), res.mean, res.stderr):
        rows.append(ens.Row("gs-corr/n", float(m) / n, float(s) / n, res.n_valid, res.n_invalid, r=r, x="0", y=str(r)))
    fit = None
    pts = list(zip(range(1, n), res.mean))
    if len(pts) >= 3:
        fit = ens.fit_decay(pts, floor=ens.FLOOR).as_dict()
    return RunResult(rows, fit, res.n_invalid, res.invalid)


def _run_lyapunov(cfg):
    from mbloc import lyapunov as ly

    p = cfg.params
    dists = cfg.distributions()

    def one(E):
        if cfg.model == "ising":
            r = ly.lyapunov_ising(E, dists["nu"], p["steps"], cfg.seed, interval=p["interval"])
            return [ens.Row("lyapunov", r.gamma, r.stderr, 1, r.n_invalid, E=E, k=0)]
        r = ly.lyapunov_block(E, dists, p["steps"], cfg.seed, interval=p["interval"])
        return [ens.Row("lyapunov", float(g), float(s), 1, 0, E=E, k=i)
                for i, (g, s) in enumerate(zip(r.exponents, r.stderr))]

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(one, p["energies"]))
    else:
        chunks = [one(E) for E in p["energies"]]
    rows = [r for c in chunks for r in c]
    return RunResult(rows, None, sum(r.n_invalid for r in rows))


def _regions(cfg):
    from mbloc.oscillator import Region

    if cfg.d == 1:
        return [(lambda lat, g=g: Region.centered_interval(lat, g)) for g in cfg.params["regions"]]
    return [(lambda lat, g=g: Region.box(lat, g)) for g in cfg.params["regions"]]


def _run_regions(cfg):
    model = ens.oscillator_model(cfg.d, cfg.L, cfg.coupling)
    spec = _spec(cfg)
    regions = _regions(cfg)
    quantities = (["negativity-bound", "negativity"] if cfg.diagnostic == "negativity" else ["entropy"])
    rows, fits, invalid, n_invalid = [], {}, [], 0
    for q in quantities:
        res = ens.region_experiment(model, spec, regions, q, cfg.threads,
                                    sum_convention=cfg.params.get("sum_convention", "interior"))
        rows += res.rows
        invalid += res.invalid
        n_invalid = max(n_invalid, res.n_invalid)
        if len(res.rows) >= 3:
            sf = ens.fit_slope([r.r for r in res.rows], [r.mean for r in res.rows])
            fits[q] = {"slope": sf.slope, "stderr": sf.stderr, "intercept": sf.intercept,
                       "consistent_with_zero": sf.consistent_with_zero, "x": "region size"}
    return RunResult(rows, fits or None, n_invalid, invalid)


def execute(cfg: ExperimentConfig) -> RunResult:
    """Run the configured experiment and return its rows (no files written)."""
    m, dg = cfg.model, cfg.diagnostic
    if dg == "lyapunov":
        return _run_lyapunov(cfg)
    if m in ("xy", "ising") and dg == "dynloc":
        return _run_xy_dynloc(cfg)
    if dg == "oracle-check":
        return _run_oracle_check(cfg)
    if m == "xy" and dg == "gs-corr":
        return _run_xy_gs_corr(cfg)
    if dg in ("negativity", "entropy"):
        return _run_regions(cfg)
    model = ens.oscillator_model(cfg.d, cfg.L, cfg.coupling)
    kind = "thermal-corr" if dg == "thermal-corr" else dg
    kw = {"beta": cfg.params["beta"]} if dg == "thermal-corr" else {}
    return _pair_run(cfg, model, kind, **kw)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _cell(v) -> Any:
    if v is None:
        return None
    if isinstance(v, (float, np.floating)):
        return None if math.isnan(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def format_table(rows: Sequence[ens.Row], fmt: str = "csv") -> str:
    """Serialize rows; CSV leaves missing or not-available values empty, JSONL uses null."""
    recs = [[_cell(getattr(r, c)) for c in COLUMNS] for r in rows]
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(COLUMNS)
        for rec in recs:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in rec])
    elif fmt == "jsonl":
        for rec in recs:
            buf.write(json.dumps(dict(zip(COLUMNS, rec))) + "\n")
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    return buf.getvalue()


def output_path(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.output)
    base = os.environ.get(OUTPUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def versions() -> dict:
    from mbloc import __version__

    return {"mbloc": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def write_outputs(cfg: ExperimentConfig, result: RunResult) -> Path:
    path = output_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".")
    path.write_text(format_table(result.rows, fmt), newline="")
    stem = path.with_suffix("")
    meta = {
        "config": cfg.as_dict(),
        "versions": versions(),
        "n_invalid": result.n_invalid,
        "invalid": result.invalid,
        "columns": list(COLUMNS),
    }
    Path(f"{stem}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if result.fit is not None:
        Path(f"{stem}.fit.json").write_text(json.dumps(result.fit, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mbloc", description="Localization diagnostics for disordered XY chains "
                                                         "and harmonic oscillator lattices.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment",
                         description="Any dotted config key can be given as --key value.")
    run.usage = "mbloc run [config] [--key value ...]"
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args, rest = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = rest.pop(0) if rest and not rest[0].startswith("-") else None
    try:
        file_cfg = load_file(config) if config else {}
        cfg = resolve(file_cfg, parse_overrides(rest))
    except (ConfigError, OracleCapError) as exc:
        print(f"mbloc: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        result = execute(cfg)
    except (SingularSpectrumError, InvalidSampleError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"mbloc: numerical failure: {exc}", file=sys.stderr)
        return 3
    path = write_outputs(cfg, result)
    print(f"wrote {path} ({len(result.rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
