"""Configuration-driven command line front end.

Usage::

    hyperdrift <command> --config run.json [--out DIR] [--seed N] [--workers N] [--quiet]

Exit status: 0 when every check passes, 1 when a check fails, 2 for
unreadable input, 3 for an invalid configuration or a rate below the decay
threshold.  ``HYPERDRIFT_SEED`` overrides the configured master seed; an
explicit ``--seed`` overrides both.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .constants import generator_bound, lambda_threshold, model_decay_constants, proof_constants
from .errors import ConfigError, DomainError, HyperdriftError, ThresholdNotMetError
from .model import CONSTANT_FIELDS, ModelConstants, build_model, validate_model
from .montecarlo import BoundCheck, default_t0, exp_local_time_moment, gateaux_consistency, local_time_moments, verify_decay, weighted_flow_moment
from .paths import TimeGrid, default_epsilon, simulate_ensemble
from .rng import NoiseSource, derive_seed
from .stationary import (
    cauchy_rate_check,
    pullback_sample,
    required_depth,
    second_moment_curve,
    stationarity_test,
    uniqueness_coupling,
)

COMMANDS = ("constants", "simulate", "decay", "localtime", "flow", "stationary", "validate")
SEED_ENV = "HYPERDRIFT_SEED"
EXIT_OK, EXIT_FAILED, EXIT_PARSE, EXIT_INVALID = 0, 1, 2, 3
REPORT_HEADER = ("quantity", "t", "estimate", "std_error", "bound", "slack", "pass")

# -- configuration ---------------------------------------------------------------

_MODEL_KEYS = {"name", "d", "m", "lambda", "params", "declared"}
_NUMERICS_KEYS = {"dt", "eps", "t_end", "n_paths", "seed"}
_OUTPUT_KEYS = {"directory", "formats"}
_TOP_KEYS = {"model", "numerics", "experiment", "output"}
_EXPERIMENT_KEYS = {
    "constants": set(),
    "simulate": {"x0", "record_every", "flow"},
    "decay": {"x", "y", "times", "p", "lambda_factor", "rate_tolerance"},
    "localtime": {"x", "times", "orders", "exp_t0_multiples", "c_allow"},
    "flow": {"x", "t", "direction", "steps", "gateaux_t", "gateaux_dt", "gateaux_paths", "c_allow"},
    "stationary": {
        "t_eval", "depths", "realizations", "lambda_factor", "t1", "t2",
        "ks_realizations", "ks_depth", "coupling_depth", "coupling_paths", "moment_times", "c_allow",
    },
    "validate": {"n_samples", "box"},
}


@dataclass(frozen=True)
class RunConfig:
    model: dict
    numerics: dict
    experiment: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.numerics["dt"])

    @property
    def eps(self) -> float:
        e = self.numerics.get("eps")
        return default_epsilon(self.dt) if e is None else float(e)

    @property
    def n_paths(self) -> int:
        return int(self.numerics["n_paths"])

    @property
    def seed(self) -> int:
        return int(self.numerics["seed"])


def _reject_unknown(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {', '.join(extra)}")


def _positive(value, name, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if integer and int(value) != value:
        raise ConfigError(f"{name} must be an integer")
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be positive")


def parse_config(doc: Any, command: str) -> RunConfig:
    """Validate a decoded configuration document for ``command``."""
    _reject_unknown(doc, _TOP_KEYS, "config")
    for key in ("model", "numerics"):
        if key not in doc:
            raise ConfigError(f"missing block {key!r}")
    model = doc["model"]
    _reject_unknown(model, _MODEL_KEYS, "model")
    for key in ("name", "d", "m", "lambda", "declared"):
        if key not in model:
            raise ConfigError(f"model is missing {key!r}")
    _positive(model["d"], "model.d", integer=True)
    _positive(model["m"], "model.m", integer=True)
    _positive(model["lambda"], "model.lambda")
    declared = model["declared"]
    _reject_unknown(declared, set(CONSTANT_FIELDS), "model.declared")
    missing = [k for k in CONSTANT_FIELDS if k not in declared]
    if missing:
        raise ConfigError(f"model.declared is missing {', '.join(missing)}")
    if not isinstance(model.get("params", {}), dict):
        raise ConfigError("model.params must be an object")

    num = doc["numerics"]
    _reject_unknown(num, _NUMERICS_KEYS, "numerics")
    for key in ("dt", "n_paths", "seed"):
        if key not in num:
            raise ConfigError(f"numerics is missing {key!r}")
    _positive(num["dt"], "numerics.dt")
    if num.get("eps") is not None:
        _positive(num["eps"], "numerics.eps")
    if num.get("t_end") is not None:
        _positive(num["t_end"], "numerics.t_end")
    _positive(num["n_paths"], "numerics.n_paths", integer=True)
    if num["n_paths"] < 2:
        raise ConfigError("numerics.n_paths must be at least 2")
    if isinstance(num["seed"], bool) or not isinstance(num["seed"], int) or num["seed"] < 0:
        raise ConfigError("numerics.seed must be a nonnegative integer")

    exp = doc.get("experiment", {})
    _reject_unknown(exp, _EXPERIMENT_KEYS[command], f"experiment ({command})")
    out = doc.get("output", {})
    _reject_unknown(out, _OUTPUT_KEYS, "output")
    if "formats" in out and list(out["formats"]) != ["csv"]:
        raise ConfigError("only the csv output format is supported")
    return RunConfig(dict(model), dict(num), dict(exp), dict(out))


def load_config(path: str | Path, command: str) -> RunConfig:
    """Read and validate a JSON configuration; JSON syntax errors raise ``ValueError``."""
    text = Path(path).read_text()
    doc = json.loads(text)
    return parse_config(doc, command)


def config_model(cfg: RunConfig):
    m = cfg.model
    try:
        declared = ModelConstants.from_mapping(m["declared"])
        return build_model(m["name"], int(m["d"]), int(m["m"]), float(m["lambda"]), m.get("params"), declared)
    except (DomainError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# -- CSV ---------------------------------------------------------------------------


def format_value(v) -> str:
    """Shortest round-trip text for floats, lowercase booleans, plain ints."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: Path, header, rows) -> None:
    """Write rows (dicts keyed by ``header`` or sequences in header order)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        values = [row[h] for h in header] if isinstance(row, dict) else row
        w.writerow([format_value(v) for v in values])
    path.write_text(buf.getvalue())


def read_csv(path: str | Path) -> list[dict]:
    """Parse a CSV written by this tool back into typed rows."""
    with open(path, newline="") as fh:
        return [{k: parse_value(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_report(path: Path, checks: list[BoundCheck], extra_rows: list[dict] = ()) -> None:
    write_csv(path, REPORT_HEADER, [c.row() for c in checks] + list(extra_rows))


# -- commands ----------------------------------------------------------------------


@dataclass
class Context:
    cfg: RunConfig
    out: Path
    seed: int
    workers: int
    log: Callable[[str], None]
    files: list[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name


def _vec(value, d, default=None) -> np.ndarray:
    v = np.zeros(d) if value is None and default is None else np.asarray(value if value is not None else default, float)
    if v.shape != (d,):
        raise ConfigError(f"expected a vector of length {d}")
    return v


def _with_factor(model, exp):
    """Apply ``lambda_factor`` (a multiple of the decay threshold) when configured."""
    f = exp.get("lambda_factor")
    if f is None:
        return model
    _positive(f, "experiment.lambda_factor")
    return model.with_lambda(f * lambda_threshold(model.declared)[0])


def cmd_constants(ctx: Context, model) -> bool:
    c = model.declared
    Lam, delta = lambda_threshold(c)
    k1, k2, k3 = proof_constants(c) if c.B_sigma > 0 else (math.nan,) * 3
    gen = generator_bound(c, model.lam)
    values = {"lambda": model.lam, "K": c.K, "K1": k1, "K2": k2, "K3": k3, "delta": delta, "Lambda": Lam}
    values["threshold_met"] = model.lam > Lam
    if model.lam > Lam:
        dc = model_decay_constants(model)
        values.update(t0=dc.t0, rho_at_t0=dc.rho_at_t0, q_at_t0=dc.q_at_t0, C1=dc.C1, C2=dc.C2, witness=dc.witness)
    values.update(K1_gen=gen.K1_gen, K2_gen=gen.K2_gen)
    ctx.path("constants.txt").write_text("".join(f"{k}={format_value(v)}\n" for k, v in values.items()))
    ctx.log(f"Lambda={Lam!r} lambda={model.lam!r}")
    return True


def cmd_simulate(ctx: Context, model) -> bool:
    cfg, exp = ctx.cfg, ctx.cfg.experiment
    t_end = cfg.numerics.get("t_end")
    if t_end is None:
        raise ConfigError("simulate needs numerics.t_end")
    grid = TimeGrid.span(0.0, t_end, cfg.dt)
    every = int(exp.get("record_every", max(1, grid.n_steps // 1000)))
    _positive(every, "experiment.record_every", integer=True)
    offsets = np.unique(np.append(np.arange(0, grid.n_steps + 1, every), grid.n_steps))
    flow = bool(exp.get("flow", False))
    rec = simulate_ensemble(
        model, _vec(exp.get("x0"), model.dim_d), grid, NoiseSource(ctx.seed, model.dim_m, cfg.dt),
        cfg.n_paths, eps=cfg.eps, record=offsets, flow=flow, workers=ctx.workers,
    )
    d = model.dim_d
    header = ["path", "t"] + [f"x_{i + 1}" for i in range(d)] + ["L"]
    if flow:
        header += [f"Y_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    rows = []
    for p in range(cfg.n_paths):
        for k, t in enumerate(rec.times):
            row = [p, float(t)] + [float(v) for v in rec.states[k, p]] + [float(rec.local_time[k, p])]
            if flow:
                row += [float(v) for v in rec.flow[k, p].ravel()]
            rows.append(row)
    write_csv(ctx.path("paths.csv"), header, rows)
    return True


def cmd_decay(ctx: Context, model) -> bool:
    cfg, exp = ctx.cfg, ctx.cfg.experiment
    model = _with_factor(model, exp)
    d = model.dim_d
    x = _vec(exp.get("x"), d)
    y = _vec(exp.get("y"), d, default=np.eye(d)[-1])
    times = exp.get("times", [0.5, 1.0, 2.0, 4.0])
    res = verify_decay(
        model, x, y, times, cfg.n_paths, cfg.dt, ctx.seed, p=exp.get("p", 1),
        rate_tolerance=exp.get("rate_tolerance", 0.0), workers=ctx.workers,
    )
    C2 = res.constants.C2
    extra = {"quantity": "fitted_rate", "t": float(max(times)), "estimate": res.fitted_rate, "std_error": 0.0,
             "bound": C2, "slack": res.fitted_rate - C2 + res.rate_tolerance, "pass": res.rate_ok}
    write_report(ctx.path("decay.csv"), res.checks, [extra])
    ctx.log(f"C1={res.constants.C1!r} C2={C2!r} fitted rate={res.fitted_rate!r}")
    return res.passed


def cmd_localtime(ctx: Context, model) -> bool:
    cfg, exp = ctx.cfg, ctx.cfg.experiment
    x = _vec(exp.get("x"), model.dim_d)
    times = exp.get("times", [0.5, 1.0, 2.0])
    c_allow = exp.get("c_allow", 1.0)
    checks = local_time_moments(model, x, times, exp.get("orders", [1, 2, 3]), cfg.n_paths, cfg.dt, ctx.seed,
                                eps=cfg.eps, c_allow=c_allow, workers=ctx.workers)
    mults = exp.get("exp_t0_multiples", [1, 5])
    if mults and model.declared.norm_D_inf > 0:
        t0 = default_t0(model)
        for k in mults:
            t = math.floor(k * t0 / cfg.dt) * cfg.dt
            checks.append(exp_local_time_moment(model, x, t, cfg.n_paths, cfg.dt, ctx.seed, eps=cfg.eps, t0=t0,
                                                c_allow=c_allow, workers=ctx.workers))
    write_report(ctx.path("localtime.csv"), checks)
    return all(c.passed for c in checks)


def cmd_flow(ctx: Context, model) -> bool:
    cfg, exp = ctx.cfg, ctx.cfg.experiment
    d = model.dim_d
    x = _vec(exp.get("x"), d)
    t = float(exp.get("t", 1.0))
    curve = weighted_flow_moment(model, x, t, cfg.n_paths, cfg.dt, ctx.seed, eps=cfg.eps,
                                 c_allow=exp.get("c_allow", 1.0), workers=ctx.workers)
    checks = [curve.check]
    extra = []
    ok = curve.check.passed
    steps = exp.get("steps")
    if steps:
        v = _vec(exp.get("direction"), d, default=np.eye(d)[-1])
        gdt = float(exp.get("gateaux_dt", cfg.dt))
        rep = gateaux_consistency(model, x, v, float(exp.get("gateaux_t", t)), steps,
                                  int(exp.get("gateaux_paths", cfg.n_paths)), gdt, ctx.seed, workers=ctx.workers)
        prev = math.inf
        for h, est in sorted(zip(rep.steps, rep.errors), key=lambda p: -p[0]):
            extra.append({"quantity": "gateaux_l1", "t": h, "estimate": est.mean, "std_error": est.std_error,
                          "bound": prev, "slack": prev - est.mean, "pass": est.mean < prev})
            prev = est.mean
        ok = ok and rep.monotone
    write_report(ctx.path("flow.csv"), checks, extra)
    return ok


def cmd_stationary(ctx: Context, model) -> bool:
    cfg, exp = ctx.cfg, ctx.cfg.experiment
    model = _with_factor(model, exp)
    consts = model_decay_constants(model)
    gen = generator_bound(model.declared, model.lam)
    t_eval = float(exp.get("t_eval", 0.0))
    depths = [0.0] + [float(v) for v in exp.get("depths", range(1, 9))]
    n_real = int(exp.get("realizations", cfg.n_paths))
    run = pullback_sample(model, t_eval, t_eval - np.array(depths), cfg.dt, ctx.seed, n_realizations=n_real)
    d = model.dim_d
    header = ["realization", "s"] + [f"x_{i + 1}" for i in range(d)] + ["diff", "log_diff"]
    rows = []
    for r in range(n_real):
        for j, s in enumerate(run.s_list):
            ld = float(run.log_diffs[j, r]) if j < len(run.s_list) - 1 else math.nan
            rows.append([r, float(s)] + [float(v) for v in run.endpoints[j, r]] + [math.exp(ld), ld])
    write_csv(ctx.path("pullback.csv"), header, rows)

    checks = cauchy_rate_check(run, consts, gen) if n_real >= 2 else []
    depth = exp.get("coupling_depth", max(depths))
    checks.append(uniqueness_coupling(model, t_eval, np.zeros(d), np.eye(d)[-1], depth, cfg.dt, ctx.seed,
                                      n_paths=int(exp.get("coupling_paths", cfg.n_paths)), workers=ctx.workers))
    mt = exp.get("moment_times")
    if mt:
        checks += second_moment_curve(model, t_eval, np.zeros(d), [t_eval + float(v) for v in mt], cfg.n_paths, cfg.dt,
                                      ctx.seed, c_allow=exp.get("c_allow", 1.0), workers=ctx.workers)
    write_report(ctx.path("stationary.csv"), checks)

    t1, t2 = float(exp.get("t1", t_eval)), float(exp.get("t2", t_eval + 1.0))
    ks_depth = exp.get("ks_depth")
    ks_depth = required_depth(consts) if ks_depth is None else float(ks_depth)
    ks_depth = math.ceil(ks_depth / cfg.dt) * cfg.dt
    rep = stationarity_test(model, t1, t2, int(exp.get("ks_realizations", n_real)), ks_depth, cfg.dt, ctx.seed, workers=ctx.workers)
    ks_rows = []
    for k in range(d):
        ks_rows.append({
            "coordinate": k + 1, "statistic": rep.statistics[k], "p_value": rep.p_values[k], "threshold": rep.threshold,
            "reference_statistic": rep.reference_statistics[k] if rep.reference_statistics else math.nan,
            "reference_p_value": rep.reference_p_values[k] if rep.reference_p_values else math.nan,
            "pass": rep.p_values[k] >= rep.threshold
            and (rep.reference_p_values is None or rep.reference_p_values[k] >= rep.threshold),
        })
    write_csv(ctx.path("stationarity.csv"), list(ks_rows[0]), ks_rows)
    return all(c.passed for c in checks) and rep.passed


def cmd_validate(ctx: Context, model) -> bool:
    exp = ctx.cfg.experiment
    rep = validate_model(model, n_samples=int(exp.get("n_samples", 10_000)), box=float(exp.get("box", 5.0)), seed=ctx.seed)
    header = ["condition", "quantity", "declared", "sampled", "pass"]
    rows = [{"condition": c.condition, "quantity": c.quantity, "declared": c.declared, "sampled": c.sampled, "pass": c.passed}
            for c in rep.checks]
    write_csv(ctx.path("validation.csv"), header, rows)
    return rep.passed


HANDLERS = {
    "constants": cmd_constants,
    "simulate": cmd_simulate,
    "decay": cmd_decay,
    "localtime": cmd_localtime,
    "flow": cmd_flow,
    "stationary": cmd_stationary,
    "validate": cmd_validate,
}


# -- entry point -------------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"hyperdrift": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def write_manifest(ctx: Context, command: str, config_bytes: bytes, master: int) -> None:
    files = {name: _sha256((ctx.out / name).read_bytes()) for name in sorted(ctx.files)}
    manifest = {
        "command": command,
        "config_sha256": _sha256(config_bytes),
        "master_seed": master,
        "sub_seed": ctx.seed,
        "versions": _versions(),
        "files": files,
    }
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperdrift", description="Simulate and check SDEs with a drift jump across a hyperplane.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", "--model-config", dest="config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="master seed (overrides config and environment)")
    p.add_argument("--workers", type=int, default=1, help="worker threads for ensembles")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    p.add_argument("--dt", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--depth", type=float, help="pullback depth for the stationarity test")
    p.add_argument("--t-eval", type=float)
    p.add_argument("--realizations", type=int)
    return p


def _apply_flags(doc: dict, args) -> None:
    num = doc.setdefault("numerics", {})
    for flag, key in (("dt", "dt"), ("eps", "eps"), ("t_end", "t_end"), ("paths", "n_paths")):
        v = getattr(args, flag)
        if v is not None:
            num[key] = v
    if args.command == "stationary":
        exp = doc.setdefault("experiment", {})
        for flag, key in (("depth", "ks_depth"), ("t_eval", "t_eval"), ("realizations", "realizations")):
            v = getattr(args, flag)
            if v is not None:
                exp[key] = v


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(f"[{args.command}] {msg}", file=sys.stderr))
    try:
        raw = Path(args.config).read_bytes()
        doc = json.loads(raw)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _apply_flags(doc, args)
        if args.seed is not None:
            doc["numerics"]["seed"] = args.seed
        elif os.environ.get(SEED_ENV):
            try:
                doc["numerics"]["seed"] = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer") from None
        cfg = parse_config(doc, args.command)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        model = config_model(cfg)
        out = Path(args.out or cfg.output.get("directory", "."))
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, out, derive_seed(cfg.seed, args.command), args.workers, log)
        log(f"model={model.name} lambda={model.lam!r} seed={cfg.seed}")
        ok = HANDLERS[args.command](ctx, model)
        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        write_manifest(ctx, args.command, canonical, cfg.seed)
    except (ConfigError, ThresholdNotMetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HyperdriftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
