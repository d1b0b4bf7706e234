"""Command-line driver: rates, sweeps, single-run inspection and reference tables.

Settings are resolved in three layers: built-in defaults, then an INI file
given by ``--config`` (sections ``[params]``, ``[imperfections]``, ``[run]``,
``[sweep]``), then command-line flags.  Presets are ordinary settings layers.

Exit status: 0 success, 1 configuration error, 2 numerical diagnostic.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import sys
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import analytics as an
from .oracle import simulate_run
from .rtp import AsymptoticRegimeWarning, RtpParams
from .sop import (
    ImperfectionConfig,
    PathLimitError,
    PruningWarning,
    extract_rate,
    mc_coherence,
    sop_coherence,
)

SWEEP_SCHEMA = "spectator-rtn/sweep/v1"
INSPECT_SCHEMA = "spectator-rtn/inspect/v1"
SWEEP_COLUMNS = (
    "sweep_value",
    "rate",
    "scaled_rate",
    "analytic_rate",
    "residual",
    "engine",
    "discarded_mass",
)
INSPECT_COLUMNS = (
    "step",
    "time",
    "z",
    "y",
    "s",
    "phi_true",
    "phi_est",
    "conditional_decoherence",
)
SWEEP_VARIABLES = ImperfectionConfig.FIELDS + ("tau_prime", "theta")


class ConfigError(ValueError):
    pass


class DiagnosticError(RuntimeError):
    pass


# ---------------------------------------------------------------- settings

DEFAULTS = {
    "params": {"gamma_up": "1", "gamma_down": "1", "kappa": "0.2", "big_k": "100"},
    "imperfections": {f: "0" for f in ImperfectionConfig.FIELDS},
    "run": {
        "theta": "optimal",
        "steps": "18",
        "discard": "5",
        "engine": "sop",
        "samples": "100000",
        "seed": "0",
        "threads": "1",
        "deterministic": "true",
        "prune_floor": "1e-15",
    },
    "sweep": {},
}

_GRID_PI = (1.50055, 1.8, 2.1, 2.4, 2.7, 3.6, 4.0, 4.4, 4.69424, 5.0, 5.3, 5.7, 6.8, 7.2, 7.6, 7.84327, 8.2, 8.6, 9.0)

PRESETS: dict[str, dict] = {
    "fig4": {
        "description": "angle offset sweep, K=100",
        "command": "sweep",
        "params": {"kappa": "0.2", "big_k": "100", "gamma_up": "1", "gamma_down": "1"},
        "run": {"steps": "18", "discard": "5", "seed": "4"},
        "sweep": {"variable": "delta_theta", "values": "0,0.025,0.05,0.075,0.1,0.125,0.15,0.175,0.2,0.225,0.25"},
    },
    "fig5": {
        "description": "sensitivity offset sweep, K=20",
        "command": "sweep",
        "params": {"kappa": "0.2", "big_k": "20", "gamma_up": "1", "gamma_down": "1"},
        "run": {"steps": "18", "discard": "5", "seed": "5"},
        "sweep": {"variable": "delta_kappa", "values": "-0.01,-0.0075,-0.005,-0.0025,0,0.0025,0.005,0.0075,0.01"},
    },
    "fig7": {
        "description": "reset time sweep, K=100",
        "command": "sweep",
        "params": {"kappa": "0.2", "big_k": "100", "gamma_up": "1", "gamma_down": "1"},
        "run": {"steps": "18", "discard": "5", "seed": "7"},
        "sweep": {"variable": "theta_sr", "values": "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2"},
    },
    "fig8": {
        "description": "readout error sweep, 18 steps, first 10 discarded",
        "command": "sweep",
        "params": {"kappa": "0.2", "big_k": "100", "gamma_up": "1", "gamma_down": "1"},
        "run": {"steps": "18", "discard": "10", "seed": "8"},
        "sweep": {"variable": "eps", "values": "0,0.005,0.01,0.015,0.02,0.03,0.04"},
    },
    "deadtime": {
        "description": "waiting time sweep at fixed Theta*, K=100",
        "command": "sweep",
        "params": {"kappa": "0.2", "big_k": "100", "gamma_up": "1", "gamma_down": "1"},
        "run": {"steps": "18", "discard": "5", "seed": "9"},
        "sweep": {"variable": "tau_prime", "values": ",".join(f"{x / 100:g}" for x in _GRID_PI)},
    },
    "fig9-dtheta": {
        "description": "single run, angle offset 0.2, seed with a false pair",
        "command": "inspect",
        "params": {"kappa": "0.2", "big_k": "100", "gamma_up": "1", "gamma_down": "1"},
        "imperfections": {"delta_theta": "0.2"},
        "run": {"steps": "40", "seed": "0", "engine": "mc"},
    },
    "fig9-eps": {
        "description": "single run, readout error 0.01, same seed",
        "command": "inspect",
        "params": {"kappa": "0.2", "big_k": "100", "gamma_up": "1", "gamma_down": "1"},
        "imperfections": {"eps": "0.01"},
        "run": {"steps": "40", "seed": "0", "engine": "mc"},
    },
}


@dataclass
class ExperimentConfig:
    params: RtpParams
    imperfections: ImperfectionConfig
    big_theta: float
    n_steps: int
    discard: int
    engine: str
    seed: int
    samples: int
    threads: int = 1
    deterministic: bool = True
    sweep_variable: Optional[str] = None
    sweep_values: tuple[float, ...] = field(default=())
    output: Optional[str] = None
    prune_floor: float = 1e-15


def _layered(args) -> dict[str, dict[str, str]]:
    layers = {k: dict(v) for k, v in DEFAULTS.items()}
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; see the presets subcommand")
        for sec, vals in PRESETS[preset].items():
            if isinstance(vals, dict):
                layers[sec].update(vals)
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        for sec in cp.sections():
            if sec not in layers:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, val in cp.items(sec):
                known = DEFAULTS[sec].keys() if sec != "sweep" else ("variable", "values", "grid")
                if key not in known and not (sec == "run" and key == "out"):
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                layers[sec][key] = val
    flag_map = {
        "params": ("gamma_up", "gamma_down", "kappa", "big_k"),
        "imperfections": ImperfectionConfig.FIELDS,
        "run": ("theta", "steps", "discard", "engine", "samples", "seed", "threads", "out"),
    }
    for sec, names in flag_map.items():
        for name in names:
            val = getattr(args, name, None)
            if val is not None:
                layers[sec][name] = str(val)
    if getattr(args, "deterministic", False):
        layers["run"]["deterministic"] = "true"
    for name in ("variable", "values", "grid"):
        val = getattr(args, name, None)
        if val is not None:
            layers["sweep"][name] = str(val)
    return layers


def _float(sec, key, raw) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key} must be a number, got {raw!r}") from exc


def _int(sec, key, raw) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key} must be an integer, got {raw!r}") from exc


def parse_values(values: Optional[str], grid: Optional[str]) -> tuple[float, ...]:
    if values and grid:
        raise ConfigError("give either sweep values or a grid, not both")
    if values:
        return tuple(_float("sweep", "values", v) for v in values.split(",") if v.strip())
    if grid:
        parts = grid.split(":")
        if len(parts) != 3:
            raise ConfigError("grid must be start:stop:count")
        start, stop = _float("sweep", "grid", parts[0]), _float("sweep", "grid", parts[1])
        count = _int("sweep", "grid", parts[2])
        if count < 1:
            raise ConfigError("grid count must be positive")
        return tuple(np.linspace(start, stop, count).tolist())
    return ()


def resolve(args) -> ExperimentConfig:
    layers = _layered(args)
    p = {k: _float("params", k, v) for k, v in layers["params"].items()}
    try:
        params = RtpParams(**p)
        imp = ImperfectionConfig(
            **{k: _float("imperfections", k, v) for k, v in layers["imperfections"].items()}
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    run = layers["run"]
    theta_raw = run["theta"].strip().lower()
    if theta_raw == "optimal":
        big_theta = an.minimize_h_theta()[0]
    else:
        big_theta = _float("run", "theta", theta_raw)
        if abs(math.sin(big_theta)) < 1e-9:
            raise ConfigError("theta must not be a multiple of pi")
    engine = run["engine"]
    if engine not in ("sop", "mc", "analytic"):
        raise ConfigError(f"engine must be sop, mc or analytic, got {engine!r}")
    n_steps = _int("run", "steps", run["steps"])
    discard = _int("run", "discard", run["discard"])
    if n_steps < 1 or discard < 0 or discard > n_steps - 2:
        raise ConfigError("need steps >= 1 and 0 <= discard <= steps - 2")
    det = run.get("deterministic", "true").strip().lower() in ("1", "true", "yes", "on")
    sweep = layers["sweep"]
    variable = sweep.get("variable")
    if variable is not None and variable not in SWEEP_VARIABLES:
        raise ConfigError(f"sweep variable must be one of {', '.join(SWEEP_VARIABLES)}")
    values = parse_values(sweep.get("values"), sweep.get("grid"))
    samples = _int("run", "samples", run["samples"])
    threads = _int("run", "threads", run["threads"])
    if threads < 1:
        raise ConfigError("threads must be positive")
    return ExperimentConfig(
        params=params,
        imperfections=imp,
        big_theta=big_theta,
        n_steps=n_steps,
        discard=discard,
        engine=engine,
        seed=_int("run", "seed", run["seed"]),
        samples=samples,
        threads=threads,
        deterministic=det,
        sweep_variable=variable,
        sweep_values=values,
        output=run.get("out"),
        prune_floor=_float("run", "prune_floor", run["prune_floor"]),
    )


# ---------------------------------------------------------------- evaluation


def _point(cfg: ExperimentConfig, variable: Optional[str], value: Optional[float]):
    """Settings for one sweep point: (params, imperfections, theta, tau or None)."""
    imp, theta, tau = cfg.imperfections, cfg.big_theta, None
    if variable in ImperfectionConfig.FIELDS:
        try:
            imp = replace(imp, **{variable: value})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif variable == "tau_prime":
        if not value > 0:
            raise ConfigError("tau_prime must be positive")
        tau = value
    elif variable == "theta":
        if abs(math.sin(value)) < 1e-9:
            raise ConfigError("theta must not be a multiple of pi")
        theta = value
    return cfg.params, imp, theta, tau


def analytic_rate(params, imp: ImperfectionConfig, theta: float, tau: Optional[float]) -> Optional[float]:
    """Closed-form prediction for a single active imperfection, if one is known."""
    active = [f for f in ImperfectionConfig.FIELDS if getattr(imp, f)]
    if tau is not None:
        return None if active else an.scale_factor(params) * an.h_theta(params.big_k * tau)
    if not active:
        return an.rate_ideal(params, theta)
    if len(active) > 1:
        return None
    name = active[0]
    if name == "delta_theta":
        return an.rate_delta_theta(params, theta, imp.delta_theta)
    if name == "delta_kappa":
        return an.rate_delta_kappa(params, theta, imp.delta_kappa, an.rate_ideal(params, theta))
    if name == "theta_sr":
        return an.rate_reset(params, theta, imp.theta_sr)
    if name == "tau_dd":
        t = imp.waiting_time(params, theta)
        return an.scale_factor(params) * an.h_theta(params.big_k * t)
    return None


def evaluate(cfg: ExperimentConfig, variable=None, value=None) -> dict:
    params, imp, theta, tau = _point(cfg, variable, value)
    predicted = analytic_rate(params, imp, theta, tau)
    row = {
        "sweep_value": "" if value is None else value,
        "analytic_rate": "" if predicted is None else predicted,
        "engine": cfg.engine,
        "discarded_mass": "",
    }
    if cfg.engine == "analytic":
        if predicted is None:
            raise ConfigError("no closed-form rate for this configuration; use --engine sop or mc")
        row.update(rate=predicted, scaled_rate=predicted / an.scale_factor(params), residual=0.0)
        return row
    if cfg.engine == "sop":
        try:
            res = sop_coherence(
                params,
                imp,
                theta,
                cfg.n_steps,
                tau=tau,
                threads=cfg.threads,
                deterministic=cfg.deterministic,
                prune_floor=cfg.prune_floor,
            )
        except PathLimitError as exc:
            raise ConfigError(str(exc)) from exc
        series = res.series()
        row["discarded_mass"] = res.discarded_mass
    else:
        res = mc_coherence(params, imp, theta, cfg.n_steps, cfg.samples, cfg.seed, tau=tau)
        series = list(zip(res.times.tolist(), res.coherence.tolist()))
    est = extract_rate(series, cfg.discard, params)
    row.update(rate=est.rate, scaled_rate=est.scaled_rate, residual=est.residual)
    return row


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(out, schema: str, columns, rows, provenance: list[str]) -> None:
    out.write(f"# schema: {schema} columns={','.join(columns)}\n")
    for line in provenance:
        out.write(f"# {line}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in columns])


def _provenance(cfg: ExperimentConfig) -> list[str]:
    p = cfg.params
    imp = ", ".join(f"{f}={getattr(cfg.imperfections, f)!r}" for f in ImperfectionConfig.FIELDS)
    return [
        f"params: gamma_up={p.gamma_up!r}, gamma_down={p.gamma_down!r}, kappa={p.kappa!r}, big_k={p.big_k!r}",
        f"imperfections: {imp}",
        f"run: theta={cfg.big_theta!r}, steps={cfg.n_steps}, discard={cfg.discard}, "
        f"engine={cfg.engine}, samples={cfg.samples}, seed={cfg.seed}",
    ]


def _emit(cfg: ExperimentConfig, text: str, stdout) -> None:
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


# ---------------------------------------------------------------- subcommands


def cmd_rate(args, stdout) -> int:
    cfg = resolve(args)
    row = evaluate(cfg)
    buf = io.StringIO()
    _write_csv(buf, SWEEP_SCHEMA, SWEEP_COLUMNS, [row], _provenance(cfg))
    _emit(cfg, buf.getvalue(), stdout)
    return 0


def cmd_sweep(args, stdout) -> int:
    cfg = resolve(args)
    if cfg.sweep_variable is None or not cfg.sweep_values:
        raise ConfigError("sweep needs --variable and --values/--grid (or a preset)")
    rows = [evaluate(cfg, cfg.sweep_variable, v) for v in cfg.sweep_values]
    buf = io.StringIO()
    prov = _provenance(cfg) + [f"sweep: {cfg.sweep_variable}"]
    _write_csv(buf, SWEEP_SCHEMA, SWEEP_COLUMNS, rows, prov)
    _emit(cfg, buf.getvalue(), stdout)
    return 0


def cmd_inspect(args, stdout) -> int:
    if args.engine is None and not getattr(args, "preset", None):
        args.engine = "mc"
    cfg = resolve(args)
    if cfg.engine != "mc":
        raise ConfigError("inspect runs a single sampled trajectory; use --engine mc")
    rec = simulate_run(cfg.params, cfg.imperfections, cfg.big_theta, cfg.n_steps, cfg.seed)
    rows = [
        {
            "step": n + 1,
            "time": float(rec.times[n]),
            "z": int(rec.z[n]),
            "y": int(rec.readouts[n]),
            "s": int(rec.s_history[n]),
            "phi_true": float(rec.true_phase[n]),
            "phi_est": float(rec.estimated_phase[n]),
            "conditional_decoherence": float(rec.conditional_decoherence[n]),
        }
        for n in range(rec.n_steps)
    ]
    buf = io.StringIO()
    prov = _provenance(cfg) + [f"flips: {' '.join(repr(t) for t in rec.trajectory.flip_times)}"]
    _write_csv(buf, INSPECT_SCHEMA, INSPECT_COLUMNS, rows, prov)
    _emit(cfg, buf.getvalue(), stdout)
    return 0


def cmd_bounds(args, stdout) -> int:
    cfg = resolve(args)
    p = cfg.params
    bounds = an.table1_bounds(p)
    stdout.write(f"gamma_bar = {p.gamma_bar:.6g}, gamma_breve = {p.gamma_breve:.6g}, K = {p.big_k:g}\n")
    width = max(len(k) for k in bounds)
    stdout.write(f"{'quantity':<{width}}  {'formula':<20}  value\n")
    for key, val in bounds.items():
        stdout.write(f"{key:<{width}}  {an.BOUND_FORMULAS[key]:<20}  {val:.6g}\n")
    return 0


def cmd_presets(args, stdout) -> int:
    for name, preset in PRESETS.items():
        sweep = preset.get("sweep", {})
        extra = f" [{sweep['variable']}]" if sweep else ""
        stdout.write(f"{name:<12} {preset['command']:<8} {preset['description']}{extra}\n")
    return 0


def cmd_optimal_theta(args, stdout) -> int:
    theta, h = an.minimize_h_theta()
    stdout.write(f"theta_star = {theta:.10f}\nh_star = {h:.10f}\n")
    return 0


def cmd_dead_time(args, stdout) -> int:
    cfg = resolve(args)
    tau_dd = cfg.imperfections.tau_dd
    try:
        tau_prime, th = an.dead_time_strategy(cfg.params, tau_dd)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    k = cfg.params.big_k
    stdout.write(f"roots = {', '.join(f'{r:.6f}' for r in th.roots)}\n")
    stdout.write(f"crossovers = {', '.join(f'{c:.6f}' for c in th.crossovers)}\n")
    stdout.write(f"tau_dd = {tau_dd!r}\ntau_prime = {tau_prime!r}\n")
    stdout.write(f"k_tau_prime = {k * tau_prime:.6f}\nh_k_tau_prime = {an.h_theta(k * tau_prime):.6f}\n")
    if cfg.engine in ("sop", "mc"):
        c2 = replace(cfg, imperfections=ImperfectionConfig())
        row = evaluate(c2, "tau_prime", tau_prime)
        stdout.write(f"{cfg.engine}_scaled_rate = {row['scaled_rate']:.6f}\n")
    return 0


COMMANDS = {
    "rate": cmd_rate,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
    "bounds": cmd_bounds,
    "presets": cmd_presets,
    "optimal-theta": cmd_optimal_theta,
    "dead-time": cmd_dead_time,
}


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--gamma-up", dest="gamma_up", type=float)
    g.add_argument("--gamma-down", dest="gamma_down", type=float)
    g.add_argument("--kappa", type=float)
    g.add_argument("--big-k", dest="big_k", type=float)
    g.add_argument("--theta", help="measurement angle Theta or 'optimal'")
    g = p.add_argument_group("imperfections")
    g.add_argument("--delta-theta", dest="delta_theta", type=float)
    g.add_argument("--delta-kappa", dest="delta_kappa", type=float)
    g.add_argument("--theta-sr", dest="theta_sr", type=float)
    g.add_argument("--tau-dd", dest="tau_dd", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--chi", type=float)
    g = p.add_argument_group("run")
    g.add_argument("--steps", type=int)
    g.add_argument("--discard", type=int)
    g.add_argument("--engine", choices=("sop", "mc", "analytic"))
    g.add_argument("--samples", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--config")
    g.add_argument("--threads", type=int)
    g.add_argument("--deterministic", action="store_true")
    g.add_argument("--preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectator-rtn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name in ("presets", "optimal-theta"):
            continue
        _common(p)
        if name == "sweep":
            p.add_argument("--variable", choices=SWEEP_VARIABLES)
            p.add_argument("--values", help="comma-separated grid")
            p.add_argument("--grid", help="start:stop:count")
    return parser


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    if not hasattr(args, "config"):
        args.config = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", PruningWarning)
            warnings.simplefilter("ignore", AsymptoticRegimeWarning)
            return COMMANDS[args.command](args, stdout)
    except ConfigError as exc:
        stderr.write(f"error: {exc}\n")
        return 1
    except (PruningWarning, ArithmeticError, DiagnosticError) as exc:
        stderr.write(f"numerical diagnostic: {exc}\n")
        return 2
    except OSError as exc:
        stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
