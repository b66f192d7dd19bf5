"""Command-line interface: solve, phase-scan, learn, benchmark.

Every command resolves its configuration from three layers (defaults, then a
JSON ``--config`` file, then explicit flags), writes the fully resolved
configuration as ``resolved_config.json`` next to its outputs, and is a pure
function of that file: rerunning from it reproduces every output byte for
byte.  Unknown configuration keys are rejected.

Exit codes: 0 success, 1 runtime failure, 2 configuration error (bad flags,
bad input files, out-of-range parameters).

The default output directory is the current directory, overridable by the
AUTOCLUST_OUTDIR environment variable and the ``--out`` flag.  ``--data``
accepts a CSV path or a builtin preset: ``blobs4`` (4 Gaussian blobs at the
corners of a centered square) and ``blobs16`` (16 blobs in a two-level grid),
optionally suffixed ``:P`` for P points per blob.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .aden import AdenConfig, TrainConfig, deep_anneal, params_to_arrays
from .autonomy import (
    IdentityAutonomy,
    ParametricAutonomy,
    read_tabular_csv,
)
from .core import (
    AutonomyModel,
    ClusterSet,
    Dataset,
    format_float,
    harden,
    objective_D,
    read_dataset_csv,
)
from .phase import (
    CRITICAL_EIG_FLOOR,
    assemble_hessian,
    detect_transitions,
    distinct_center_count,
    normalized_lambda_max,
)
from .rl import RlConfig, learn_tabular
from .scenarios import (
    KNOWN_METHODS,
    BenchmarkConfigs,
    honor_with_uniform_override,
    make_blobs,
    parametric_scenario,
    run_benchmark,
)
from .solver import AnnealConfig, ArmijoParams
from .tensor import save_checkpoint

log = logging.getLogger(__name__)

OUTDIR_ENV = "AUTOCLUST_OUTDIR"

DATA_PRESETS = {
    # name: (num_blobs, default points per blob, spread, data seed)
    "blobs4": (4, 50, 0.02, 7),
    "blobs16": (16, 200, 0.01, 11),
}


class ConfigError(Exception):
    """Invalid flags, config keys or input files; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Defaults, one dict per command.  Keys double as config-file keys and as
# argparse dests; values are JSON-serializable.

def _common_defaults() -> dict:
    return {
        "data": "blobs4",
        "k": 4,
        "autonomy": "identity",
        "autonomy_file": None,
        "kappa": 0.0,
        "gamma": 0.0,
        "zeta": 0.0,
        "temperature": 1.0,
        "honor_prob": 15.0 / 16.0,
        "seed": 0,
        "out": None,
    }


def _anneal_defaults() -> dict:
    return {
        "beta_min": 1e-3,
        "beta_max": 1e5,
        "tau": 1.1,
        "inner_tol": None,
        "inner_max_iters": 1000,
        "noise_scale": 1e-4,
        "inner_path": "auto",
        "armijo": {"s": 1.0, "rho": 0.1, "xi": 0.5,
                   "max_backtracks": 60, "max_steps": 500},
    }


def _solve_defaults() -> dict:
    return {**_common_defaults(), **_anneal_defaults(), "emit_policy": False}


def _phase_scan_defaults() -> dict:
    return {
        **_common_defaults(), **_anneal_defaults(),
        "merge_tol": None,          # None resolves to 1e-3 * domain radius
        "spike_factor": 10.0,
        "window": 5,
        "max_dim": 512,
    }


def _learn_tabular_defaults() -> dict:
    return {
        **_common_defaults(),
        "method": "tabular",
        "beta_min": 1e-3,
        "beta_max": 1e5,
        "tau": 1.1,
        "q_c0": 1.0,
        "q_exponent": 0.7,
        "sgd_alpha": 0.3,
        "alpha_decay": 0.85,
        "updates_per_step": 32,
        "minibatch": 32,
        "updates_per_beta": 4000,
    }


def _learn_aden_defaults() -> dict:
    return {
        **_common_defaults(),
        "method": "aden",
        "beta_min": 10.0,
        "beta_max": 50000.0,
        "tau": 1.1,
        "batches": 32,
        "samples_per_batch": 128,
        "epochs_aden": 1000,
        "epochs_y": 100,
        "lr_d": 1e-4,
        "lr_y": 1e-4,
        "weight_decay": 1e-5,
        "perturb_sigma": 0.01,
        "autonomy_samples": 16,
        "ema_lambda": 0.95,
        "epsilon_greedy": 0.1,
        "epsilon_greedy_final": 0.01,
        "hidden_dim": 64,
        "ff_dim": 128,
        "adb_layers": 4,
        "attention_heads": 8,
        "dropout_rate": 0.1,
        "track_error": False,
    }


def _benchmark_defaults() -> dict:
    base = _common_defaults()
    for key in ("autonomy", "autonomy_file", "kappa", "gamma", "zeta",
                "temperature", "honor_prob"):
        base.pop(key)               # the grid file supplies the kernels
    aden_net = AdenConfig()
    return {
        **base,
        "grid": None,
        "methods": ",".join(KNOWN_METHODS),
        "jobs": 1,
        "anneal": {k: v for k, v in _anneal_defaults().items()},
        "rl": {
            "q_c0": 1.0, "q_exponent": 0.7, "sgd_alpha": 0.3,
            "alpha_decay": 0.85, "updates_per_step": 32, "minibatch": 32,
            "updates_per_beta": 4000,
        },
        "train": {
            "batches": 32, "samples_per_batch": 128, "epochs_aden": 1000,
            "epochs_y": 100, "lr_d": 1e-4, "lr_y": 1e-4, "weight_decay": 1e-5,
            "perturb_sigma": 0.01, "autonomy_samples": 16, "ema_lambda": 0.95,
            "epsilon_greedy": 0.1, "epsilon_greedy_final": 0.01,
            "beta_min": 10.0, "beta_max": 50000.0, "tau": 1.1,
        },
        "aden": {
            "hidden_dim": aden_net.hidden_dim, "ff_dim": aden_net.ff_dim,
            "adb_layers": aden_net.adb_layers,
            "attention_heads": aden_net.attention_heads,
            "dropout_rate": aden_net.dropout_rate,
        },
    }


# ---------------------------------------------------------------------------
# Config resolution

def _merge(defaults: dict, override: dict, prefix: str = "") -> dict:
    out = dict(defaults)
    for key, val in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {prefix}{key} must be an object")
            out[key] = _merge(defaults[key], val, f"{prefix}{key}.")
        else:
            out[key] = val
    return out


def _load_config_file(path: str) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _given_flags(args: argparse.Namespace, skip=("command", "config")) -> dict:
    return {k: v for k, v in vars(args).items()
            if v is not None and k not in skip}


def _resolve_learn_defaults(args: argparse.Namespace, file_cfg: dict) -> dict:
    method = args.method or file_cfg.get("method")
    if method is None:
        raise ConfigError("learn requires --method tabular|aden")
    if method == "tabular":
        return _learn_tabular_defaults()
    if method == "aden":
        return _learn_aden_defaults()
    raise ConfigError(f"unknown learn method: {method}")


def resolve_config(args: argparse.Namespace) -> dict:
    """Layer defaults <- config file <- explicit flags; reject unknown keys."""
    command = args.command
    file_cfg = _load_config_file(args.config) if args.config else {}
    recorded = file_cfg.pop("command", None)
    if recorded is not None and recorded != command:
        raise ConfigError(
            f"config file was written by '{recorded}', not '{command}'")
    if command == "solve":
        defaults = _solve_defaults()
    elif command == "phase-scan":
        defaults = _phase_scan_defaults()
    elif command == "learn":
        defaults = _resolve_learn_defaults(args, file_cfg)
    elif command == "benchmark":
        defaults = _benchmark_defaults()
    else:                           # pragma: no cover - argparse guards this
        raise ConfigError(f"unknown command: {command}")
    cfg = _merge(defaults, file_cfg)
    flag_cfg = _given_flags(args)
    for key in flag_cfg:
        if key not in defaults:
            raise ConfigError(
                f"flag --{key.replace('_', '-')} does not apply here")
    cfg.update(flag_cfg)
    cfg["command"] = command
    return cfg


def _resolve_out_dir(cfg: dict) -> Path:
    out = cfg.get("out") or os.environ.get(OUTDIR_ENV) or "."
    cfg["out"] = str(out)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Input construction (errors here are configuration errors)

def _load_dataset(spec: str) -> Dataset:
    name, _, suffix = str(spec).partition(":")
    if name in DATA_PRESETS:
        blobs, per_blob, spread, seed = DATA_PRESETS[name]
        if suffix:
            try:
                per_blob = int(suffix)
            except ValueError:
                raise ConfigError(f"bad preset suffix in {spec!r}") from None
            if per_blob < 1:
                raise ConfigError("points per blob must be >= 1")
        return make_blobs(blobs, per_blob, spread, seed)
    try:
        return read_dataset_csv(spec)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset: {exc}") from None


def _build_autonomy(cfg: dict, data: Dataset) -> AutonomyModel:
    kind = cfg["autonomy"]
    try:
        if kind == "identity":
            return IdentityAutonomy()
        if kind == "parametric":
            return ParametricAutonomy(cfg["kappa"], cfg["gamma"],
                                      cfg["zeta"], cfg["temperature"])
        if kind == "tabular":
            if not cfg["autonomy_file"]:
                raise ConfigError("--autonomy tabular requires --autonomy-file")
            return read_tabular_csv(cfg["autonomy_file"], cfg["k"], data.n)
        if kind == "honor":
            return honor_with_uniform_override(cfg["k"], data.n,
                                               cfg["honor_prob"])
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown autonomy kind: {kind}")


def _build_anneal_config(cfg: dict, data: Dataset) -> AnnealConfig:
    armijo_cfg = cfg.get("armijo", _anneal_defaults()["armijo"])
    try:
        config = AnnealConfig(
            beta_min=cfg["beta_min"], beta_max=cfg["beta_max"], tau=cfg["tau"],
            inner_tol=cfg.get("inner_tol"),
            inner_max_iters=int(cfg.get("inner_max_iters", 1000)),
            noise_scale=cfg.get("noise_scale", 1e-4),
            seed=int(cfg["seed"]),
            inner_path=cfg.get("inner_path", "auto"),
            armijo=ArmijoParams(**armijo_cfg),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg["inner_tol"] = config.resolve_inner_tol(data)
    return replace(config, inner_tol=cfg["inner_tol"])


def _write_resolved_config(cfg: dict, out_dir: Path) -> None:
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    log.info("wrote %s", path)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    log.info("wrote %s", path)


def _solution_dict(data: Dataset, state, autonomy: AutonomyModel,
                   emit_policy: bool) -> dict:
    hard = state.hard_policy if state.hard_policy is not None \
        else harden(state.policy)
    sol = {
        "beta_final": float(state.beta),
        "num_clusters": int(state.clusters.k),
        "centers": [[float(v) for v in row] for row in state.clusters.y],
        "assignments": [int(a) for a in hard.assignments()],
        "cluster_mass": [float(m) for m in state.cluster_mass],
        "free_energy": float(state.free_energy),
        "distortion_soft": objective_D(data, state.clusters, state.policy,
                                       autonomy),
        "distortion_hard": objective_D(data, state.clusters, hard, autonomy),
    }
    if emit_policy:
        sol["policy"] = [[float(p) for p in row] for row in state.policy.probs]
    return sol


# ---------------------------------------------------------------------------
# Command handlers

def _cmd_solve(cfg: dict, out_dir: Path) -> int:
    data = _load_dataset(cfg["data"])
    autonomy = _build_autonomy(cfg, data)
    anneal_cfg = _build_anneal_config(cfg, data)
    _write_resolved_config(cfg, out_dir)
    from .solver import anneal
    state, trace = anneal(data, autonomy, int(cfg["k"]), anneal_cfg)
    trace.to_csv(out_dir / "trace.csv")
    log.info("wrote %s", out_dir / "trace.csv")
    _write_json(out_dir / "solution.json",
                _solution_dict(data, state, autonomy, cfg["emit_policy"]))
    return 0


def _cmd_phase_scan(cfg: dict, out_dir: Path) -> int:
    data = _load_dataset(cfg["data"])
    autonomy = _build_autonomy(cfg, data)
    if autonomy.depends_on_Y:
        raise ConfigError(
            "phase-scan needs an autonomy kernel that does not depend on the "
            "centers; eigenvalue analysis of the fixed-kernel Hessian does "
            "not apply otherwise")
    k = int(cfg["k"])
    max_dim = int(cfg["max_dim"])
    if k * data.dim > max_dim:
        raise ConfigError(
            f"K*d = {k * data.dim} exceeds max_dim = {max_dim}")
    anneal_cfg = _build_anneal_config(cfg, data)
    if cfg["merge_tol"] is None:
        cfg["merge_tol"] = 1e-3 * data.domain_radius
    _write_resolved_config(cfg, out_dir)

    from .solver import anneal
    state, trace = anneal(data, autonomy, k, anneal_cfg)
    events = detect_transitions(trace, cfg["merge_tol"],
                                spike_factor=cfg["spike_factor"],
                                window=int(cfg["window"]))
    trace.to_csv(out_dir / "trace.csv",
                 transition_betas=[e.beta_at for e in events])
    log.info("wrote %s", out_dir / "trace.csv")

    rows = ["beta,lambda_max,beta_cr_estimate,min_hessian_eig,distinct_centers"]
    for t in range(len(trace)):
        clusters = ClusterSet.from_array(trace.clusters[t])
        bundle = assemble_hessian(data, clusters, autonomy, trace.betas[t],
                                  max_dim=max_dim)
        lam = normalized_lambda_max(bundle)
        beta_cr = math.inf if lam <= CRITICAL_EIG_FLOOR else 1.0 / (2.0 * lam)
        min_eig = float(np.linalg.eigvalsh(bundle.hessian)[0])
        distinct = distinct_center_count(trace.clusters[t], cfg["merge_tol"])
        rows.append(",".join([
            format_float(trace.betas[t]), format_float(lam),
            format_float(beta_cr), format_float(min_eig), str(distinct),
        ]))
    (out_dir / "phase_scan.csv").write_text("\n".join(rows) + "\n")
    log.info("wrote %s", out_dir / "phase_scan.csv")

    ev_rows = ["beta,delta_y_norm,distinct_before,distinct_after"]
    for e in events:
        ev_rows.append(",".join([
            format_float(e.beta_at), format_float(e.delta_y_norm),
            str(e.distinct_before), str(e.distinct_after),
        ]))
    (out_dir / "transitions.csv").write_text("\n".join(ev_rows) + "\n")
    log.info("wrote %s (%d events)", out_dir / "transitions.csv", len(events))
    return 0


def _cmd_learn(cfg: dict, out_dir: Path) -> int:
    data = _load_dataset(cfg["data"])
    autonomy = _build_autonomy(cfg, data)
    k = int(cfg["k"])
    if cfg["method"] == "tabular":
        anneal_cfg = _build_anneal_config(
            {**cfg, "inner_tol": None, "inner_max_iters": 1000,
             "noise_scale": 0.0}, data)
        cfg.pop("inner_tol", None)
        try:
            rl_cfg = RlConfig(
                q_c0=cfg["q_c0"], q_exponent=cfg["q_exponent"],
                sgd_alpha=cfg["sgd_alpha"], alpha_decay=cfg["alpha_decay"],
                updates_per_step=int(cfg["updates_per_step"]),
                minibatch=int(cfg["minibatch"]),
                updates_per_beta=int(cfg["updates_per_beta"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _write_resolved_config(cfg, out_dir)
        state, trace = learn_tabular(data, autonomy, k, anneal_cfg, rl_cfg,
                                     reference_autonomy=autonomy)
        trace.to_csv(out_dir / "trace.csv")
        log.info("wrote %s", out_dir / "trace.csv")
        _write_json(out_dir / "solution.json",
                    _solution_dict(data, state, autonomy, False))
        return 0

    # aden
    try:
        train_cfg = TrainConfig(
            batches=int(cfg["batches"]),
            samples_per_batch=int(cfg["samples_per_batch"]),
            epochs_aden=int(cfg["epochs_aden"]),
            epochs_y=int(cfg["epochs_y"]),
            lr_d=cfg["lr_d"], lr_y=cfg["lr_y"],
            weight_decay=cfg["weight_decay"],
            perturb_sigma=cfg["perturb_sigma"],
            autonomy_samples=int(cfg["autonomy_samples"]),
            ema_lambda=cfg["ema_lambda"],
            epsilon_greedy=cfg["epsilon_greedy"],
            epsilon_greedy_final=cfg["epsilon_greedy_final"],
            beta_min=cfg["beta_min"], beta_max=cfg["beta_max"],
            tau=cfg["tau"], seed=int(cfg["seed"]))
        aden_cfg = AdenConfig(
            hidden_dim=int(cfg["hidden_dim"]), ff_dim=int(cfg["ff_dim"]),
            adb_layers=int(cfg["adb_layers"]),
            attention_heads=int(cfg["attention_heads"]),
            dropout_rate=cfg["dropout_rate"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _write_resolved_config(cfg, out_dir)
    reference = autonomy if cfg["track_error"] else None
    state, trace, params, train_log = deep_anneal(
        data, autonomy, k, train_cfg, aden_cfg, reference_autonomy=reference)
    trace.to_csv(out_dir / "trace.csv")
    log.info("wrote %s", out_dir / "trace.csv")

    header = "beta,epoch,loss"
    if train_log and len(train_log[0]) == 4:
        header += ",mean_abs_distance_error"
    lines = [header]
    for row in train_log:
        cells = [format_float(row[0]), str(int(row[1])), format_float(row[2])]
        if len(row) == 4:
            cells.append(format_float(row[3]))
        lines.append(",".join(cells))
    (out_dir / "training_log.csv").write_text("\n".join(lines) + "\n")
    log.info("wrote %s", out_dir / "training_log.csv")

    save_checkpoint(out_dir / "checkpoint.bin", params_to_arrays(params))
    log.info("wrote %s", out_dir / "checkpoint.bin")
    _write_json(out_dir / "solution.json",
                _solution_dict(data, state, autonomy, False))
    return 0


def _parse_grid(path: str) -> list[dict]:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read grid file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, list) or not raw:
        raise ConfigError("grid file must be a non-empty JSON list")
    rows = []
    for idx, entry in enumerate(raw):
        if isinstance(entry, (list, tuple)) and len(entry) == 4:
            kappa, gamma, zeta, temp = entry
        elif isinstance(entry, dict):
            extra = set(entry) - {"kappa", "gamma", "zeta", "T", "temperature"}
            if extra:
                raise ConfigError(
                    f"grid row {idx}: unknown keys {sorted(extra)}")
            if "T" in entry and "temperature" in entry:
                raise ConfigError(f"grid row {idx}: give T once")
            try:
                kappa, gamma, zeta = entry["kappa"], entry["gamma"], entry["zeta"]
                temp = entry["T"] if "T" in entry else entry["temperature"]
            except KeyError as exc:
                raise ConfigError(f"grid row {idx}: missing {exc}") from None
        else:
            raise ConfigError(
                f"grid row {idx}: expected [kappa,gamma,zeta,T] or an object")
        try:
            rows.append({"kappa": float(kappa), "gamma": float(gamma),
                         "zeta": float(zeta), "temperature": float(temp)})
        except (TypeError, ValueError):
            raise ConfigError(f"grid row {idx}: non-numeric entry") from None
    return rows


def _build_benchmark_configs(cfg: dict, data: Dataset) -> BenchmarkConfigs:
    seed = int(cfg["seed"])
    try:
        section = dict(cfg["anneal"])
        armijo = ArmijoParams(**section.pop("armijo"))
        anneal_cfg = AnnealConfig(**section, seed=seed, armijo=armijo)
        rl_cfg = RlConfig(**cfg["rl"])
        train_cfg = TrainConfig(**cfg["train"], seed=seed)
        aden_cfg = AdenConfig(**cfg["aden"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg["anneal"]["inner_tol"] = anneal_cfg.resolve_inner_tol(data)
    anneal_cfg = AnnealConfig(
        beta_min=anneal_cfg.beta_min, beta_max=anneal_cfg.beta_max,
        tau=anneal_cfg.tau, inner_tol=cfg["anneal"]["inner_tol"],
        inner_max_iters=anneal_cfg.inner_max_iters,
        noise_scale=anneal_cfg.noise_scale, seed=seed, armijo=armijo)
    return BenchmarkConfigs(anneal=anneal_cfg, rl=rl_cfg,
                            train=train_cfg, aden=aden_cfg)


def _benchmark_row(task):
    """Worker for one grid row; must stay importable for process pools."""
    index, scenario, methods, configs = task
    try:
        return index, run_benchmark(scenario, methods, configs), None
    except Exception as exc:
        return index, [], f"{type(exc).__name__}: {exc}"


def _cmd_benchmark(cfg: dict, out_dir: Path) -> int:
    if not cfg["grid"]:
        raise ConfigError("benchmark requires --grid")
    grid = _parse_grid(cfg["grid"])
    methods = tuple(m.strip() for m in cfg["methods"].split(",") if m.strip())
    unknown = set(methods) - set(KNOWN_METHODS)
    if not methods or unknown:
        raise ConfigError(
            f"--methods must name a subset of {', '.join(KNOWN_METHODS)}")
    data = _load_dataset(cfg["data"])
    k = int(cfg["k"])
    configs = _build_benchmark_configs(cfg, data)
    _write_resolved_config(cfg, out_dir)

    tasks = []
    for idx, row in enumerate(grid):
        try:
            scenario = parametric_scenario(
                row["kappa"], row["gamma"], row["zeta"], row["temperature"],
                dataset=data, num_clusters=k)
        except ValueError as exc:
            raise ConfigError(f"grid row {idx}: {exc}") from None
        tasks.append((idx, scenario, methods, configs))
    jobs = max(1, int(cfg["jobs"]))
    if jobs == 1 or len(tasks) == 1:
        results = [_benchmark_row(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_benchmark_row, tasks))
    results.sort(key=lambda r: r[0])

    all_reports, failures = [], []
    for idx, reports, error in results:
        if error is not None:
            log.error("grid row %d failed: %s", idx, error)
            failures.append({"index": idx, "error": error})
        all_reports.extend(reports)

    gap_columns = ["aden", "ignored"]
    if "tabular_rl" in methods:
        gap_columns.append("tabular_rl")
    lines = ["kappa,gamma,zeta,T,"
             + ",".join(f"{c}_gap" for c in gap_columns)]
    for idx, row in enumerate(grid):
        by_method = {r.method: r for r in results[idx][1]}
        cells = [format_float(row["kappa"]), format_float(row["gamma"]),
                 format_float(row["zeta"]), format_float(row["temperature"])]
        for col in gap_columns:
            rep = by_method.get(col)
            cells.append("" if rep is None else format_float(rep.gap_percent))
        lines.append(",".join(cells))
    (out_dir / "gaps.csv").write_text("\n".join(lines) + "\n")
    log.info("wrote %s", out_dir / "gaps.csv")

    _write_json(out_dir / "gaps.json", {
        "reports": [r.to_dict() for r in all_reports],
        "failed_rows": failures,
    })
    if not all_reports:
        print("error: every grid row failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Parser

def _add_common(p: argparse.ArgumentParser, autonomy: bool = True) -> None:
    p.add_argument("--data", help="dataset CSV path or preset "
                   "(blobs4, blobs16, optionally name:points_per_blob)")
    p.add_argument("--k", type=int, help="number of clusters")
    p.add_argument("--seed", type=int, help="global RNG seed")
    p.add_argument("--out", help=f"output directory (default ${OUTDIR_ENV} "
                   "or the current directory)")
    p.add_argument("--config", help="JSON config file; flags override it")
    if autonomy:
        p.add_argument("--autonomy",
                       choices=["identity", "parametric", "tabular", "honor"])
        p.add_argument("--autonomy-file", dest="autonomy_file",
                       help="override-kernel CSV (i,j,k,p) for --autonomy tabular")
        p.add_argument("--kappa", type=float, help="override probability")
        p.add_argument("--gamma", type=float,
                       help="entity-distance weight in the override cost")
        p.add_argument("--zeta", type=float,
                       help="center-distance weight in the override cost")
        p.add_argument("--temperature", type=float,
                       help="override softmax temperature")
        p.add_argument("--honor-prob", dest="honor_prob", type=float,
                       help="compliance probability for --autonomy honor")


def _add_anneal(p: argparse.ArgumentParser, inner: bool = True) -> None:
    p.add_argument("--beta-min", dest="beta_min", type=float)
    p.add_argument("--beta-max", dest="beta_max", type=float)
    p.add_argument("--tau", type=float, help="geometric beta multiplier")
    if inner:
        p.add_argument("--inner-tol", dest="inner_tol", type=float)
        p.add_argument("--inner-max-iters", dest="inner_max_iters", type=int)
        p.add_argument("--noise-scale", dest="noise_scale", type=float)
        p.add_argument("--inner-path", dest="inner_path",
                       choices=["auto", "armijo"],
                       help="per-stage solver: safeguarded fixed point or "
                            "pure Armijo descent")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoclust",
        description="Autonomy-aware clustering: annealed solvers, phase "
                    "analysis, model-free learners and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="annealed clustering with a known kernel")
    _add_common(p)
    _add_anneal(p)
    p.add_argument("--emit-policy", dest="emit_policy", action="store_const",
                   const=True, help="include the soft policy in solution.json")

    p = sub.add_parser("phase-scan",
                       help="anneal plus per-beta eigenvalue analysis")
    _add_common(p)
    _add_anneal(p)
    p.add_argument("--merge-tol", dest="merge_tol", type=float,
                   help="center-merge tolerance (default 1e-3 * radius)")
    p.add_argument("--spike-factor", dest="spike_factor", type=float)
    p.add_argument("--window", type=int, help="transition detection window")
    p.add_argument("--max-dim", dest="max_dim", type=int,
                   help="largest K*d the eigensolver accepts")

    p = sub.add_parser("learn", help="model-free learners (sampled kernel)")
    _add_common(p)
    _add_anneal(p, inner=False)
    p.add_argument("--method", choices=["tabular", "aden"])
    p.add_argument("--q-c0", dest="q_c0", type=float)
    p.add_argument("--q-exponent", dest="q_exponent", type=float)
    p.add_argument("--sgd-alpha", dest="sgd_alpha", type=float)
    p.add_argument("--alpha-decay", dest="alpha_decay", type=float)
    p.add_argument("--updates-per-step", dest="updates_per_step", type=int)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--updates-per-beta", dest="updates_per_beta", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--samples-per-batch", dest="samples_per_batch", type=int)
    p.add_argument("--epochs-aden", dest="epochs_aden", type=int)
    p.add_argument("--epochs-y", dest="epochs_y", type=int)
    p.add_argument("--lr-d", dest="lr_d", type=float)
    p.add_argument("--lr-y", dest="lr_y", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--sigma", dest="perturb_sigma", type=float,
                   help="center perturbation scale")
    p.add_argument("--autonomy-samples", dest="autonomy_samples", type=int)
    p.add_argument("--ema-lambda", dest="ema_lambda", type=float)
    p.add_argument("--epsilon", dest="epsilon_greedy", type=float)
    p.add_argument("--epsilon-final", dest="epsilon_greedy_final", type=float)
    p.add_argument("--d-h", dest="hidden_dim", type=int)
    p.add_argument("--d-ff", dest="ff_dim", type=int)
    p.add_argument("--layers", dest="adb_layers", type=int)
    p.add_argument("--heads", dest="attention_heads", type=int)
    p.add_argument("--dropout", dest="dropout_rate", type=float)
    p.add_argument("--track-error", dest="track_error", action="store_const",
                   const=True,
                   help="log the mean absolute error against the exact costs")

    p = sub.add_parser("benchmark", help="gap benchmark over a scenario grid")
    _add_common(p, autonomy=False)
    p.add_argument("--grid", help="JSON list of {kappa,gamma,zeta,T} rows")
    p.add_argument("--methods", help="comma-separated subset of "
                   + ",".join(KNOWN_METHODS))
    p.add_argument("--jobs", type=int, help="parallel workers across rows")
    return parser


_HANDLERS = {
    "solve": _cmd_solve,
    "phase-scan": _cmd_phase_scan,
    "learn": _cmd_learn,
    "benchmark": _cmd_benchmark,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out_dir = _resolve_out_dir(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[cfg["command"]](cfg, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
