"""Multi-round active-learning loop, experiment config, and report output.

Each round refits the classifier on the current labeled set, caches
class probabilities for every point once, scores accuracy on the
remaining pool and on a held-out evaluation split, then hands the pool
to the configured selector and moves the picked points into the labeled
set.  Reports are JSON documents validated against the shipped schema,
with a flat plot-data CSV written alongside.
"""

from __future__ import annotations

import importlib.resources
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, relax, rounding
from .data import Dataset, generate_blobs, load_dataset
from .errors import ConfigError
from .fisher import FisherContext
from .logistic import fit, predict_accuracy, prob_table
from .relax import RelaxConfig
from .rounding import RoundConfig, default_eta_grid

__all__ = [
    "ExperimentConfig",
    "config_from_mapping",
    "firal_select",
    "load_schema",
    "parse_config_file",
    "run_experiment",
    "validate_report",
    "write_report",
]

SOLVERS = ("exact", "approx", "random", "kmeans", "entropy")


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs; JSON-serializable fields only."""

    solver: str = "approx"
    rounds: int = 1
    budget: int = 10
    seed: int = 0
    init_per_class: int = 1
    eval_fraction: float = 0.5
    data_path: str | None = None
    synthetic_classes: int = 3
    synthetic_dim: int = 5
    synthetic_per_class: int = 100
    synthetic_spread: float = 0.3
    synthetic_imbalance: float = 1.0
    eta_grid: list | None = None
    relax: RelaxConfig = field(default_factory=RelaxConfig)
    out: str | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must lie in [0, 1)")
        if self.init_per_class < 1:
            raise ConfigError("init_per_class must be >= 1")


_CONFIG_KEYS = {
    "solver": str,
    "rounds": int,
    "budget": int,
    "seed": int,
    "init_per_class": int,
    "eval_fraction": float,
    "data": str,
    "classes": int,
    "dim": int,
    "per_class": int,
    "spread": float,
    "imbalance": float,
    "eta_grid": str,
    "s": int,
    "cg_tol": float,
    "cg_max_iter": int,
    "max_md_iters": int,
    "obj_rel_tol": float,
    "beta0": float,
    "out": str,
    "threads": int,
}

_KEY_TO_FIELD = {
    "data": "data_path",
    "classes": "synthetic_classes",
    "dim": "synthetic_dim",
    "per_class": "synthetic_per_class",
    "spread": "synthetic_spread",
    "imbalance": "synthetic_imbalance",
}

_RELAX_KEYS = {
    "s": "num_probes",
    "cg_tol": "cg_tol",
    "cg_max_iter": "cg_max_iter",
    "max_md_iters": "max_iters",
    "obj_rel_tol": "obj_rel_tol",
    "beta0": "beta0",
}


def parse_config_file(path):
    """Read a flat key=value config file into a raw mapping.

    Blank lines and ``#`` comments are skipped; unknown keys and
    malformed values are reported with their line number.
    """
    raw = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                raw[key] = _CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return raw


def config_from_mapping(raw):
    """Build an ExperimentConfig from raw flat keys (file plus overrides)."""
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    relax_kwargs = {}
    cfg_kwargs = {}
    for key, value in raw.items():
        if key in _RELAX_KEYS:
            relax_kwargs[_RELAX_KEYS[key]] = value
        elif key == "eta_grid":
            try:
                cfg_kwargs["eta_grid"] = [float(v) for v in str(value).split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError(f"bad eta_grid: {value!r}") from exc
        else:
            cfg_kwargs[_KEY_TO_FIELD.get(key, key)] = value
    try:
        relax_cfg = RelaxConfig(**relax_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seed = cfg_kwargs.get("seed")
    if seed is not None:
        relax_cfg = replace(relax_cfg, seed=seed)
    return ExperimentConfig(relax=relax_cfg, **cfg_kwargs)


def load_schema():
    text = importlib.resources.files("firalkit").joinpath("report_schema.json").read_text()
    return json.loads(text)


def validate_report(report):
    import jsonschema

    jsonschema.validate(report, load_schema())


def _stratified_eval_split(labels, fraction, rng):
    eval_idx = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = int(round(fraction * members.size))
        eval_idx.append(rng.permutation(members)[:take])
    eval_idx = np.sort(np.concatenate(eval_idx)) if eval_idx else np.empty(0, np.int64)
    train_mask = np.ones(labels.size, dtype=bool)
    train_mask[eval_idx] = False
    return np.flatnonzero(train_mask), eval_idx


def _initial_labeled(labels, train_idx, per_class, rng):
    chosen = []
    for c in np.unique(labels[train_idx]):
        members = train_idx[labels[train_idx] == c]
        if members.size < per_class:
            raise ConfigError(
                f"class {c} has only {members.size} training points, need {per_class}"
            )
        chosen.append(rng.permutation(members)[:per_class])
    return np.sort(np.concatenate(chosen))


def firal_select(ctx, budget, relax_cfg, eta_grid=None, exact=False):
    """Run the relax-then-round pipeline and return (indices, stats)."""
    grid = eta_grid if eta_grid is not None else default_eta_grid(ctx.stacked_dim, budget)
    round_cfg = RoundConfig(np.asarray(grid, dtype=np.float64), budget)
    if exact:
        z_scaled, trace = relax.solve_exact(ctx, budget, relax_cfg)
        rounder = lambda eta: rounding.round_exact(ctx, z_scaled, eta, budget)
    else:
        z_scaled, trace = relax.solve_fast(ctx, budget, relax_cfg)
        rounder = lambda eta: rounding.round_blockdiag(ctx, z_scaled, round_cfg, eta)
    eta, records = rounding.tune_eta(ctx, z_scaled, round_cfg, rounder=rounder)
    selected = next(r["result"].selected for r in records if r["eta"] == eta)
    stats = {
        "relax_iterations": trace.iterations,
        "relax_stopped_early": trace.stopped_early,
        "objective_first": trace.objectives[0],
        "objective_last": trace.objectives[-1],
        "cg_iterations_total": int(sum(trace.cg_iterations)),
        "eta": eta,
        "eta_min_eigs": {f"{r['eta']:.6g}": r["min_eig"] for r in records},
    }
    return np.asarray(selected, dtype=np.int64), stats


def _select(solver, ctx, table, pool_idx, budget, relax_cfg, eta_grid, seed):
    if solver == "random":
        return baselines.random_select(pool_idx, budget, seed), {}
    if solver == "kmeans":
        return baselines.kmeans_select(ctx.features, pool_idx, budget, seed), {}
    if solver == "entropy":
        return baselines.entropy_select(table, pool_idx, budget), {}
    cfg = replace(relax_cfg, seed=seed)
    return firal_select(ctx, budget, cfg, eta_grid=eta_grid, exact=(solver == "exact"))


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None):
    """Run the configured multi-round loop and return the report dict.

    When ``cfg.out`` is set the report is also written as JSON with a
    plot-data CSV next to it.  Identical config and seed reproduce the
    report exactly, timing fields aside.
    """
    master = np.random.SeedSequence(cfg.seed)
    data_ss, split_ss, init_ss, rounds_ss = master.spawn(4)

    source = cfg.data_path or "synthetic"
    if dataset is None:
        if cfg.data_path is not None:
            dataset = load_dataset(cfg.data_path)
        else:
            dataset = generate_blobs(
                cfg.synthetic_classes,
                cfg.synthetic_dim,
                cfg.synthetic_per_class,
                spread=cfg.synthetic_spread,
                imbalance=cfg.synthetic_imbalance,
                seed=int(data_ss.generate_state(1)[0]),
            )
    if dataset.labels is None:
        raise ConfigError("active learning requires a labeled dataset")
    features = dataset.features
    labels = dataset.labels
    num_classes = dataset.num_classes
    if num_classes < 2:
        raise ConfigError("dataset must contain at least two classes")

    train_idx, eval_idx = _stratified_eval_split(
        labels, cfg.eval_fraction, np.random.default_rng(split_ss)
    )
    labeled = _initial_labeled(labels, train_idx, cfg.init_per_class, np.random.default_rng(init_ss))
    pool = np.setdiff1d(train_idx, labeled)
    if cfg.budget * cfg.rounds > pool.size:
        raise ConfigError(
            f"budget*rounds = {cfg.budget * cfg.rounds} exceeds the initial pool ({pool.size})"
        )
    round_seeds = [int(ss.generate_state(1)[0]) for ss in rounds_ss.spawn(cfg.rounds)]

    rounds_out = []
    for r in range(cfg.rounds):
        t0 = time.perf_counter()
        fitres = fit(features[labeled], labels[labeled], num_classes)
        table = prob_table(fitres.weights, features)
        pool_acc = predict_accuracy(fitres.weights, features[pool], labels[pool])
        eval_acc = (
            predict_accuracy(fitres.weights, features[eval_idx], labels[eval_idx])
            if eval_idx.size
            else 0.0
        )
        ctx = FisherContext(features, table.probs, labeled, pool)
        selected, stats = _select(
            cfg.solver, ctx, table, pool, cfg.budget, cfg.relax, cfg.eta_grid, round_seeds[r]
        )
        seconds = time.perf_counter() - t0
        rounds_out.append(
            {
                "round": r,
                "n_labeled": int(labeled.size),
                "pool_size": int(pool.size),
                "pool_accuracy": float(pool_acc),
                "eval_accuracy": float(eval_acc),
                "selected": [int(i) for i in selected],
                "stats": stats,
                "seconds": float(seconds),
            }
        )
        labeled = np.sort(np.concatenate([labeled, selected]))
        pool = np.setdiff1d(pool, selected)

    fitres = fit(features[labeled], labels[labeled], num_classes)
    final_pool_acc = (
        predict_accuracy(fitres.weights, features[pool], labels[pool]) if pool.size else 1.0
    )
    final_eval_acc = (
        predict_accuracy(fitres.weights, features[eval_idx], labels[eval_idx])
        if eval_idx.size
        else 0.0
    )

    report = {
        "schema_version": 1,
        "solver": cfg.solver,
        "seed": cfg.seed,
        "dataset": {
            "n_points": int(features.shape[0]),
            "dim": int(features.shape[1]),
            "num_classes": int(num_classes),
            "eval_size": int(eval_idx.size),
            "source": source,
        },
        "config": {
            "budget": cfg.budget,
            "rounds": cfg.rounds,
            "init_per_class": cfg.init_per_class,
            "eval_fraction": cfg.eval_fraction,
            "num_probes": cfg.relax.num_probes,
            "cg_tol": cfg.relax.cg_tol,
            "max_md_iters": cfg.relax.max_iters,
            "obj_rel_tol": cfg.relax.obj_rel_tol,
            "beta0": cfg.relax.beta0,
            "eta_grid": cfg.eta_grid,
        },
        "rounds": rounds_out,
        "final": {
            "n_labeled": int(labeled.size),
            "pool_size": int(pool.size),
            "pool_accuracy": float(final_pool_acc),
            "eval_accuracy": float(final_eval_acc),
        },
    }
    validate_report(report)
    if cfg.out:
        write_report(report, cfg.out)
    return report


def write_report(report, out_path):
    """Write the JSON report plus the plot-data CSV next to it."""
    out_path = str(out_path)
    with open(out_path, "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    csv_path = out_path[:-5] + ".csv" if out_path.endswith(".json") else out_path + ".csv"
    with open(csv_path, "w") as f:
        f.write("round,n_labeled,method,pool_accuracy,eval_accuracy\n")
        for row in report["rounds"]:
            f.write(
                f"{row['round']},{row['n_labeled']},{report['solver']},"
                f"{row['pool_accuracy']:.10g},{row['eval_accuracy']:.10g}\n"
            )
        final = report["final"]
        f.write(
            f"{report['config']['rounds']},{final['n_labeled']},{report['solver']},"
            f"{final['pool_accuracy']:.10g},{final['eval_accuracy']:.10g}\n"
        )
