"""Seed sweeps, beta sweeps, data-budget curves and the CSV files they emit."""
from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import STRATEGIES, Session, TaskData, TrainConfig, make_data, preset_config
from .errors import ConfigParse, EmptyRange, InvalidInput, IoError

DEFAULT_BETAS = (0.0, 0.1, 1.0, 2.0, 5.0)
TOY_PRESETS = ("toy", "toy-star", "toy-doublestar")
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
# full-size datasets for the two budget curves: (n_weak, n_strong)
BUDGET_SIZES = {"weak": (100, 50), "strong": (100, 10)}


def parse_seeds(text: str) -> list[int]:
    """``"1..10"``, ``"1,2,5"`` or a mix such as ``"0..3,7"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ConfigParse(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif re.fullmatch(r"-?\d+", part):
            seeds.append(int(part))
        else:
            raise ConfigParse(f"bad seed list token {part!r}")
    return seeds


def parse_floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigParse(f"bad {name} list {text!r}") from exc
    if not vals:
        raise ConfigParse(f"{name} list is empty")
    return vals


def check_fractions(fractions) -> list[float]:
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise InvalidInput("fraction list is empty")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise EmptyRange(f"fraction {f} is outside (0, 1]")
    return fractions


def mean_sd(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), sd


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# ---------------------------------------------------------------- per-seed jobs

def _grid_job(config: dict, strategies, seed, overrides=None):
    cfg = TrainConfig.from_dict({**config, "seed": seed})
    sess = Session(cfg)
    return [sess.run(s, **(overrides or {})).metric for s in strategies]


def _beta_job(config: dict, betas, seed):
    sess = Session(TrainConfig.from_dict({**config, "seed": seed}))
    return [sess.run("FWL", beta=b).metric for b in betas]


def _budget_job(config: dict, curve, fractions, strategies, seed):
    cfg = TrainConfig.from_dict({**config, "seed": seed})
    full = make_data(cfg)
    base = Session(cfg, full)
    out = []
    for f in fractions:
        data = budget_data(full, curve, f)
        # the weak set is fixed along the strong curve, so pretraining is shared
        sess = base.with_strong(data.strong) if curve == "strong" else Session(cfg, data)
        out.append([sess.run(s).metric for s in strategies])
    return out


def _fwls_job(config: dict, fractions, epochs, seed):
    sess = Session(TrainConfig.from_dict({**config, "seed": seed}))
    return [[sess.run(s, soft_fraction=f, epochs_finetune=epochs).metric for s in ("FWL", "FWL_s")]
            for f in fractions]


def budget_data(full: TaskData, curve: str, fraction: float) -> TaskData:
    """Prefix of the weak or the strong set; prefixes of i.i.d. draws nest."""
    if curve not in BUDGET_SIZES:
        raise InvalidInput(f"unknown budget curve {curve!r}")
    if curve == "weak":
        m = max(1, int(round(fraction * full.weak.n)))
        return TaskData(full.weak.head(m), full.strong, full.test, full.annotator, full.task)
    m = max(1, int(round(fraction * full.strong.n)))
    return TaskData(full.weak, full.strong.head(m), full.test, full.annotator, full.task)


# ---------------------------------------------------------------- experiments

@dataclass
class Table:
    header: list
    rows: list

    def column(self, name) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


def run_grid(config: TrainConfig, strategies, seeds, workers: int = 1):
    """Per-seed and aggregate tables of the test metric for each strategy."""
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigParse(f"unknown strategy {s!r}")
    if not seeds:
        raise InvalidInput("seed list is empty")
    h = config.digest()
    res = _map(_grid_job, [(config.to_dict(), list(strategies), s) for s in seeds], workers)
    per_seed = Table(["strategy", "seed", "metric", "config_hash"],
                     [[st, seed, r[i], h] for i, st in enumerate(strategies)
                      for seed, r in zip(seeds, res)])
    agg = Table(["strategy", "n_seeds", "mean", "sd", "config_hash"], [])
    for i, st in enumerate(strategies):
        m, sd = mean_sd([r[i] for r in res])
        agg.rows.append([st, len(seeds), m, sd, h])
    return per_seed, agg


def sweep_beta(presets=TOY_PRESETS, betas=DEFAULT_BETAS, seeds=range(10),
               overrides: dict | None = None, workers: int = 1):
    """FWL test metric for each beta on each preset."""
    betas = [float(b) for b in betas]
    if not betas:
        raise InvalidInput("beta list is empty")
    seeds = list(seeds)
    per_seed = Table(["preset", "beta", "seed", "metric", "config_hash"], [])
    agg = Table(["preset", "beta", "n_seeds", "mean", "sd", "config_hash"], [])
    for preset in presets:
        cfg = preset_config(preset, **(overrides or {}))
        h = cfg.digest()
        res = _map(_beta_job, [(cfg.to_dict(), betas, s) for s in seeds], workers)
        for j, b in enumerate(betas):
            vals = [r[j] for r in res]
            per_seed.rows.extend([preset, b, s, v, h] for s, v in zip(seeds, vals))
            agg.rows.append([preset, b, len(seeds), *mean_sd(vals), h])
    return per_seed, agg


def budget_curve(curve: str, fractions=DEFAULT_FRACTIONS, seeds=range(10),
                 config: TrainConfig | None = None, strategies=("FWL", "NN_WtoS"),
                 workers: int = 1):
    """Metric against the fraction of weak (strong fixed) or strong (weak fixed) data."""
    fractions = check_fractions(fractions)
    if curve not in BUDGET_SIZES:
        raise InvalidInput(f"unknown budget curve {curve!r}")
    seeds = list(seeds)
    if config is None:
        n_weak, n_strong = BUDGET_SIZES[curve]
        config = preset_config("toy", n_weak=n_weak, n_strong=n_strong)
    h = config.digest()
    res = _map(_budget_job, [(config.to_dict(), curve, fractions, list(strategies), s)
                             for s in seeds], workers)
    per_seed = Table(["curve", "fraction", "strategy", "seed", "metric", "config_hash"], [])
    agg = Table(["curve", "fraction", "strategy", "n_seeds", "mean", "sd", "config_hash"], [])
    for i, f in enumerate(fractions):
        for j, st in enumerate(strategies):
            vals = [r[i][j] for r in res]
            per_seed.rows.extend([curve, f, st, s, v, h] for s, v in zip(seeds, vals))
            agg.rows.append([curve, f, st, len(seeds), *mean_sd(vals), h])
    return per_seed, agg


def fwl_vs_fwls(fractions=DEFAULT_FRACTIONS, seeds=range(10), config: TrainConfig | None = None,
                epochs: int | None = None, workers: int = 1):
    """FWL and FWL_s trained on growing subsamples of the soft set."""
    fractions = check_fractions(fractions)
    seeds = list(seeds)
    config = config if config is not None else preset_config("toy")
    epochs = config.epochs_finetune if epochs is None else int(epochs)
    h = config.digest()
    res = _map(_fwls_job, [(config.to_dict(), fractions, epochs, s) for s in seeds], workers)
    per_seed = Table(["fraction", "seed", "fwl", "fwl_s", "config_hash"], [])
    agg = Table(["fraction", "n_seeds", "fwl_mean", "fwl_sd", "fwl_s_mean", "fwl_s_sd",
                 "config_hash"], [])
    for i, f in enumerate(fractions):
        a = [r[i][0] for r in res]
        b = [r[i][1] for r in res]
        per_seed.rows.extend([f, s, x, y, h] for s, x, y in zip(seeds, a, b))
        agg.rows.append([f, len(seeds), *mean_sd(a), *mean_sd(b), h])
    return per_seed, agg


# ---------------------------------------------------------------- output

def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_table(path, table: Table) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(table.header)
            w.writerows([_cell(v) for v in row] for row in table.rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_table(path) -> Table:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return Table(rows[0], rows[1:])
