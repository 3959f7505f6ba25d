"""``fwl`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .engine import (STRATEGIES, Session, TaskData, TrainConfig, evaluate, make_data,
                     make_soft_dataset, soft_pool, step1_pretrain, step2_fit_teacher,
                     step3_finetune)
from .errors import ConfigParse, FwlError, IoError
from .gp import load_teacher, save_teacher
from .student import load_net, save_net
from .weak import read_csv, write_csv

PRESET_NAMES = ("toy", "toy-star", "toy-doublestar", "synth-class")


# ---------------------------------------------------------------- config

def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def config_dict(args) -> dict:
    """Config file, then ``--preset``, ``--set`` pairs and dedicated flags on top."""
    d = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                d = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigParse(f"{args.config}: {exc.msg} at line {exc.lineno}") from exc
        if not isinstance(d, dict):
            raise ConfigParse(f"{args.config}: expected a JSON object")
    if getattr(args, "preset", None):
        d["preset"] = args.preset
    for pair in getattr(args, "set", None) or []:
        key, sep, val = pair.partition("=")
        if not sep:
            raise ConfigParse(f"--set expects key=value, got {pair!r}")
        d[key.strip()] = _value(val)
    if getattr(args, "beta", None) is not None:
        d["beta"] = args.beta
    strategy = getattr(args, "strategy", None)
    if strategy and "," not in strategy:
        d["strategy"] = strategy
    return d


def load_config(args, **fixed) -> TrainConfig:
    """Preset defaults under the merged ``config_dict``; ``fixed`` wins over both."""
    return TrainConfig.from_dict({**config_dict(args), **fixed})


def strategies_arg(text: str | None, default) -> list[str]:
    if not text:
        return list(default)
    names = [s.strip() for s in text.split(",") if s.strip()]
    for s in names:
        if s not in STRATEGIES:
            raise ConfigParse(f"unknown strategy {s!r}")
    return names


def out_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".fwl-write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"output directory {path} is not writable: {exc.strerror or exc}") from exc
    return path


def _write_text(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _data(args, cfg: TrainConfig) -> TaskData:
    """Datasets from ``--data``/``--test`` CSV files, else drawn from the config."""
    drawn = make_data(cfg)
    if not getattr(args, "data", None):
        return drawn
    sets = read_csv(args.data)
    test = read_csv(args.test)["strong"] if getattr(args, "test", None) else drawn.test
    return TaskData(sets["weak"], sets["strong"], test, drawn.annotator, drawn.task)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    cfg = load_config(args)
    out = out_dir(args.out)
    for seed in ex.parse_seeds(args.seeds):
        d = make_data(cfg.replace(seed=seed))
        write_csv(out / f"data_seed{seed}.csv", d.weak, d.strong)
        write_csv(out / f"test_seed{seed}.csv", d.test)
        print(f"seed {seed}: {d.weak.n} weak, {d.strong.n} strong, {d.test.n} test")


def cmd_run(args):
    cfg = load_config(args)
    strategies = strategies_arg(args.strategy, [cfg.strategy])
    seeds = ex.parse_seeds(args.seeds)
    out = out_dir(args.out)
    values = {s: [] for s in strategies}
    for seed in seeds:
        sess = Session(cfg.replace(seed=seed))
        for s in strategies:
            rep = sess.run(s)
            _write_text(out / f"{s}_seed{seed}.json", rep.to_json())
            values[s].append(rep.metric)
            print(f"{s} seed {seed}: {next(iter(rep.metrics))} = {rep.metric:.6g}")
    agg = {}
    for s, v in values.items():
        m, sd = ex.mean_sd(v)
        agg[s] = {"n_seeds": len(v), "mean": m, "sd": sd, "seeds": seeds, "values": v}
    _write_text(out / "aggregate.json", json.dumps(
        {"config_hash": cfg.digest(), "strategies": agg}, indent=2, sort_keys=True))


def cmd_grid(args):
    cfg = load_config(args)
    strategies = strategies_arg(args.strategy, STRATEGIES)
    out = out_dir(args.out)
    per_seed, agg = ex.run_grid(cfg, strategies, ex.parse_seeds(args.seeds), args.workers)
    ex.write_table(out / "grid_seeds.csv", per_seed)
    ex.write_table(out / "grid.csv", agg)
    _print_table(agg)


def cmd_sweep_beta(args):
    betas = ex.parse_floats(args.betas, "beta")
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    overrides = config_dict(args)
    overrides.pop("preset", None)
    overrides.pop("beta", None)
    load_config(args)  # validate before the long run
    out = out_dir(args.out)
    per_seed, agg = ex.sweep_beta(presets, betas, ex.parse_seeds(args.seeds), overrides,
                                  args.workers)
    ex.write_table(out / "sweep_beta_seeds.csv", per_seed)
    ex.write_table(out / "sweep_beta.csv", agg)
    _print_table(agg)


def cmd_budget_curve(args):
    fractions = ex.parse_floats(args.fractions, "fraction")
    curves = ("weak", "strong") if args.curve == "both" else (args.curve,)
    out = out_dir(args.out)
    for curve in curves:
        n_weak, n_strong = ex.BUDGET_SIZES[curve]
        cfg = load_config(args, n_weak=n_weak, n_strong=n_strong)
        per_seed, agg = ex.budget_curve(curve, fractions, ex.parse_seeds(args.seeds), cfg,
                                        workers=args.workers)
        ex.write_table(out / f"budget_{curve}_seeds.csv", per_seed)
        ex.write_table(out / f"budget_{curve}.csv", agg)
        _print_table(agg)


def cmd_fwl_vs_fwls(args):
    cfg = load_config(args)
    fractions = ex.parse_floats(args.fractions, "fraction")
    out = out_dir(args.out)
    per_seed, agg = ex.fwl_vs_fwls(fractions, ex.parse_seeds(args.seeds), cfg, args.epochs,
                                   args.workers)
    ex.write_table(out / "fwl_vs_fwls_seeds.csv", per_seed)
    ex.write_table(out / "fwl_vs_fwls.csv", agg)
    _print_table(agg)


def cmd_pretrain(args):
    cfg = load_config(args).replace(seed=ex.parse_seeds(args.seeds)[0])
    d = _data(args, cfg)
    out = out_dir(args.out)
    r = step1_pretrain(cfg, d.weak)
    save_net(out / "student.npz", r.net)
    print(f"pretrained: final loss {r.losses[-1]:.6g}" if r.losses else "pretrained: 0 epochs")


def cmd_fit_teacher(args):
    cfg = load_config(args).replace(seed=ex.parse_seeds(args.seeds)[0])
    d = _data(args, cfg)
    out = out_dir(args.out)
    teacher = step2_fit_teacher(load_net(args.student), d.strong, cfg)
    save_teacher(out / "teacher.npz", teacher)
    print(f"teacher: {teacher.k} cluster(s) on {d.strong.n} strong samples")


def cmd_soft_label(args):
    cfg = load_config(args).replace(seed=ex.parse_seeds(args.seeds)[0])
    d = _data(args, cfg)
    out = out_dir(args.out)
    net = load_net(args.student)
    soft = make_soft_dataset(load_teacher(args.teacher), net, soft_pool(d), cfg)
    write_csv(out / "soft.csv", soft)
    print(f"soft set: {soft.n} samples, mean sigma {soft.confidences.mean():.6g}")


def cmd_finetune(args):
    cfg = load_config(args).replace(seed=ex.parse_seeds(args.seeds)[0])
    d = _data(args, cfg)
    out = out_dir(args.out)
    soft = read_csv(args.soft)["soft"]
    r = step3_finetune(load_net(args.student), soft, cfg, sampling=args.sampling)
    save_net(out / "finetuned.npz", r.net)
    metric = evaluate(r.net, d.test, d.task)
    name = "rmse" if cfg.task == "regression" else "macro_f1"
    _write_text(out / "finetune.json", json.dumps(
        {"config": cfg.to_dict(), "metrics": {name: metric}, "traces": {"finetune": r.losses}},
        indent=2, sort_keys=True))
    print(f"{name} = {metric:.6g}")


def _print_table(t):
    print(",".join(t.header))
    for row in t.rows:
        print(",".join(ex._cell(v) for v in row))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fwl", description="Fidelity-weighted learning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, seeds="0", strategy=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", choices=PRESET_NAMES)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
        sp.add_argument("--beta", type=float)
        if strategy:
            sp.add_argument("--strategy", help="strategy name or comma-separated list")
        sp.add_argument("--seeds", default=seeds, help='e.g. "1..10" or "1,2,3"')
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        sp.set_defaults(fn=fn)
        return sp

    add("gen-data", cmd_gen_data, "write datasets as CSV", strategy=False)
    add("run", cmd_run, "run strategies; one JSON report per (strategy, seed)")
    add("grid", cmd_grid, "strategy x seed grid to CSV", seeds="0..9")
    sp = add("sweep-beta", cmd_sweep_beta, "FWL over beta on the toy presets", seeds="0..9",
             strategy=False)
    sp.add_argument("--betas", default=",".join(str(b) for b in ex.DEFAULT_BETAS))
    sp.add_argument("--presets", default=",".join(ex.TOY_PRESETS))
    sp = add("budget-curve", cmd_budget_curve, "metric vs weak or strong data fraction",
             seeds="0..9", strategy=False)
    sp.add_argument("--fractions", default=",".join(str(f) for f in ex.DEFAULT_FRACTIONS))
    sp.add_argument("--curve", choices=("weak", "strong", "both"), default="both")
    sp = add("fwl-vs-fwls", cmd_fwl_vs_fwls, "FWL vs FWL_s over soft-set fractions",
             seeds="0..9", strategy=False)
    sp.add_argument("--fractions", default=",".join(str(f) for f in ex.DEFAULT_FRACTIONS))
    sp.add_argument("--epochs", type=int, help="fine-tuning epochs (default from config)")

    for name, fn, help_ in (("pretrain", cmd_pretrain, "step 1: train the student on weak data"),
                            ("fit-teacher", cmd_fit_teacher, "step 2: fit the clustered GP"),
                            ("soft-label", cmd_soft_label, "step 2: write the soft dataset"),
                            ("finetune", cmd_finetune, "step 3: fidelity-weighted fine-tuning")):
        sp = add(name, fn, help_, strategy=False)
        sp.add_argument("--data", help="CSV from gen-data (default: draw from config)")
        sp.add_argument("--test", help="test CSV from gen-data")
        if name != "pretrain":
            sp.add_argument("--student", required=True, help="student checkpoint (.npz)")
        if name == "soft-label":
            sp.add_argument("--teacher", required=True, help="teacher file (.npz)")
        if name == "finetune":
            sp.add_argument("--soft", required=True, help="soft dataset CSV")
            sp.add_argument("--sampling", action="store_true",
                            help="confidence-proportional sampling instead of step scaling")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except FwlError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"Io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
