"""Command-line front end: ``python -m pfd_cardinality <command> [--config file.toml]``.

Settings resolve in order: profile defaults, TOML config, command-line flags.
Every command prints the seeds it actually used on a ``seeds:`` line.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .nn import load_net, save_net
from .pfd import (export_dataset_csv, gen_student_training_data, gen_teacher_training_data,
                  load_dataset, save_dataset, train_student_offline, train_teacher_offline)
from .workload import load_series_csv, save_series_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _pick(*values):
    for v in values:
        if v is not None:
            return v
    return None


def pipeline_from(cfg: dict, args) -> bench.PipelineConfig:
    """Merge profile, TOML sections and CLI overrides into one pipeline config."""
    wl, proto = cfg.get("workload", {}), cfg.get("protocol", {})
    tr, ex = cfg.get("training", {}), cfg.get("experiment", {})
    profile = _pick(getattr(args, "profile", None), "desk" if getattr(args, "desk", False) else None,
                    tr.get("profile"), ex.get("profile"), "full")
    T = int(_pick(getattr(args, "types", None), proto.get("T"), 1))
    base = bench.PROFILES[profile](T)

    n_states = _pick(getattr(args, "states", None), wl.get("N"))
    seeds = _pick(getattr(args, "seeds", None), tr.get("seeds"), [0])
    seed = _pick(getattr(args, "seed", None), seeds[0])
    alpha = float(_pick(getattr(args, "alpha", None), tr.get("alpha"), base.alpha))

    def train_cfg(tc, epochs_key):
        return replace(
            tc,
            learning_rate=float(_pick(getattr(args, "lr", None), tr.get("lr"), tc.learning_rate)),
            batch_size=int(_pick(getattr(args, "batch", None), tr.get("batch"), tc.batch_size)),
            max_epochs=int(_pick(getattr(args, "epochs", None), tr.get(epochs_key), tc.max_epochs)),
            train_fraction=float(_pick(tr.get("split"), tc.train_fraction)),
            patience=_pick(tr.get("patience"), tc.patience),
        )

    student_train = train_cfg(base.student_train, "epochs")
    early = _pick(getattr(args, "early_stop", None), tr.get("early_stop"))
    if early is not None:
        student_train = replace(student_train, early_stop_epoch=int(early))

    return replace(
        base,
        budget=int(_pick(getattr(args, "l", None), proto.get("l"), base.budget)),
        num_lof=int(_pick(proto.get("num_lof"), base.num_lof)),
        l_lof=int(_pick(proto.get("l_lof"), base.l_lof)),
        stay_prob=float(_pick(getattr(args, "q", None), wl.get("q"), base.stay_prob)),
        jumps=int(_pick(getattr(args, "k", None), wl.get("k"), base.jumps)),
        n_max=None if n_states is None else int(n_states) - 1,
        alpha=alpha,
        teacher_frames=int(_pick(getattr(args, "teacher_frames", None),
                                 tr.get("teacher_frames"), base.teacher_frames)),
        student_frames=int(_pick(getattr(args, "student_frames", None),
                                 tr.get("student_frames"), base.student_frames)),
        dtype=str(_pick(tr.get("dtype"), base.dtype)),
        permute_slots=bool(_pick(tr.get("permute_slots"), base.permute_slots)),
        teacher_train=train_cfg(base.teacher_train, "teacher_epochs"),
        student_train=student_train,
        seed=int(seed),
    )


def experiment_from(cfg: dict, args) -> bench.ExperimentConfig:
    ex, tr = cfg.get("experiment", {}), cfg.get("training", {})
    pipeline = pipeline_from(cfg, args)
    profile = "desk" if pipeline.dtype == "float32" else "full"
    runs0, frames0 = bench.EVAL_SCALE[profile]
    sweep = _pick(args.sweep, ex.get("sweep"))
    values = _pick(args.values, ex.get("values"))
    if sweep is None or values is None:
        raise SystemExit("sweep needs a sweep variable and values (flags or [experiment])")
    return bench.ExperimentConfig(
        pipeline=pipeline, sweep=sweep, values=list(values),
        runs=int(_pick(args.runs, ex.get("runs"), runs0)),
        frames=int(_pick(args.frames, ex.get("frames"), frames0)),
        seeds=[int(s) for s in _pick(args.seeds, tr.get("seeds"), [0])],
        reuse_model=bool(_pick(args.reuse_model, ex.get("reuse_model"), False)),
        eval_seed=int(_pick(args.eval_seed, ex.get("eval_seed"), 12345)),
    )


def _number(text: str):
    value = float(text)
    return int(value) if value.is_integer() else value


def print_seeds(seeds: dict) -> None:
    print("seeds: " + json.dumps(seeds, sort_keys=True))


def _workload_or_generate(args, pcfg, frames, seed):
    if args.workload:
        return load_series_csv(args.workload)
    return bench.make_workload(pcfg, frames, seed)


# -- commands ----------------------------------------------------------------------

def cmd_gen_workload(args, cfg):
    pcfg = pipeline_from(cfg, args)
    wl = cfg.get("workload", {})
    frames = int(_pick(args.frames, wl.get("frames"), 2001))
    seed = int(_pick(args.seed, wl.get("seed"), 0))
    print_seeds({"workload": seed})
    save_series_csv(bench.make_workload(pcfg, frames, seed), args.out)
    print(f"wrote {frames} frames to {args.out}")


def cmd_gen_teacher_data(args, cfg):
    pcfg = pipeline_from(cfg, args)
    seeds = bench.pipeline_seeds(pcfg)
    print_seeds({"pipeline": pcfg.seed, **{k: seeds[k] for k in (
        "teacher_workload", "teacher_trials", "genie_init")}})
    workload = _workload_or_generate(args, pcfg, pcfg.teacher_frames + 1, seeds["teacher_workload"])
    ds = gen_teacher_training_data(workload, pcfg.plan().protocol(), seeds["teacher_trials"],
                                   seeds["genie_init"], pcfg.genie_lr, np.dtype(pcfg.dtype))
    save_dataset(ds, args.out)
    if args.csv:
        export_dataset_csv(ds, args.csv)
    print(f"wrote {len(ds)} teacher records to {args.out}")


def cmd_train_teacher(args, cfg):
    pcfg = pipeline_from(cfg, args)
    seeds = bench.pipeline_seeds(pcfg)
    print_seeds({"pipeline": pcfg.seed, "teacher_split": seeds["teacher_split"],
                 "teacher_init": seeds["teacher_init"]})
    ds = load_dataset(args.data)
    tcfg = replace(pcfg.teacher_train, seed=seeds["teacher_split"])
    net, hist = train_teacher_offline(ds, tcfg, seeds["teacher_init"], np.dtype(pcfg.dtype),
                                      pcfg.permute_slots)
    save_net(net, args.out)
    if args.loss_curve:
        bench.write_loss_curve(hist, args.loss_curve)
    print(f"teacher: {hist.epochs} epochs, best test loss {hist.test_loss[hist.best_epoch]:.3e}")


def cmd_gen_student_data(args, cfg):
    pcfg = pipeline_from(cfg, args)
    seeds = bench.pipeline_seeds(pcfg)
    print_seeds({"pipeline": pcfg.seed, **{k: seeds[k] for k in (
        "student_workload", "student_trials", "genie_init")}})
    teacher = load_net(args.teacher)
    workload = _workload_or_generate(args, pcfg, pcfg.student_frames + 1, seeds["student_workload"])
    ds = gen_student_training_data(workload, pcfg.plan().protocol(), teacher, pcfg.alpha,
                                   seeds["student_trials"], seeds["genie_init"], pcfg.genie_lr,
                                   np.dtype(pcfg.dtype))
    save_dataset(ds, args.out)
    if args.csv:
        export_dataset_csv(ds, args.csv)
    print(f"wrote {len(ds)} student records to {args.out}")


def cmd_train_student(args, cfg):
    pcfg = pipeline_from(cfg, args)
    seeds = bench.pipeline_seeds(pcfg)
    print_seeds({"pipeline": pcfg.seed, "student_split": seeds["student_split"],
                 "student_init": seeds["student_init"]})
    ds = load_dataset(args.data)
    teacher = load_net(args.teacher)
    scfg = replace(pcfg.student_train, seed=seeds["student_split"], mixing_alpha=pcfg.alpha)
    net, hist = train_student_offline(teacher, ds, scfg, seeds["student_init"],
                                      np.dtype(pcfg.dtype), pcfg.permute_slots)
    save_net(net, args.out)
    if args.loss_curve:
        bench.write_loss_curve(hist, args.loss_curve)
    print(f"student: {hist.epochs} epochs, best test loss {hist.test_loss[hist.best_epoch]:.3e}")


def cmd_evaluate(args, cfg):
    pcfg = pipeline_from(cfg, args)
    ex = cfg.get("experiment", {})
    runs0, frames0 = bench.EVAL_SCALE["desk" if pcfg.dtype == "float32" else "full"]
    runs = int(_pick(args.runs, ex.get("runs"), runs0))
    frames = int(_pick(args.frames, ex.get("frames"), frames0))
    eval_seed = int(_pick(args.eval_seed, ex.get("eval_seed"), 12345))
    print_seeds({"eval": eval_seed})
    student = load_net(args.student) if args.student else None
    methods = args.methods or [m for m in bench.methods_for(pcfg.num_types)
                               if student is not None or m != "nn"]
    res = bench.evaluate(pcfg, student, runs, frames, eval_seed, methods,
                         trace_dir=args.trace_dir)
    rows = [bench.aggregate(pcfg.budget, m, v, frames) for m, v in res.items()]
    for r in rows:
        print(f"{r.method:>12s}  mean {r.mean_mse:.4e}  std {r.std_mse:.2e}")
    if args.out:
        bench.emit_results(rows, args.format, args.out)


def cmd_sweep(args, cfg):
    if args.manifest:
        exp = bench.ExperimentConfig.from_dict(json.loads(Path(args.manifest).read_text()))
    else:
        exp = experiment_from(cfg, args)
    print_seeds({"pipelines": exp.seeds, "eval": exp.eval_seed})
    store = bench.ModelStore(args.model_dir, train_missing=not args.no_train)

    def progress(value, seed, means):
        text = "  ".join(f"{m} {v:.3e}" for m, v in means.items())
        print(f"{exp.sweep}={value} seed={seed}: {text}", flush=True)

    rows = bench.run_experiment(exp, store, progress)
    bench.emit_results(rows, args.format, args.out)
    manifest = Path(args.out).with_suffix(".manifest.json")
    manifest.write_text(json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} rows to {args.out} and manifest {manifest}")


def cmd_emit_plots(args, cfg):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print_seeds({})
    for path in args.results:
        header, table = bench.plot_table(bench.load_results(path))
        target = out_dir / f"{Path(path).stem}_plot.csv"
        with open(target, "w") as fh:
            fh.write(",".join(header) + "\n")
            for line in table:
                fh.write(",".join(bench._fmt(v) for v in line) + "\n")
        print(f"wrote {target}")
    for path in args.loss_curves or []:
        hist = bench.read_loss_curve(path)
        target = out_dir / f"{Path(path).stem}_plot.csv"
        bench.write_loss_curve(hist, target)
        print(f"wrote {target}")


# -- parser -------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--profile", choices=sorted(bench.PROFILES))
    p.add_argument("--desk", action="store_true", help="shorthand for --profile desk")
    p.add_argument("--types", type=int, help="number of node types T")
    p.add_argument("--l", type=int, help="BB length or 3-SS-BB block count")
    p.add_argument("--k", type=int, help="DTMC steps per frame")
    p.add_argument("--q", type=float, help="DTMC stay probability")
    p.add_argument("--states", type=int, help="DTMC states N (n_max = N - 1)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--early-stop", type=int)
    p.add_argument("--teacher-frames", type=int)
    p.add_argument("--student-frames", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfd-cardinality")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-workload", help="sample a DTMC workload CSV")
    _common(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("gen-teacher-data", help="genie-teacher dataset (JSONL + sidecar)")
    _common(p)
    p.add_argument("--workload", help="workload CSV (generated from the seed if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export a flat CSV")
    p.set_defaults(func=cmd_gen_teacher_data)

    p = sub.add_parser("train-teacher", help="offline teacher training")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-curve")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("gen-student-data", help="genie-student dataset using a trained teacher")
    _common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--workload")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_gen_student_data)

    p = sub.add_parser("train-student", help="offline student distillation")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-curve")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="online evaluation of the student and baselines")
    _common(p)
    p.add_argument("--student")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--runs", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--trace-dir")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train and evaluate across a sweep variable")
    _common(p)
    p.add_argument("--sweep", choices=bench.SWEEPS)
    p.add_argument("--values", type=_number, nargs="+")
    p.add_argument("--runs", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--reuse-model", action="store_true", default=None)
    p.add_argument("--manifest", help="replay a sweep from a written manifest")
    p.add_argument("--model-dir")
    p.add_argument("--no-train", action="store_true", help="fail if models are missing")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("emit-plots", help="pivot results and loss curves into plot-ready CSV")
    p.add_argument("--config")
    p.add_argument("--results", nargs="+", default=[])
    p.add_argument("--loss-curves", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_emit_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    args.func(args, cfg)
    return 0
