"""Experiment harness: train PFD pipelines, evaluate every method, aggregate sweeps.

A :class:`PipelineConfig` fully determines one trained student (workloads,
genie runs and offline training are all derived from its ``seed``). An
:class:`ExperimentConfig` sweeps one field of it and evaluates the student
against the closed-form baselines on fresh workloads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import runtime as rt
from .nn import DenseNet, TrainConfig, TrainHistory, load_net, save_net
from .pfd import (PfdDataset, gen_student_training_data, gen_teacher_training_data,
                  train_student_offline, train_teacher_offline)
from .workload import hetero_spec, homogeneous_spec, sample_hetero, sample_series

SWEEPS = ("trial_length", "jumps_k", "alpha", "num_types")
RESULT_COLUMNS = ("sweep_value", "method", "mean_mse", "std_mse", "runs", "frames")
TEST_LOSS_ROW = "student_test_loss"
HETERO_TOTAL = 192

RESULTS_JSON_SCHEMA = {
    "type": "object",
    "required": ["columns", "rows"],
    "properties": {
        "columns": {"const": list(RESULT_COLUMNS)},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(RESULT_COLUMNS),
                "additionalProperties": False,
                "properties": {
                    "sweep_value": {"type": ["number", "string"]},
                    "method": {"type": "string"},
                    "mean_mse": {"type": "number"},
                    "std_mse": {"type": "number"},
                    "runs": {"type": "integer", "minimum": 1},
                    "frames": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


class MissingArtifactError(FileNotFoundError):
    pass


def derive_seed(base: int, *tags: int) -> int:
    """Independent 32-bit seed for a (base, tags...) task, stable across runs."""
    return int(np.random.SeedSequence([base, *tags]).generate_state(1)[0])


@dataclass
class PipelineConfig:
    """Everything needed to build one teacher/student pair and its budget plan.

    ``budget`` is the BB length (homogeneous) or the 3-SS-BB block count
    (heterogeneous). ``n_max`` defaults to 64 homogeneous, ``192 // T`` otherwise.
    """

    num_types: int = 1
    budget: int = 100
    num_lof: int = 3
    l_lof: int = 8
    stay_prob: float = 0.2
    jumps: int = 5
    n_max: int | None = None
    alpha: float = 0.1
    teacher_frames: int = 10_000
    student_frames: int = 10_000
    genie_lr: float = 1e-3
    dtype: str = "float64"
    permute_slots: bool = False
    teacher_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        max_epochs=2500, patience=50, restore_best=True))
    student_train: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=500))
    seed: int = 0

    @property
    def resolved_n_max(self) -> int:
        if self.n_max is not None:
            return self.n_max
        return 64 if self.num_types == 1 else HETERO_TOTAL // self.num_types

    def plan(self) -> rt.BudgetPlan:
        if self.num_types == 1:
            return rt.equalize_homo(self.budget, self.num_lof, self.l_lof, self.resolved_n_max)
        return rt.equalize_hetero(self.budget, self.num_types, self.num_lof, self.l_lof,
                                  self.resolved_n_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        for key in ("teacher_train", "student_train"):
            if isinstance(d.get(key), dict):
                d[key] = TrainConfig(**d[key])
        return cls(**d)

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def full_profile(num_types: int = 1, **overrides) -> PipelineConfig:
    frames = 10_000 if num_types == 1 else 20_000
    cfg = PipelineConfig(num_types=num_types, teacher_frames=frames, student_frames=frames)
    return replace(cfg, **overrides)


def desk_profile(num_types: int = 1, **overrides) -> PipelineConfig:
    cfg = PipelineConfig(
        num_types=num_types, teacher_frames=10_000, student_frames=5000, dtype="float32",
        permute_slots=True,
        teacher_train=TrainConfig(batch_size=128, max_epochs=300, patience=20, restore_best=True),
        student_train=TrainConfig(batch_size=128, max_epochs=100, patience=30, restore_best=True))
    return replace(cfg, **overrides)


PROFILES = {"full": full_profile, "desk": desk_profile}
EVAL_SCALE = {"full": (20, 2000), "desk": (5, 500)}


def make_workload(cfg: PipelineConfig, frames: int, seed: int, jumps: int | None = None) -> np.ndarray:
    """Active-node series, shape ``(frames,)`` homogeneous or ``(frames, T)``."""
    jumps = cfg.jumps if jumps is None else jumps
    if cfg.num_types == 1:
        spec = homogeneous_spec(cfg.stay_prob, jumps, cfg.resolved_n_max)
        return sample_series(spec, None, frames, seed)
    spec = hetero_spec(cfg.num_types, cfg.stay_prob, jumps, cfg.resolved_n_max * cfg.num_types)
    seeds = [derive_seed(seed, b) for b in range(cfg.num_types)]
    return sample_hetero(spec, cfg.num_types, seeds, None, frames)


@dataclass
class TrainedPipeline:
    config: PipelineConfig
    teacher: DenseNet
    student: DenseNet
    teacher_history: TrainHistory
    student_history: TrainHistory
    teacher_data: PfdDataset | None = None
    student_data: PfdDataset | None = None

    @property
    def student_test_loss(self) -> float:
        return self.student_history.test_loss[self.student_history.best_epoch]


def pipeline_seeds(cfg: PipelineConfig) -> dict:
    s = cfg.seed
    return {"teacher_workload": derive_seed(s, 1), "teacher_trials": derive_seed(s, 2),
            "student_workload": derive_seed(s, 3), "student_trials": derive_seed(s, 4),
            "genie_init": derive_seed(s, 5), "teacher_init": derive_seed(s, 6),
            "student_init": derive_seed(s, 7), "teacher_split": derive_seed(s, 8),
            "student_split": derive_seed(s, 9)}


def build_teacher(cfg: PipelineConfig, keep_data: bool = False):
    seeds = pipeline_seeds(cfg)
    protocol = cfg.plan().protocol()
    dtype = np.dtype(cfg.dtype)
    workload = make_workload(cfg, cfg.teacher_frames + 1, seeds["teacher_workload"])
    data = gen_teacher_training_data(workload, protocol, seeds["teacher_trials"],
                                     seeds["genie_init"], cfg.genie_lr, dtype)
    tcfg = replace(cfg.teacher_train, seed=seeds["teacher_split"])
    teacher, hist = train_teacher_offline(data, tcfg, seeds["teacher_init"], dtype,
                                          cfg.permute_slots)
    return teacher, hist, (data if keep_data else None)


def build_student(cfg: PipelineConfig, teacher: DenseNet, keep_data: bool = False):
    seeds = pipeline_seeds(cfg)
    protocol = cfg.plan().protocol()
    dtype = np.dtype(cfg.dtype)
    workload = make_workload(cfg, cfg.student_frames + 1, seeds["student_workload"])
    data = gen_student_training_data(workload, protocol, teacher, cfg.alpha,
                                     seeds["student_trials"], seeds["genie_init"],
                                     cfg.genie_lr, dtype)
    scfg = replace(cfg.student_train, seed=seeds["student_split"], mixing_alpha=cfg.alpha)
    student, hist = train_student_offline(teacher, data, scfg, seeds["student_init"], dtype,
                                          cfg.permute_slots)
    return student, hist, (data if keep_data else None)


def train_pipeline(cfg: PipelineConfig, keep_data: bool = False) -> TrainedPipeline:
    teacher, t_hist, t_data = build_teacher(cfg, keep_data)
    student, s_hist, s_data = build_student(cfg, teacher, keep_data)
    return TrainedPipeline(cfg, teacher, student, t_hist, s_hist, t_data, s_data)


def methods_for(num_types: int) -> tuple[str, ...]:
    if num_types == 1:
        return (rt.NN, rt.SRCS, rt.BB_AWARE)
    return (rt.NN, rt.T_SRCS, rt.T_BB_AWARE)


_BASELINES = {rt.SRCS: rt.srcs_online, rt.BB_AWARE: rt.bb_aware_online,
              rt.T_SRCS: rt.t_srcs_online, rt.T_BB_AWARE: rt.t_bb_aware_online}


def run_method(method: str, student: DenseNet | None, workload, plan: rt.BudgetPlan,
               seed: int) -> rt.RunResult:
    if method == rt.NN:
        if student is None:
            raise MissingArtifactError("the nn method needs a trained student")
        return rt.nn_online(student, workload, plan, seed)
    return _BASELINES[method](workload, plan, seed)


def evaluate(cfg: PipelineConfig, student: DenseNet | None, runs: int, frames: int,
             seed: int, methods: Sequence[str] | None = None, jumps: int | None = None,
             trace_dir=None) -> dict[str, list[float]]:
    """Per-run mean normalized MSE of every method on shared fresh workloads."""
    plan = cfg.plan()
    methods = methods_for(cfg.num_types) if methods is None else tuple(methods)
    out = {m: [] for m in methods}
    for r in range(runs):
        workload = make_workload(cfg, frames, derive_seed(seed, 100, r), jumps)
        for i, m in enumerate(methods):
            res = run_method(m, student, workload, plan, derive_seed(seed, 200 + i, r))
            out[m].append(res.mean_normalized_mse)
            if trace_dir is not None:
                Path(trace_dir).mkdir(parents=True, exist_ok=True)
                res.write_trace(Path(trace_dir) / f"trace_{m}_run{r}.csv")
    return out


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float | str
    method: str
    mean_mse: float
    std_mse: float
    runs: int
    frames: int


@dataclass
class ExperimentConfig:
    pipeline: PipelineConfig
    sweep: str
    values: list
    runs: int = 20
    frames: int = 2000
    seeds: list = field(default_factory=lambda: [0])
    reuse_model: bool = False
    eval_seed: int = 12345

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if self.runs < 1 or self.frames < 1 or not self.seeds:
            raise ValueError("runs and frames must be >= 1 and seeds nonempty")

    def point_config(self, value, seed: int) -> PipelineConfig:
        """Pipeline used to train the student for one sweep point."""
        base = replace(self.pipeline, seed=seed)
        if self.sweep == "trial_length":
            return replace(base, budget=int(value))
        if self.sweep == "jumps_k":
            return base if self.reuse_model else replace(base, jumps=int(value))
        if self.sweep == "alpha":
            return replace(base, alpha=float(value))
        return replace(base, num_types=int(value), n_max=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pipeline"] = self.pipeline.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["pipeline"] = PipelineConfig.from_dict(d["pipeline"])
        return cls(**d)


def aggregate(value, method, per_run: list[float], frames: int) -> ResultRow:
    arr = np.asarray(per_run, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return ResultRow(value, method, float(arr.mean()), std, len(arr), frames)


def teacher_key(cfg: PipelineConfig) -> str:
    """Key over the fields a teacher depends on (not alpha or student settings)."""
    return replace(cfg, alpha=0.0, student_frames=0, student_train=TrainConfig()).key()


class ModelStore:
    """Trained pipelines keyed by config, optionally mirrored to ``root`` on disk.

    Teachers are shared between pipelines that differ only in student settings.
    """

    def __init__(self, root=None, train_missing: bool = True):
        self.root = None if root is None else Path(root)
        self.train_missing = train_missing
        self._pipelines: dict[str, TrainedPipeline] = {}
        self._teachers: dict[str, tuple[DenseNet, TrainHistory]] = {}

    def _path(self, kind: str, key: str) -> Path | None:
        if self.root is None:
            return None
        return self.root / f"{kind}_{hashlib.sha256(key.encode()).hexdigest()[:16]}.json"

    def _load(self, kind: str, key: str) -> DenseNet | None:
        path = self._path(kind, key)
        if path is not None and path.exists():
            return load_net(path)
        if not self.train_missing:
            raise MissingArtifactError(f"no trained {kind} at {path}")
        return None

    def _save(self, kind: str, key: str, net: DenseNet) -> None:
        path = self._path(kind, key)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_net(net, path)

    def teacher(self, cfg: PipelineConfig) -> tuple[DenseNet, TrainHistory]:
        key = teacher_key(cfg)
        if key not in self._teachers:
            net = self._load("teacher", key)
            if net is not None:
                self._teachers[key] = (net, TrainHistory())
            else:
                net, hist, _ = build_teacher(cfg)
                self._save("teacher", key, net)
                self._teachers[key] = (net, hist)
        return self._teachers[key]

    def get(self, cfg: PipelineConfig) -> TrainedPipeline:
        key = cfg.key()
        if key not in self._pipelines:
            student = self._load("student", key)
            teacher, t_hist = self.teacher(cfg)
            s_hist = TrainHistory()
            if student is None:
                student, s_hist, _ = build_student(cfg, teacher)
                self._save("student", key, student)
            self._pipelines[key] = TrainedPipeline(cfg, teacher, student, t_hist, s_hist)
        return self._pipelines[key]


def run_experiment(config: ExperimentConfig, store: ModelStore | None = None,
                   progress=None) -> list[ResultRow]:
    """Train (or fetch) one student per sweep point and seed, then evaluate all methods.

    Per-run means are pooled over seeds, so ``runs`` in each row is
    ``len(seeds) * config.runs``. Alpha sweeps add a ``student_test_loss``
    row holding the held-out distillation objective of each student.
    """
    store = store or ModelStore()
    rows: list[ResultRow] = []
    for value in config.values:
        pooled: dict[str, list[float]] = {}
        test_losses = []
        for seed in config.seeds:
            pcfg = config.point_config(value, seed)
            tp = store.get(pcfg)
            jumps = int(value) if config.sweep == "jumps_k" else None
            res = evaluate(pcfg, tp.student, config.runs, config.frames,
                           derive_seed(config.eval_seed, seed), jumps=jumps)
            for m, v in res.items():
                pooled.setdefault(m, []).extend(v)
            if tp.student_history.test_loss:
                test_losses.append(tp.student_test_loss)
            if progress is not None:
                progress(value, seed, {m: float(np.mean(v)) for m, v in res.items()})
        for m, v in pooled.items():
            rows.append(aggregate(value, m, v, config.frames))
        if config.sweep == "alpha" and test_losses:
            rows.append(aggregate(value, TEST_LOSS_ROW, test_losses, 0))
    return rows


def mse_by_method(rows: Sequence[ResultRow], value=None) -> dict[str, float]:
    return {r.method: r.mean_mse for r in rows if value is None or r.sweep_value == value}


# -- results I/O -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(s: str):
    try:
        f = float(s)
    except ValueError:
        return s
    return int(f) if f.is_integer() and "." not in s and "e" not in s.lower() else f


def emit_results(rows: Sequence[ResultRow], fmt: str, path) -> Path:
    """Write results with stable column order; floats use ``repr`` so reload is exact."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_COLUMNS)
            for r in rows:
                w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
    elif fmt == "json":
        doc = {"columns": list(RESULT_COLUMNS), "rows": [asdict(r) for r in rows]}
        path.write_text(json.dumps(doc, indent=2) + "\n")
    else:
        raise ValueError(f"unknown results format {fmt!r}")
    return path


def load_results(path) -> list[ResultRow]:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("columns") != list(RESULT_COLUMNS):
            raise ValueError(f"unexpected columns {doc.get('columns')!r}")
        return [ResultRow(**row) for row in doc["rows"]]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"unexpected header {header!r}")
        return [ResultRow(_parse_value(v), m, float(mu), float(sd), int(n), int(f))
                for v, m, mu, sd, n, f in reader]


def write_loss_curve(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "test_loss"])
        for e, (tr, te) in enumerate(zip(history.train_loss, history.test_loss), start=1):
            w.writerow([e, repr(float(tr)), repr(float(te))])


def read_loss_curve(path) -> TrainHistory:
    hist = TrainHistory()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            hist.train_loss.append(float(row["train_loss"]))
            hist.test_loss.append(float(row["test_loss"]))
    if hist.test_loss:
        hist.best_epoch = int(np.argmin(hist.test_loss))
    return hist


def plot_table(rows: Sequence[ResultRow]) -> tuple[list[str], list[list]]:
    """Pivot to one line per sweep value with ``<method>_mean`` / ``<method>_std`` columns."""
    methods = list(dict.fromkeys(r.method for r in rows))
    values = list(dict.fromkeys(r.sweep_value for r in rows))
    cell = {(r.sweep_value, r.method): r for r in rows}
    header = ["sweep_value"] + [f"{m}_{s}" for m in methods for s in ("mean", "std")]
    table = []
    for v in values:
        line = [v]
        for m in methods:
            r = cell.get((v, m))
            line += [r.mean_mse, r.std_mse] if r else [math.nan, math.nan]
        table.append(line)
    return header, table
