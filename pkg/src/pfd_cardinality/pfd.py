"""Privileged-feature-distillation pipeline: genie data generation and offline training.

A *genie* is a throwaway net fitted online, one Adam step per frame, whose
predictions drive the rough estimates of the trials so that the logged data
looks like what a deployed estimator would see. The logged frames are then
shuffled and used to train fresh teacher and student nets offline.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import features as fc
from .nn import (Adam, DenseNet, TrainConfig, TrainHistory, backward, distill_grad,
                 estimator_architecture, fit_dataset, forward, forward_cached, init_net,
                 loss_distill, loss_mse, split_indices)
from .protocols import lof_rough_estimate, run_3ssbb, run_bb
from .workload import as_2d

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ProtocolConfig:
    """Trial geometry shared by data generation and online estimation.

    ``num_types == 1`` is the homogeneous setting (BB trial of ``l`` slots);
    otherwise a 3-SS-BB trial of ``l`` blocks of ``T - 1`` slots.
    """

    l: int = 100
    num_types: int = 1
    n_max: int = 64
    num_lof: int = 3
    l_lof: int = 8

    def __post_init__(self):
        if self.l < 1 or self.num_types < 1 or self.n_max < 1:
            raise ValueError(f"invalid protocol config {self}")

    @property
    def hetero(self) -> bool:
        return self.num_types > 1

    @property
    def student_size(self) -> int:
        if self.hetero:
            return fc.het_student_size(self.l, self.num_types)
        return fc.homo_student_size(self.l)

    @property
    def teacher_size(self) -> int:
        if self.hetero:
            return fc.het_teacher_size(self.l, self.num_types)
        return fc.homo_teacher_size(self.l)

    @property
    def scaling(self) -> dict:
        return {"n_max": float(self.n_max), "T": self.num_types}


class LayoutMismatchError(ValueError):
    pass


@dataclass
class FrameTrial:
    """Result of the per-frame trial in both feature views."""

    student: np.ndarray
    teacher: np.ndarray
    slots: int


def run_frame_trial(cfg: ProtocolConfig, n_active, rough, prev_estimate, prev_truth,
                    rng: np.random.Generator) -> FrameTrial:
    n_active = np.atleast_1d(n_active)
    rough = np.atleast_1d(rough)
    if cfg.hetero:
        trial = run_3ssbb(n_active, cfg.l, rough, rng)
        stu = fc.encode_3ssbb_student(trial.outcomes, prev_estimate, cfg.n_max)
        tr = fc.encode_3ssbb_teacher(trial.type_counts, prev_truth, cfg.n_max)
        return FrameTrial(stu.values, tr.values, trial.slots)
    trial = run_bb(int(n_active[0]), cfg.l, float(rough[0]), rng)
    stu = fc.encode_bb_student(trial.outcomes, float(np.ravel(prev_estimate)[0]), cfg.n_max)
    tr = fc.encode_bb_teacher(trial.counts, float(np.ravel(prev_truth)[0]), cfg.n_max)
    return FrameTrial(stu.values, tr.values, trial.length)


def initial_rough(cfg: ProtocolConfig, n_active, rng: np.random.Generator) -> np.ndarray:
    """Per-type LoF rough estimates used at frame 0."""
    return np.array([lof_rough_estimate(int(n), cfg.num_lof, cfg.l_lof, rng)
                     for n in np.atleast_1d(n_active)])


def clamp_estimate(values, n_max: float) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=float), 0.0, n_max)


def as_rough(estimate) -> np.ndarray:
    """Estimates reused as BB rough estimates are floored at one node."""
    return np.maximum(estimate, 1.0)


@dataclass
class FrameRecord:
    frame_index: int
    student_features: np.ndarray | None
    teacher_features: np.ndarray
    target: np.ndarray
    rough: np.ndarray
    prev_estimate: np.ndarray


@dataclass
class PfdDataset:
    """Logged frames stored column-wise; ``dataset[i]`` gives a :class:`FrameRecord`."""

    protocol: ProtocolConfig
    frame_index: np.ndarray
    teacher_x: np.ndarray
    target: np.ndarray
    rough: np.ndarray
    prev_estimate: np.ndarray
    student_x: np.ndarray | None = None
    generation: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frame_index)

    def __getitem__(self, i) -> FrameRecord:
        return FrameRecord(int(self.frame_index[i]),
                           None if self.student_x is None else self.student_x[i],
                           self.teacher_x[i], self.target[i], self.rough[i],
                           self.prev_estimate[i])

    def records(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def has_student_features(self) -> bool:
        return self.student_x is not None


# -- generation ----------------------------------------------------------------

def _check_workload(workload, cfg: ProtocolConfig) -> np.ndarray:
    arr = as_2d(workload)
    if arr.shape[1] != cfg.num_types:
        raise LayoutMismatchError(
            f"workload has {arr.shape[1]} types, protocol expects {cfg.num_types}")
    if len(arr) < 2:
        raise ValueError("need at least two frames (frame 0 is not logged)")
    if arr.min() < 0 or arr.max() > cfg.n_max:
        raise ValueError(f"workload values must lie in [0, {cfg.n_max}]")
    return arr


def _empty_dataset(cfg, frames, with_student, generation) -> PfdDataset:
    T = cfg.num_types
    return PfdDataset(
        protocol=cfg,
        frame_index=np.arange(1, frames + 1),
        teacher_x=np.empty((frames, cfg.teacher_size)),
        target=np.empty((frames, T), dtype=np.int64),
        rough=np.empty((frames, T)),
        prev_estimate=np.empty((frames, T)),
        student_x=np.empty((frames, cfg.student_size)) if with_student else None,
        generation=generation,
    )


def _predict_then_fit(genie: DenseNet, opt: Adam, x, target, alpha: float = 1.0) -> np.ndarray:
    """Genie prediction for this frame, followed by one online Adam step on it."""
    out, cache = forward_cached(genie, x)
    target = np.asarray(target, dtype=genie.dtype).reshape(1, -1)
    opt.step(genie, backward(genie, out, cache, distill_grad(out, target, alpha)))
    return out[0]


def gen_teacher_training_data(workload, cfg: ProtocolConfig, seed: int, genie_seed: int = 0,
                              genie_lr: float = 1e-3, dtype=np.float64) -> PfdDataset:
    """Log ``((V_t, truth_{t-1}), truth_t)`` while a genie teacher drives the rough estimates."""
    truth = _check_workload(workload, cfg)
    n_max = float(cfg.n_max)
    rng = np.random.default_rng(seed)
    genie = init_net(*estimator_architecture(cfg.teacher_size, cfg.num_types), seed=genie_seed,
                     scaling=cfg.scaling, dtype=dtype)
    opt = Adam(genie, genie_lr)

    rough0 = initial_rough(cfg, truth[0], rng)
    start = clamp_estimate(rough0, n_max)
    trial = run_frame_trial(cfg, truth[0], rough0, start, start, rng)
    estimate = clamp_estimate(forward(genie, trial.teacher) * n_max, n_max)

    frames = len(truth) - 1
    ds = _empty_dataset(cfg, frames, False, {
        "kind": "teacher", "seed": seed, "genie_seed": genie_seed, "genie_lr": genie_lr,
        "num_iters": frames})
    for t in range(1, len(truth)):
        rough = as_rough(estimate)
        trial = run_frame_trial(cfg, truth[t], rough, estimate, truth[t - 1], rng)
        i = t - 1
        ds.teacher_x[i] = trial.teacher
        ds.target[i] = truth[t]
        ds.rough[i] = rough
        ds.prev_estimate[i] = estimate
        pred = _predict_then_fit(genie, opt, trial.teacher, truth[t] / n_max)
        estimate = clamp_estimate(pred * n_max, n_max)
    return ds


def gen_student_training_data(workload, cfg: ProtocolConfig, teacher: DenseNet, alpha: float,
                              seed: int, genie_seed: int = 0, genie_lr: float = 1e-3,
                              dtype=np.float64) -> PfdDataset:
    """Log student and teacher views while a genie student drives the rough estimates.

    The genie is fitted with the distillation loss, the teacher term coming
    from the already trained offline ``teacher``.
    """
    truth = _check_workload(workload, cfg)
    if teacher.input_size != cfg.teacher_size:
        raise LayoutMismatchError(
            f"teacher expects {teacher.input_size} inputs, protocol gives {cfg.teacher_size}")
    n_max = float(cfg.n_max)
    rng = np.random.default_rng(seed)
    genie = init_net(*estimator_architecture(cfg.student_size, cfg.num_types), seed=genie_seed,
                     scaling=cfg.scaling, dtype=dtype)
    opt = Adam(genie, genie_lr)

    rough0 = initial_rough(cfg, truth[0], rng)
    start = clamp_estimate(rough0, n_max)
    trial = run_frame_trial(cfg, truth[0], rough0, start, start, rng)
    estimate = clamp_estimate(forward(genie, trial.student) * n_max, n_max)

    frames = len(truth) - 1
    ds = _empty_dataset(cfg, frames, True, {
        "kind": "student", "seed": seed, "genie_seed": genie_seed, "genie_lr": genie_lr,
        "alpha": alpha, "num_iters": frames, "teacher_digest": teacher.digest()})
    for t in range(1, len(truth)):
        rough = as_rough(estimate)
        trial = run_frame_trial(cfg, truth[t], rough, estimate, truth[t - 1], rng)
        i = t - 1
        ds.student_x[i] = trial.student
        ds.teacher_x[i] = trial.teacher
        ds.target[i] = truth[t]
        ds.rough[i] = rough
        ds.prev_estimate[i] = estimate
        pred = _predict_then_fit(genie, opt, trial.student, truth[t] / n_max, alpha)
        estimate = clamp_estimate(pred * n_max, n_max)
    return ds


# -- offline training ----------------------------------------------------------

def _scaled_target(ds: PfdDataset) -> np.ndarray:
    return ds.target / float(ds.protocol.n_max)


def train_teacher_offline(dataset: PfdDataset, config: TrainConfig, init_seed: int = 0,
                          dtype=np.float64,
                          permute_slots: bool = False) -> tuple[DenseNet, TrainHistory]:
    cfg = dataset.protocol
    if dataset.teacher_x.shape[1] != cfg.teacher_size:
        raise LayoutMismatchError("teacher features do not match the protocol layout")
    net = init_net(*estimator_architecture(cfg.teacher_size, cfg.num_types), seed=init_seed,
                   scaling=cfg.scaling, dtype=dtype)
    augment = slot_permutation_augmenter(cfg, student=False) if permute_slots else None
    return fit_dataset(net, dataset.teacher_x, _scaled_target(dataset), config, augment=augment)


def shuffle_slot_groups(x: np.ndarray, group_width: int, num_groups: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Shuffle the ``num_groups`` leading feature groups of every row independently.

    BB slots (and 3-SS-BB blocks) are exchangeable: every participant picks
    one uniformly, so a permuted trial is an equally likely trial with the
    same target.
    """
    head = num_groups * group_width
    groups = x[:, :head].reshape(len(x), num_groups, group_width)
    order = np.argsort(rng.random((len(x), num_groups)), axis=1)
    out = x.copy()
    out[:, :head] = np.take_along_axis(groups, order[:, :, None], axis=1).reshape(len(x), head)
    return out


def slot_permutation_augmenter(cfg: ProtocolConfig, student: bool = True):
    if student:
        width = 4 * (cfg.num_types - 1) if cfg.hetero else 3
    else:
        width = cfg.num_types
    return lambda batch, rng: shuffle_slot_groups(batch, width, cfg.l, rng)


def teacher_predictions(teacher: DenseNet, dataset: PfdDataset) -> np.ndarray:
    """Frozen-teacher outputs (scaled space) for every logged frame."""
    if teacher.input_size != dataset.teacher_x.shape[1]:
        raise LayoutMismatchError("teacher does not match dataset layout")
    return np.asarray(forward(teacher, dataset.teacher_x), dtype=float).reshape(len(dataset), -1)


def train_student_offline(teacher: DenseNet, dataset: PfdDataset, config: TrainConfig,
                          init_seed: int = 0, dtype=np.float64,
                          permute_slots: bool = False) -> tuple[DenseNet, TrainHistory]:
    cfg = dataset.protocol
    if not dataset.has_student_features:
        raise LayoutMismatchError("dataset has no student features")
    if dataset.student_x.shape[1] != cfg.student_size:
        raise LayoutMismatchError("student features do not match the protocol layout")
    net = init_net(*estimator_architecture(cfg.student_size, cfg.num_types), seed=init_seed,
                   scaling=cfg.scaling, dtype=dtype)
    augment = slot_permutation_augmenter(cfg) if permute_slots else None
    return fit_dataset(net, dataset.student_x, _scaled_target(dataset), config,
                       teacher_pred=teacher_predictions(teacher, dataset), augment=augment)


def held_out_loss(net: DenseNet, dataset: PfdDataset, config: TrainConfig,
                  teacher: DenseNet | None = None, student: bool = True) -> float:
    """Objective on the test split ``fit_dataset`` would hold out for ``config``."""
    _, test_idx = split_indices(len(dataset), config.train_fraction, config.seed)
    x = dataset.student_x if student else dataset.teacher_x
    y = _scaled_target(dataset)[test_idx]
    out = forward(net, x[test_idx]).reshape(len(test_idx), -1)
    if teacher is None:
        return loss_mse(out, y)
    t_out = teacher_predictions(teacher, dataset)[test_idx]
    return loss_distill(out, t_out, y, config.mixing_alpha)


# -- persistence ---------------------------------------------------------------

def _floats(arr) -> list:
    return [float(v) for v in np.ravel(arr)]


def save_dataset(ds: PfdDataset, path) -> None:
    """JSONL, one frame per line, plus a ``<path>.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w") as fh:
        for rec in ds.records():
            row = {
                "frame_index": rec.frame_index,
                "teacher_features": _floats(rec.teacher_features),
                "target": [int(v) for v in rec.target],
                "rough": _floats(rec.rough),
                "prev_estimate": _floats(rec.prev_estimate),
            }
            if rec.student_features is not None:
                row["student_features"] = _floats(rec.student_features)
            fh.write(json.dumps(row) + "\n")
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "protocol": asdict(ds.protocol),
        "layouts": {
            "student": (fc.Layout.HET_STUDENT if ds.protocol.hetero else fc.Layout.HOMO_STUDENT).value
            if ds.has_student_features else None,
            "teacher": (fc.Layout.HET_TEACHER if ds.protocol.hetero else fc.Layout.HOMO_TEACHER).value,
        },
        "frames": len(ds),
        "generation": ds.generation,
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2))


def load_dataset(path) -> PfdDataset:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {meta.get('format_version')!r}")
    cfg = ProtocolConfig(**meta["protocol"])
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    with_student = bool(rows) and "student_features" in rows[0]
    ds = _empty_dataset(cfg, len(rows), with_student, meta.get("generation", {}))
    for i, row in enumerate(rows):
        ds.frame_index[i] = row["frame_index"]
        ds.teacher_x[i] = row["teacher_features"]
        ds.target[i] = row["target"]
        ds.rough[i] = row["rough"]
        ds.prev_estimate[i] = row["prev_estimate"]
        if with_student:
            ds.student_x[i] = row["student_features"]
    return ds


def export_dataset_csv(ds: PfdDataset, path) -> None:
    """Flat CSV for inspection: index, targets, rough, previous estimates, features."""
    T = ds.protocol.num_types
    header = (["frame"] + [f"target_{b}" for b in range(T)] + [f"rough_{b}" for b in range(T)]
              + [f"prev_estimate_{b}" for b in range(T)]
              + [f"teacher_{i}" for i in range(ds.teacher_x.shape[1])])
    if ds.has_student_features:
        header += [f"student_{i}" for i in range(ds.student_x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in ds.records():
            row = [rec.frame_index, *rec.target.tolist(), *map(repr, _floats(rec.rough)),
                   *map(repr, _floats(rec.prev_estimate)),
                   *map(repr, _floats(rec.teacher_features))]
            if rec.student_features is not None:
                row += list(map(repr, _floats(rec.student_features)))
            w.writerow(row)
