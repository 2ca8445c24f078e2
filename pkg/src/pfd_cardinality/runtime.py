"""Online per-frame estimators under an equalised slot budget.

Methods: the trained student net (``nn``), SRC_s, BB-Aware, and their
per-type heterogeneous variants (T-SRC_s, T-BB-Aware). Every loop returns a
:class:`RunResult` with the slots it actually consumed per frame so budget
parity can be audited rather than assumed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .metrics import normalized_errors
from .nn import DenseNet, forward
from .pfd import ProtocolConfig, as_rough, clamp_estimate, initial_rough, run_frame_trial
from .protocols import bb_estimate, run_bb, srcs_frame
from .workload import as_2d

NN, SRCS, BB_AWARE = "nn", "srcs", "bb_aware"
T_SRCS, T_BB_AWARE = "t_srcs", "t_bb_aware"


class BudgetError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class BudgetPlan:
    """Per-method trial lengths that give every method the same slots per frame.

    Homogeneous: ``nn_l == num_lof * l_lof + srcs_l == bb_aware_l``.
    Heterogeneous: ``nn_l (T-1) ~ T (srcs_l + num_lof l_lof) ~ T bb_aware_l``
    up to nearest-integer rounding of the per-type lengths.
    """

    num_types: int
    nn_l: int
    num_lof: int
    l_lof: int
    srcs_l: int
    bb_aware_l: int
    n_max: int

    @property
    def hetero(self) -> bool:
        return self.num_types > 1

    @property
    def total_slots_per_frame(self) -> int:
        return self.slots_per_frame(NN)

    def slots_per_frame(self, method: str) -> int:
        T = self.num_types
        lof = self.num_lof * self.l_lof
        if method == NN:
            return (T - 1) * self.nn_l if self.hetero else self.nn_l
        if method in (SRCS, T_SRCS):
            return T * (lof + self.srcs_l)
        if method in (BB_AWARE, T_BB_AWARE):
            return T * self.bb_aware_l
        raise KeyError(method)

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(self.nn_l, self.num_types, self.n_max, self.num_lof, self.l_lof)


def equalize_homo(total_slots: int, num_lof: int = 3, l_lof: int = 8, n_max: int = 64) -> BudgetPlan:
    if total_slots <= num_lof * l_lof:
        raise BudgetError(
            f"{total_slots} slots leave no room for a BB trial after {num_lof}x{l_lof} LoF slots")
    return BudgetPlan(1, total_slots, num_lof, l_lof, total_slots - num_lof * l_lof,
                      total_slots, n_max)


def equalize_hetero(l_3ssbb: int, num_types: int, num_lof: int = 3, l_lof: int = 8,
                    n_max: int | None = None) -> BudgetPlan:
    if num_types < 2:
        raise BudgetError("heterogeneous budgets need T >= 2")
    per_type = l_3ssbb * (num_types - 1) / num_types
    srcs_l = round_half_up(per_type - num_lof * l_lof)
    if srcs_l < 1:
        raise BudgetError(f"l_3ssbb={l_3ssbb} leaves SRC_s a BB trial of {srcs_l} slots")
    if n_max is None:
        n_max = 192 // num_types
    return BudgetPlan(num_types, l_3ssbb, num_lof, l_lof, srcs_l, round_half_up(per_type), n_max)


@dataclass
class RunResult:
    method: str
    truth: np.ndarray  # (F, T)
    estimates: np.ndarray  # (F, T)
    slots_used: np.ndarray  # (F,)
    n_max: float
    rough: np.ndarray | None = None  # (F, T) rough estimate fed to each frame's trial

    @property
    def sq_error(self) -> np.ndarray:
        return np.sum((self.estimates - self.truth) ** 2, axis=1)

    @property
    def normalized_error(self) -> np.ndarray:
        return normalized_errors(self.estimates, self.truth, self.n_max)

    @property
    def mean_normalized_mse(self) -> float:
        return float(np.mean(self.normalized_error))

    def write_trace(self, path) -> None:
        T = self.truth.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame"] + [f"truth_{b}" for b in range(T)]
                       + [f"estimate_{b}" for b in range(T)] + ["sq_error", "slots_used"])
            for t in range(len(self.truth)):
                w.writerow([t, *self.truth[t].tolist(), *map(repr, self.estimates[t].tolist()),
                            repr(float(self.sq_error[t])), int(self.slots_used[t])])


def _check(workload, plan: BudgetPlan) -> np.ndarray:
    truth = as_2d(workload)
    if truth.shape[1] != plan.num_types:
        raise ValueError(f"workload has {truth.shape[1]} types, plan has {plan.num_types}")
    return truth


def nn_online(student: DenseNet, workload, plan: BudgetPlan, seed: int) -> RunResult:
    """Student-driven loop; frame 0 bootstraps from LoF rough estimates."""
    truth = _check(workload, plan)
    cfg = plan.protocol()
    if student.input_size != cfg.student_size or student.output_size != cfg.num_types:
        raise ValueError(f"student layout {student.layer_dims} does not match plan {cfg}")
    n_max = float(plan.n_max)
    rng = np.random.default_rng(seed)
    F = len(truth)
    estimates = np.empty((F, cfg.num_types))
    slots = np.zeros(F, dtype=np.int64)
    roughs = np.empty((F, cfg.num_types))

    rough = initial_rough(cfg, truth[0], rng)
    prev = clamp_estimate(rough, n_max)
    lof_slots = cfg.num_types * cfg.num_lof * cfg.l_lof
    for t in range(F):
        roughs[t] = rough
        trial = run_frame_trial(cfg, truth[t], rough, prev, prev, rng)
        prev = clamp_estimate(forward(student, trial.student) * n_max, n_max)
        estimates[t] = prev
        slots[t] = trial.slots + (lof_slots if t == 0 else 0)
        rough = as_rough(prev)
    return RunResult(NN, truth, estimates, slots, n_max, roughs)


def nn_online_homo(student, workload, plan, seed) -> RunResult:
    if plan.hetero:
        raise ValueError("plan is heterogeneous")
    return nn_online(student, workload, plan, seed)


def nn_online_hetero(student, workload, plan, seed) -> RunResult:
    if not plan.hetero:
        raise ValueError("plan is homogeneous")
    return nn_online(student, workload, plan, seed)


def _srcs_column(column: np.ndarray, plan: BudgetPlan, rng):
    est = np.empty(len(column))
    slots = np.empty(len(column), dtype=np.int64)
    for t, n in enumerate(column):
        est[t], slots[t] = srcs_frame(int(n), plan.num_lof, plan.l_lof, plan.srcs_l, rng,
                                      n_max=plan.n_max)
    return est, slots, None


def _bb_aware_column(column: np.ndarray, plan: BudgetPlan, rng):
    n_max = float(plan.n_max)
    est = np.empty(len(column))
    slots = np.empty(len(column), dtype=np.int64)
    rough = np.full(len(column), np.nan)
    est[0], slots[0] = srcs_frame(int(column[0]), plan.num_lof, plan.l_lof, plan.srcs_l, rng,
                                  n_max=n_max)
    l = plan.bb_aware_l
    for t in range(1, len(column)):
        prev = est[t - 1]
        rough[t] = as_rough(prev)
        trial = run_bb(int(column[t]), l, rough[t], rng)
        est[t] = bb_estimate(trial.num_empty, l, trial.participation_prob, prev, n_max)
        slots[t] = l
    return est, slots, rough


def _per_type(fn, method, workload, plan: BudgetPlan, seed: int) -> RunResult:
    truth = _check(workload, plan)
    streams = np.random.SeedSequence(seed).spawn(plan.num_types)
    est = np.empty(truth.shape)
    rough = np.full(truth.shape, np.nan)
    slots = np.zeros(len(truth), dtype=np.int64)
    for b, ss in enumerate(streams):
        est[:, b], s, r = fn(truth[:, b], plan, np.random.default_rng(ss))
        slots += s
        if r is not None:
            rough[:, b] = r
    return RunResult(method, truth, est, slots, float(plan.n_max), rough)


def srcs_online(workload, plan: BudgetPlan, seed: int) -> RunResult:
    """SRC_s run afresh every frame; no memory across frames."""
    return _per_type(_srcs_column, SRCS, workload, plan, seed)


def bb_aware_online(workload, plan: BudgetPlan, seed: int) -> RunResult:
    """SRC_s at frame 0, then a BB trial seeded by the previous estimate."""
    return _per_type(_bb_aware_column, BB_AWARE, workload, plan, seed)


def t_srcs_online(workload, plan: BudgetPlan, seed: int) -> RunResult:
    return _per_type(_srcs_column, T_SRCS, workload, plan, seed)


def t_bb_aware_online(workload, plan: BudgetPlan, seed: int) -> RunResult:
    return _per_type(_bb_aware_column, T_BB_AWARE, workload, plan, seed)

