"""Slot-level simulation of LoF, Balls-and-Bins, SRC_s and 3-SS-BB trials.

Every trial returns the public slot outcomes together with the privileged
per-slot (or per-block, per-type) transmitter counts. Randomness always comes
from an explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

LOF_CONSTANT = 1.2897
BB_LOAD_FACTOR = 1.6

ALPHA = "a"
BETA = "b"
SILENT = "0"


class Outcome(enum.IntEnum):
    EMPTY = 0
    SINGLE = 1
    ALPHA = 2
    BETA = 3
    COLLISION = 4


HOMO_OUTCOMES = (Outcome.EMPTY, Outcome.SINGLE, Outcome.COLLISION)
HETERO_OUTCOMES = (Outcome.EMPTY, Outcome.ALPHA, Outcome.BETA, Outcome.COLLISION)


@dataclass
class LoFResult:
    first_empty_slot: int
    length: int


@dataclass
class BBTrialResult:
    outcomes: np.ndarray
    counts: np.ndarray
    participation_prob: float
    rough: float

    @property
    def length(self) -> int:
        return len(self.outcomes)

    @property
    def num_empty(self) -> int:
        return int(np.count_nonzero(self.counts == 0))


@dataclass
class BlockTrialResult:
    outcomes: np.ndarray  # (l, T-1) outcome codes
    type_counts: np.ndarray  # (l, T) participants per block and type
    participation_probs: np.ndarray
    rough: np.ndarray

    @property
    def num_blocks(self) -> int:
        return self.type_counts.shape[0]

    @property
    def num_types(self) -> int:
        return self.type_counts.shape[1]

    @property
    def slots(self) -> int:
        return self.outcomes.size


def participation_prob(l: int, rough: float) -> float:
    if rough <= 0:
        raise ValueError(f"rough estimate must be positive, got {rough}")
    return min(1.0, BB_LOAD_FACTOR * l / rough)


# -- LoF ---------------------------------------------------------------------

def lof_slot_probs(l_lof: int) -> np.ndarray:
    """Slot ``i < l`` has probability 2**-i, the last slot repeats 2**-(l-1)."""
    probs = 0.5 ** np.arange(1, l_lof + 1, dtype=float)
    probs[-1] = 0.5 ** (l_lof - 1)
    return probs


def run_lof(n_active: int, l_lof: int, rng: np.random.Generator) -> LoFResult:
    if l_lof < 1:
        raise ValueError("l_lof must be >= 1")
    counts = rng.multinomial(n_active, lof_slot_probs(l_lof))
    empty = np.flatnonzero(counts == 0)
    # no empty slot: saturate at the last slot
    j = int(empty[0]) + 1 if empty.size else l_lof
    return LoFResult(j, l_lof)


def lof_point_estimate(j: int) -> float:
    if j < 1:
        raise ValueError("LoF slot index is 1-based")
    return LOF_CONSTANT * 2.0 ** j


def srcs_rough_estimate(first_empty_slots: Sequence[int]) -> float:
    js = list(first_empty_slots)
    if not js:
        raise ValueError("need at least one LoF trial")
    return LOF_CONSTANT * 2.0 ** (sum(j - 1 for j in js) / len(js))


def lof_rough_estimate(n_active: int, num_lof: int, l_lof: int,
                       rng: np.random.Generator) -> float:
    js = [run_lof(n_active, l_lof, rng).first_empty_slot for _ in range(num_lof)]
    return srcs_rough_estimate(js)


# -- Balls and bins ------------------------------------------------------------

def _homo_outcomes(counts: np.ndarray) -> np.ndarray:
    out = np.full(counts.shape, Outcome.COLLISION, dtype=np.int8)
    out[counts == 0] = Outcome.EMPTY
    out[counts == 1] = Outcome.SINGLE
    return out


def run_bb(n_active: int, l: int, rough: float, rng: np.random.Generator) -> BBTrialResult:
    if l < 1:
        raise ValueError("trial length must be >= 1")
    p = participation_prob(l, rough)
    participants = rng.binomial(n_active, p) if n_active > 0 else 0
    counts = np.bincount(rng.integers(0, l, size=participants), minlength=l).astype(np.int64)
    return BBTrialResult(_homo_outcomes(counts), counts, p, float(rough))


def bb_estimate(z: int, l: int, p: float, fallback: float, n_max: float | None = None) -> float:
    """Invert the expected empty-slot count; ``z == 0`` returns ``fallback``."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"participation probability must lie in (0, 1], got {p}")
    if not 0 <= z <= l:
        raise ValueError(f"empty-slot count {z} outside [0, {l}]")
    if z == 0:
        est = float(fallback)
    elif l == 1:
        # 1 - p/l is 0 when p = 1; a single empty slot means nobody showed up
        est = 0.0
    else:
        est = math.log(z / l) / math.log1p(-p / l)
        est = max(est, 0.0)
    if n_max is not None:
        est = min(max(est, 0.0), float(n_max))
    return est


def srcs_frame(n_active: int, num_lof: int, l_lof: int, l_bb: int,
               rng: np.random.Generator, n_max: float | None = None) -> tuple[float, int]:
    """One SRC_s estimate. LoF trials are billed in full even if they end early."""
    if min(num_lof, l_lof, l_bb) < 1:
        raise ValueError("all SRC_s lengths must be >= 1")
    rough = lof_rough_estimate(n_active, num_lof, l_lof, rng)
    trial = run_bb(n_active, l_bb, rough, rng)
    fallback = rough if n_max is None else min(rough, n_max)
    est = bb_estimate(trial.num_empty, l_bb, trial.participation_prob, fallback, n_max)
    return est, num_lof * l_lof + l_bb


def srcs_bb_length(epsilon: float) -> int:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return max(1, math.floor(65.0 / (1.0 - 0.04 ** epsilon) ** 2 + 0.5))


# -- 3-SS-BB -------------------------------------------------------------------

def symbol_pattern(node_type: int, num_types: int) -> tuple[str, ...]:
    """Symbols sent in a block by a node of 1-based type ``node_type``."""
    if num_types < 2:
        raise ValueError("3-SS-BB needs at least two node types")
    if not 1 <= node_type <= num_types:
        raise ValueError(f"node type {node_type} outside [1, {num_types}]")
    if node_type == 1:
        return (ALPHA,) * (num_types - 1)
    pattern = [SILENT] * (num_types - 1)
    pattern[node_type - 2] = BETA
    return tuple(pattern)


def resolve_slot(transmitted: Iterable[str]) -> Outcome:
    symbols = [s for s in transmitted if s != SILENT]
    if not symbols:
        return Outcome.EMPTY
    if len(symbols) > 1:
        return Outcome.COLLISION
    return Outcome.ALPHA if symbols[0] == ALPHA else Outcome.BETA


def resolve_block(type_counts_row: Sequence[int], num_types: int) -> list[Outcome]:
    """Reference resolution of one block by superposing every participant's pattern."""
    slots: list[Counter] = [Counter() for _ in range(num_types - 1)]
    for b, count in enumerate(type_counts_row, start=1):
        for s, sym in enumerate(symbol_pattern(b, num_types)):
            if sym != SILENT:
                slots[s][sym] += int(count)
    return [resolve_slot(c.elements()) for c in slots]


def block_outcomes(type_counts: np.ndarray) -> np.ndarray:
    """Vectorised slot resolution for all blocks, shape ``(l, T-1)``.

    Slot ``s`` of a block carries type-1 nodes (alpha) and type ``s+2`` nodes
    (beta); everything else is silent there.
    """
    n_alpha = type_counts[:, :1]
    n_beta = type_counts[:, 1:]
    total = n_alpha + n_beta
    out = np.full(total.shape, Outcome.COLLISION, dtype=np.int8)
    out[total == 0] = Outcome.EMPTY
    single = total == 1
    out[single & (np.broadcast_to(n_alpha, total.shape) == 1)] = Outcome.ALPHA
    out[single & (n_beta == 1)] = Outcome.BETA
    return out


def run_3ssbb(n_active: Sequence[int], l: int, rough: Sequence[float],
              rng: np.random.Generator) -> BlockTrialResult:
    n_active = np.asarray(n_active, dtype=np.int64)
    num_types = len(n_active)
    if num_types < 2:
        raise ValueError("3-SS-BB needs at least two node types")
    if l < 1:
        raise ValueError("number of blocks must be >= 1")
    rough = np.asarray(rough, dtype=float)
    probs = np.array([participation_prob(l, r) for r in rough])
    type_counts = np.zeros((l, num_types), dtype=np.int64)
    for b in range(num_types):
        m = rng.binomial(n_active[b], probs[b]) if n_active[b] > 0 else 0
        type_counts[:, b] = np.bincount(rng.integers(0, l, size=m), minlength=l)
    return BlockTrialResult(block_outcomes(type_counts), type_counts, probs, rough)


# -- JSONL traces --------------------------------------------------------------

def trial_to_dict(trial) -> dict:
    if isinstance(trial, BBTrialResult):
        return {
            "kind": "bb",
            "length": trial.length,
            "participation_prob": trial.participation_prob,
            "rough": trial.rough,
            "counts": trial.counts.tolist(),
            "outcomes": [Outcome(o).name.lower() for o in trial.outcomes],
        }
    if isinstance(trial, BlockTrialResult):
        return {
            "kind": "3ssbb",
            "length": trial.num_blocks,
            "num_types": trial.num_types,
            "participation_probs": trial.participation_probs.tolist(),
            "rough": trial.rough.tolist(),
            "type_counts": trial.type_counts.tolist(),
            "outcomes": [[Outcome(o).name.lower() for o in row] for row in trial.outcomes],
        }
    raise TypeError(f"cannot serialise {type(trial).__name__}")


def trial_from_dict(d: dict):
    def codes(names):
        return np.array([Outcome[n.upper()] for n in names], dtype=np.int8)

    if d["kind"] == "bb":
        return BBTrialResult(codes(d["outcomes"]), np.asarray(d["counts"], dtype=np.int64),
                             float(d["participation_prob"]), float(d["rough"]))
    if d["kind"] == "3ssbb":
        outcomes = np.stack([codes(row) for row in d["outcomes"]]).reshape(d["length"], -1)
        return BlockTrialResult(outcomes, np.asarray(d["type_counts"], dtype=np.int64),
                                np.asarray(d["participation_probs"], dtype=float),
                                np.asarray(d["rough"], dtype=float))
    raise ValueError(f"unknown trial kind {d['kind']!r}")


def write_trials_jsonl(trials, path) -> None:
    with open(path, "w") as fh:
        for trial in trials:
            fh.write(json.dumps(trial_to_dict(trial)) + "\n")


def read_trials_jsonl(path) -> list:
    with open(path) as fh:
        return [trial_from_dict(json.loads(line)) for line in fh if line.strip()]
