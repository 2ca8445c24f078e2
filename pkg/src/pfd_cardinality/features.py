"""Fixed-length feature vectors for student (public) and teacher (privileged) nets.

Layouts:

* homogeneous student: one-hot (empty, single, collision) per slot, then the
  previous estimate / n_max. Length ``3 l + 1``.
* homogeneous teacher: per-slot transmitter counts / n_max, then the previous
  true count / n_max. Length ``l + 1``.
* heterogeneous student: one-hot (empty, alpha, beta, collision) per slot in
  block-major order, then T previous estimates / n_max. Length ``4 (T-1) l + T``.
* heterogeneous teacher: per-block, per-type counts / n_max in block-major
  order, then T previous true counts / n_max. Length ``(l + 1) T``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .protocols import HETERO_OUTCOMES, HOMO_OUTCOMES, Outcome


class Layout(str, enum.Enum):
    HOMO_STUDENT = "HomoStudent"
    HOMO_TEACHER = "HomoTeacher"
    HET_STUDENT = "HetStudent"
    HET_TEACHER = "HetTeacher"


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: Layout

    def __len__(self):
        return len(self.values)


def _lookup(alphabet) -> np.ndarray:
    table = np.full(len(Outcome), -1, dtype=np.int64)
    for pos, o in enumerate(alphabet):
        table[o] = pos
    return table


_HOMO_POS = _lookup(HOMO_OUTCOMES)
_HET_POS = _lookup(HETERO_OUTCOMES)


def _one_hot(outcomes: np.ndarray, table: np.ndarray, width: int, what: str) -> np.ndarray:
    codes = np.asarray(outcomes, dtype=np.int64).ravel()
    pos = table[codes]
    if np.any(pos < 0):
        bad = Outcome(int(codes[np.argmax(pos < 0)])).name
        raise ValueError(f"outcome {bad} is not part of the {what} alphabet")
    hot = np.zeros((codes.size, width))
    hot[np.arange(codes.size), pos] = 1.0
    return hot.ravel()


def homo_student_size(l: int) -> int:
    return 3 * l + 1


def homo_teacher_size(l: int) -> int:
    return l + 1


def het_student_size(l: int, num_types: int) -> int:
    return 4 * (num_types - 1) * l + num_types


def het_teacher_size(l: int, num_types: int) -> int:
    return (l + 1) * num_types


def encode_bb_student(outcomes, prev_estimate: float, n_max: float) -> FeatureVector:
    hot = _one_hot(outcomes, _HOMO_POS, 3, "homogeneous")
    return FeatureVector(np.append(hot, prev_estimate / n_max), Layout.HOMO_STUDENT)


def encode_bb_teacher(counts, prev_truth: float, n_max: float) -> FeatureVector:
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("transmitter counts must be nonnegative")
    return FeatureVector(np.append(counts / n_max, prev_truth / n_max), Layout.HOMO_TEACHER)


def encode_3ssbb_student(outcomes, prev_estimates, n_max: float) -> FeatureVector:
    """``outcomes`` has shape ``(l, T-1)``; flattened row-major (block-major)."""
    hot = _one_hot(outcomes, _HET_POS, 4, "heterogeneous")
    tail = np.asarray(prev_estimates, dtype=float) / n_max
    return FeatureVector(np.concatenate([hot, tail]), Layout.HET_STUDENT)


def encode_3ssbb_teacher(type_counts, prev_truths, n_max: float) -> FeatureVector:
    counts = np.asarray(type_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("transmitter counts must be nonnegative")
    tail = np.asarray(prev_truths, dtype=float) / n_max
    return FeatureVector(np.concatenate([counts.ravel() / n_max, tail]), Layout.HET_TEACHER)


def decode_student_outcomes(vec: FeatureVector, num_types: int = 1) -> np.ndarray:
    """Recover slot outcome codes from a student vector (inverse of the one-hot part)."""
    if vec.layout is Layout.HOMO_STUDENT:
        width, alphabet, tail = 3, HOMO_OUTCOMES, 1
    elif vec.layout is Layout.HET_STUDENT:
        width, alphabet, tail = 4, HETERO_OUTCOMES, num_types
    else:
        raise ValueError(f"{vec.layout} is not a student layout")
    groups = vec.values[:-tail].reshape(-1, width)
    codes = np.array([int(o) for o in alphabet], dtype=np.int8)[groups.argmax(axis=1)]
    if vec.layout is Layout.HET_STUDENT:
        codes = codes.reshape(-1, num_types - 1)
    return codes
