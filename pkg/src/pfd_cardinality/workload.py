"""Birth-death DTMC workloads for the number of active nodes per frame.

The chain on states ``0..N-1`` stays put with probability ``q`` and otherwise
moves one step up or down with equal probability, reflecting at the ends.
One frame advances the chain by ``k`` steps, i.e. frames follow ``P**k``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class InvalidSpecError(ValueError):
    """Raised for an inconsistent workload or protocol configuration."""


@dataclass(frozen=True)
class TransitionSpec:
    num_states: int
    stay_prob: float = 0.2
    jumps: int = 5

    def __post_init__(self):
        if self.num_states < 2:
            raise InvalidSpecError(f"num_states must be >= 2, got {self.num_states}")
        if not 0.0 <= self.stay_prob <= 1.0:
            raise InvalidSpecError(f"stay_prob must lie in [0, 1], got {self.stay_prob}")
        if self.jumps < 1:
            raise InvalidSpecError(f"jumps must be >= 1, got {self.jumps}")

    @property
    def up_prob(self) -> float:
        return (1.0 - self.stay_prob) / 2.0

    @property
    def down_prob(self) -> float:
        return 1.0 - self.up_prob - self.stay_prob

    @property
    def n_max(self) -> int:
        return self.num_states - 1


def homogeneous_spec(stay_prob: float = 0.2, jumps: int = 5, n_max: int = 64) -> TransitionSpec:
    return TransitionSpec(n_max + 1, stay_prob, jumps)


def hetero_spec(num_types: int, stay_prob: float = 0.2, jumps: int = 5, total: int = 192) -> TransitionSpec:
    """Per-type chain whose maximum count is ``floor(total / T)``."""
    return TransitionSpec(total // num_types + 1, stay_prob, jumps)


def build_tpm(spec: TransitionSpec) -> np.ndarray:
    """One-step transition matrix of the reflecting birth-death chain."""
    n, q = spec.num_states, spec.stay_prob
    p = spec.up_prob
    tpm = np.zeros((n, n))
    np.fill_diagonal(tpm, q)
    tpm[0, 1] = 1.0 - q
    tpm[n - 1, n - 2] = 1.0 - q
    for i in range(1, n - 1):
        tpm[i, i - 1] = 1.0 - p - q
        tpm[i, i + 1] = p
    return tpm


def matrix_power(tpm: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise InvalidSpecError(f"k must be >= 1, got {k}")
    return np.linalg.matrix_power(np.asarray(tpm, dtype=float), k)


def kstep_matrix(spec: TransitionSpec) -> np.ndarray:
    return matrix_power(build_tpm(spec), spec.jumps)


def _sample_from_kernel(kernel: np.ndarray, initial_state: int, num_frames: int,
                        rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(kernel, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(num_frames)
    values = np.empty(num_frames, dtype=np.int64)
    state = initial_state
    values[0] = state
    for t in range(1, num_frames):
        state = int(np.searchsorted(cdf[state], u[t], side="right"))
        values[t] = state
    return values


def sample_series(spec: TransitionSpec, initial_state: int | None, num_frames: int,
                  seed: int) -> np.ndarray:
    """Sample a ground-truth series of ``num_frames`` active-node counts.

    ``initial_state=None`` draws the first state uniformly from the seeded
    generator. The result is a pure function of the arguments.
    """
    if num_frames < 1:
        raise InvalidSpecError("num_frames must be >= 1")
    rng = np.random.default_rng(seed)
    if initial_state is None:
        initial_state = int(rng.integers(0, spec.num_states))
    if not 0 <= initial_state < spec.num_states:
        raise InvalidSpecError(
            f"initial_state {initial_state} outside [0, {spec.num_states - 1}]")
    return _sample_from_kernel(kstep_matrix(spec), initial_state, num_frames, rng)


def sample_hetero(spec: TransitionSpec, num_types: int, seeds: Sequence[int],
                  initial_states: Sequence[int | None] | None, num_frames: int) -> np.ndarray:
    """Independent chains for ``num_types`` node types, shape ``(num_frames, T)``."""
    if num_types < 2:
        raise InvalidSpecError(f"heterogeneous workloads need T >= 2, got {num_types}")
    if initial_states is None:
        initial_states = [None] * num_types
    if len(seeds) != num_types or len(initial_states) != num_types:
        raise InvalidSpecError("need exactly one seed and one initial state per type")
    cols = [sample_series(spec, s0, num_frames, seed)
            for seed, s0 in zip(seeds, initial_states)]
    return np.stack(cols, axis=1)


def as_2d(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.int64)
    return arr[:, None] if arr.ndim == 1 else arr


def save_series_csv(series, path) -> None:
    arr = as_2d(series)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"type_{b}" for b in range(arr.shape[1])])
        for t, row in enumerate(arr):
            writer.writerow([t, *row.tolist()])


def load_series_csv(path) -> np.ndarray:
    """Inverse of :func:`save_series_csv`; a single-type file loads as 1-D."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "frame":
            raise InvalidSpecError(f"{path}: expected a 'frame' column first")
        rows = [[int(v) for v in row[1:]] for row in reader if row]
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, len(header) - 1)
    return arr[:, 0] if arr.shape[1] == 1 else arr
