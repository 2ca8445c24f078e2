"""Normalized squared-error metrics shared by the runtime and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def normalized_error(estimate, truth, n_max: float) -> float:
    """Squared Euclidean error divided by ``len * n_max**2``; 0 is perfect, 1 is worst."""
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if estimate.shape != truth.shape:
        raise ValueError(f"length mismatch {estimate.shape} vs {truth.shape}")
    return float(np.sum((estimate - truth) ** 2) / (estimate.size * n_max ** 2))


def normalized_errors(estimates, truth, n_max: float) -> np.ndarray:
    """Row-wise :func:`normalized_error` for ``(frames, T)`` arrays."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimates.shape} vs {truth.shape}")
    return np.mean((estimates - truth) ** 2, axis=-1) / n_max ** 2


@dataclass
class RunMetrics:
    method: str
    per_frame: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def mean_normalized_mse(self) -> float:
        return float(np.mean(self.per_frame))
