"""Evaluation metrics: MSE, MAE, empirical CRPS, NMAE.

All metrics are computed in original (denormalized) units. CRPS uses the
exact closed form for the empirical step-function CDF of the samples, not a
Monte-Carlo pair estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalPair:
    """truth/point: (K, T) arrays; samples: optional (n_s, K, T)."""

    truth: np.ndarray
    point: np.ndarray
    samples: np.ndarray | None = None

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=np.float64)
        self.point = np.asarray(self.point, dtype=np.float64)
        if self.truth.shape != self.point.shape:
            raise ValueError(f"truth {self.truth.shape} != point {self.point.shape}")
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=np.float64)
            if self.samples.shape[1:] != self.truth.shape:
                raise ValueError(
                    f"samples {self.samples.shape} do not match truth {self.truth.shape}")
            if self.samples.shape[0] < 1:
                raise ValueError("need at least one sample")


def mse(pair: EvalPair) -> float:
    return float(np.mean((pair.truth - pair.point) ** 2))


def mae(pair: EvalPair) -> float:
    return float(np.mean(np.abs(pair.truth - pair.point)))


def crps_empirical(samples: np.ndarray, truth: float) -> float:
    """CRPS of the empirical CDF of `samples` at observation `truth`:
    the integral of (F_hat(z) - 1{truth <= z})^2 dz, evaluated exactly via
    the sorted-sample identity

        CRPS = mean|X - truth| - (1/n^2) * sum_k (2k - n + 1) * X_(k)

    with X_(k) ascending, k zero-based (the second term equals half the mean
    absolute pairwise difference)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty sample set")
    term1 = np.mean(np.abs(x - truth))
    k = np.arange(n, dtype=np.float64)
    term2 = np.sum((2.0 * k - n + 1.0) * x) / (n * n)
    return float(term1 - term2)


def crps(pair: EvalPair) -> float:
    """Average of per-cell empirical CRPS over all (k, t)."""
    if pair.samples is None:
        raise ValueError("CRPS needs forecast samples")
    n_s = pair.samples.shape[0]
    flat_samples = pair.samples.reshape(n_s, -1)
    flat_truth = pair.truth.ravel()
    vals = [crps_empirical(flat_samples[:, i], flat_truth[i])
            for i in range(flat_truth.size)]
    return float(np.mean(vals))


def nmae(pair: EvalPair) -> float:
    denom = float(np.sum(np.abs(pair.truth)))
    if denom == 0.0:
        raise ValueError("NMAE undefined: ground truth is identically zero")
    return float(np.sum(np.abs(pair.truth - pair.point)) / denom)
