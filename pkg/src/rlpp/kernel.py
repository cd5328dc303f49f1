"""Gaussian RKHS kernel, median-trick bandwidth, analytic reward and MMD.

The kernel is ``k(t, t') = exp(-(t - t')^2 / (2 sigma^2))``. Sequences are
embedded as the sum of ``k(t_i, .)`` over their events, and a dataset as the
average of its sequence embeddings, so every quantity here reduces to sums of
kernel values over event pairs weighted by sequence-count normalizers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from ._backend import kernels
from .core import Dataset
from .errors import DegenerateData, ValidationError
from .rng import RngStream

__all__ = [
    "KernelConfig",
    "k",
    "gram",
    "median_bandwidth",
    "RewardEstimator",
    "reward_at",
    "reward_profile",
    "mmd_squared",
    "block_sums",
]


@dataclass(frozen=True)
class KernelConfig:
    sigma: float

    def __post_init__(self):
        s = float(self.sigma)
        if not (math.isfinite(s) and s > 0):
            raise ValidationError(f"bandwidth must be positive and finite, got {self.sigma}")
        object.__setattr__(self, "sigma", s)

    @property
    def inv_two_sigma2(self) -> float:
        return 1.0 / (2.0 * self.sigma * self.sigma)


def k(t, t2, config: KernelConfig):
    t = np.asarray(t, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    out = np.exp(-np.square(t - t2) * config.inv_two_sigma2)
    return float(out) if out.ndim == 0 else out


def gram(points, config: KernelConfig) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    return np.exp(-np.square(x[:, None] - x[None, :]) * config.inv_two_sigma2)


def block_sums(query, source: np.ndarray, offsets: np.ndarray, config: KernelConfig) -> np.ndarray:
    """``out[i, s]`` = sum of ``k(query[i], x)`` over the events ``x`` of source sequence ``s``."""
    q = np.ascontiguousarray(query, dtype=np.float64).reshape(-1)
    return kernels.gauss_block_sums(
        q,
        np.ascontiguousarray(source, dtype=np.float64),
        np.ascontiguousarray(offsets, dtype=np.int64),
        config.inv_two_sigma2,
        _backend.get_threads(),
    )


# ---------------------------------------------------------------- bandwidth

def _count_le(x: np.ndarray, v: float) -> int:
    """Number of pairs i < j with ``x[j] - x[i] <= v`` (``x`` sorted, ``v >= 0``)."""
    n = x.size
    ar = np.arange(n)
    idx = np.searchsorted(x, x + v, side="right")
    # searchsorted compares x[j] with fl(x[i] + v); fix up so the test is
    # on the computed difference fl(x[j] - x[i]), which is monotone in j.
    while True:
        m = (idx > ar + 1) & (x[np.maximum(idx - 1, 0)] - x > v)
        if not m.any():
            break
        idx[m] -= 1
    while True:
        m = idx < n
        m[m] = x[idx[m]] - x[m] <= v
        if not m.any():
            break
        idx[m] += 1
    return int(np.sum(idx - ar - 1))


def _kth_difference(x: np.ndarray, rank: int) -> float:
    """The ``rank``-th smallest (1-based) pairwise difference of sorted ``x``."""
    lo = np.int64(0)  # bit pattern of 0.0
    hi = np.array(x[-1] - x[0], dtype=np.float64).view(np.int64)[()]
    # smallest float v >= 0 with count_le(v) >= rank; positive doubles are
    # ordered like their bit patterns, so bisect on the integers.
    while lo < hi:
        mid = lo + (hi - lo) // 2
        v = np.array(mid, dtype=np.int64).view(np.float64)[()]
        if _count_le(x, float(v)) >= rank:
            hi = mid
        else:
            lo = mid + 1
    return float(np.array(lo, dtype=np.int64).view(np.float64)[()])


def median_bandwidth(data: Dataset, max_points: int = 10_000, seed: int = 0) -> KernelConfig:
    """Median of the nonzero pairwise distances between pooled event times.

    With more than ``max_points`` events a uniform subsample (without
    replacement, drawn from ``RngStream(seed)``) is used.
    """
    x, _ = data.pooled()
    if x.size > max_points:
        gen = RngStream(seed, (0x6D6564,)).generator()
        x = x[gen.choice(x.size, size=max_points, replace=False)]
    return KernelConfig(median_pairwise_distance(x))


def median_pairwise_distance(points) -> float:
    x = np.sort(np.asarray(points, dtype=np.float64))
    n = x.size
    if n < 2:
        raise DegenerateData("the median trick needs at least two event times")
    _, counts = np.unique(x, return_counts=True)
    zeros = int(np.sum(counts * (counts - 1) // 2))
    positive = n * (n - 1) // 2 - zeros
    if positive == 0:
        raise DegenerateData("all event times are identical")
    if positive % 2:
        return _kth_difference(x, zeros + (positive + 1) // 2)
    a = _kth_difference(x, zeros + positive // 2)
    b = _kth_difference(x, zeros + positive // 2 + 1)
    return 0.5 * (a + b)


# ------------------------------------------------------------------- reward

class RewardEstimator:
    """Expert batch, learner batch and kernel; evaluates the analytic reward.

    ``reward(t) = (1/L) sum_l sum_i k(tau_i^l, t) - (1/M') sum_{m'} sum_j k(t_j^m', t)``
    where the learner sum skips sequence ``exclude`` when given (``M' = M - 1``).
    """

    def __init__(self, expert: Dataset, learner: Dataset, config: KernelConfig):
        if expert.window_end != learner.window_end:
            raise ValidationError("expert and learner datasets must share the window end")
        if len(learner) < 2:
            raise ValidationError("the learner batch needs at least two sequences")
        self.expert = expert
        self.learner = learner
        self.config = config
        self._xe, self._oe = expert.pooled()
        self._xl, self._ol = learner.pooled()

    @property
    def L(self) -> int:
        return len(self.expert)

    @property
    def M(self) -> int:
        return len(self.learner)

    def _sides(self, t):
        t = np.ascontiguousarray(t, dtype=np.float64).reshape(-1)
        be = block_sums(t, self._xe, self._oe, self.config)
        bl = block_sums(t, self._xl, self._ol, self.config)
        return be, bl

    def evaluate(self, t, exclude: int | None = None, normalized: bool = False) -> np.ndarray:
        be, bl = self._sides(t)
        expert_part = be.sum(axis=1) / self.L
        if exclude is None:
            learner_part = bl.sum(axis=1) / self.M
        else:
            if not 0 <= exclude < self.M:
                raise ValidationError(f"exclude index {exclude} outside [0, {self.M})")
            keep = np.ones(self.M, dtype=bool)
            keep[exclude] = False
            learner_part = bl[:, keep].sum(axis=1) / (self.M - 1)
        r = expert_part - learner_part
        if normalized:
            norm = math.sqrt(max(mmd_squared(self.expert, self.learner, self.config), 0.0))
            r = r / norm if norm > 0 else np.zeros_like(r)
        return r

    def learner_rewards(self, expert_self_sum: float | None = None) -> tuple[list[np.ndarray], float]:
        """Leave-one-out rewards at every learner event, plus the batch MMD^2.

        Returns one array per learner sequence (reward at each of its events,
        computed without that sequence) and the biased MMD^2 estimate.
        ``expert_self_sum`` may supply the precomputed expert-expert kernel sum.
        """
        rewards, _, mmd2 = self.learner_terms(expert_self_sum)
        return rewards, mmd2

    def learner_terms(self, expert_self_sum: float | None = None) -> tuple[list[np.ndarray], np.ndarray, float]:
        """As :meth:`learner_rewards`, plus the learner block sums.

        The middle value ``B`` has ``B[e, m]`` = sum of ``k(x_e, .)`` over the
        events of learner sequence ``m``, for every pooled learner event ``e``.
        """
        L, M = self.L, self.M
        be = block_sums(self._xl, self._xe, self._oe, self.config)
        bl = block_sums(self._xl, self._xl, self._ol, self.config)
        seq_of = np.repeat(np.arange(M), np.diff(self._ol))
        own = bl[np.arange(bl.shape[0]), seq_of]
        r = be.sum(axis=1) / L - (bl.sum(axis=1) - own) / (M - 1)
        rewards = [r[self._ol[m]:self._ol[m + 1]] for m in range(M)]
        ee = expert_self_sum
        if ee is None:
            ee = block_sums(self._xe, self._xe, self._oe, self.config).sum()
        mmd2 = ee / L**2 + bl.sum() / M**2 - 2.0 * be.sum() / (L * M)
        return rewards, bl, max(0.0, float(mmd2))


def reward_at(est: RewardEstimator, t: float, exclude: int | None = None, normalized: bool = False) -> float:
    return float(est.evaluate([t], exclude=exclude, normalized=normalized)[0])


def reward_profile(est: RewardEstimator, grid, normalized: bool = False) -> list[tuple[float, float]]:
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        return []
    r = est.evaluate(grid, normalized=normalized)
    return list(zip(grid.tolist(), r.tolist()))


def mmd_squared(expert: Dataset, learner: Dataset, config: KernelConfig) -> float:
    """Squared RKHS distance between the empirical mean embeddings (V-statistic)."""
    xe, oe = expert.pooled()
    xl, ol = learner.pooled()
    L, M = len(expert), len(learner)
    ee = block_sums(xe, xe, oe, config).sum()
    ll = block_sums(xl, xl, ol, config).sum()
    el = block_sums(xe, xl, ol, config).sum()
    # a squared norm; only cancellation can push the expansion below zero
    return max(0.0, float(ee / L**2 + ll / M**2 - 2.0 * el / (L * M)))
