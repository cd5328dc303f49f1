"""Mini-batch policy-gradient training against the analytic kernel reward.

Each iteration draws ``L`` expert sequences (with replacement) and ``M``
rollouts, scores every rollout event with the leave-one-out reward, and takes
an ascent step on the expected cumulative reward, which is a descent step on
the squared MMD between expert and learner embeddings.

Randomness for iteration ``k`` comes from ``RngStream(seed, (k, ...))`` only,
so a run resumed from a checkpoint at iteration ``k`` replays the remaining
iterations bit for bit.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .core import Dataset
from .errors import NonFiniteUpdate, ValidationError
from .kernel import KernelConfig, RewardEstimator, block_sums, median_bandwidth
from .policy import (
    EXPONENTIAL,
    ROLLOUT_CAP,
    PolicyParams,
    RolloutSample,
    init,
    params_from_dict,
    params_to_dict,
    rollout,
    weighted_score,
)
from .rng import RngStream

log = logging.getLogger(__name__)

__all__ = [
    "FULL_RETURN",
    "REWARD_TO_GO",
    "REWARD_TO_GO_BASELINE",
    "TrainConfig",
    "TraceRow",
    "OptimizerState",
    "TrainState",
    "returns_for",
    "policy_gradient",
    "score_gradient",
    "coupled_baselines",
    "step",
    "train",
    "write_trace_csv",
    "save_checkpoint",
    "load_checkpoint",
]

FULL_RETURN = "full"
REWARD_TO_GO = "rtg"
REWARD_TO_GO_BASELINE = "rtg_baseline"
_VARIANCE_REDUCTION = (FULL_RETURN, REWARD_TO_GO, REWARD_TO_GO_BASELINE)

TRACE_HEADER = ("iter", "mmd2", "mean_return", "grad_norm", "wall_ms")
_GRAM_CACHE_LIMIT = 40_000  # expert events; above this the per-batch sum is used


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run.

    ``kernel`` is ``"median-batch"`` (median trick on each expert batch),
    ``"median-data"`` (median trick once on the whole expert set) or a fixed
    bandwidth.
    """

    L: int = 32
    M: int = 32
    iterations: int = 2000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    variance_reduction: str = REWARD_TO_GO_BASELINE
    kernel: str | float = "median-data"
    seed: int = 0
    d: int = 64
    dist: str = EXPONENTIAL
    init_scale: float = 0.1
    init_bias: float | str | None = None
    checkpoint_every: int = 0
    rollout_cap: int = ROLLOUT_CAP

    def __post_init__(self):
        if self.L < 1 or self.M < 2:
            raise ValidationError("need L >= 1 and M >= 2")
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValidationError("learning rate must be a finite non-negative number")
        if self.iterations < 0:
            raise ValidationError("iterations must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.variance_reduction not in _VARIANCE_REDUCTION:
            raise ValidationError(f"unknown variance reduction {self.variance_reduction!r}")
        if isinstance(self.kernel, str):
            if self.kernel not in ("median-batch", "median-data"):
                try:
                    object.__setattr__(self, "kernel", float(self.kernel))
                except ValueError:
                    raise ValidationError(f"unknown kernel source {self.kernel!r}") from None
        if not isinstance(self.kernel, str):
            KernelConfig(self.kernel)
        if self.init_bias is not None and self.init_bias != "data":
            try:
                object.__setattr__(self, "init_bias", float(self.init_bias))
            except ValueError:
                raise ValidationError(f"init_bias must be a number, 'data' or None; got {self.init_bias!r}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    mmd2: float
    mean_return: float
    grad_norm: float
    wall_ms: float


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class TrainState:
    iteration: int
    params: PolicyParams
    opt: OptimizerState
    trace: list[TraceRow] = field(default_factory=list)


# --------------------------------------------------------------- estimator

def returns_for(rewards: list[np.ndarray], variance_reduction: str) -> list[np.ndarray]:
    """Per-step weights multiplying each score term.

    ``full``: total reward of the rollout at every step. ``rtg``: reward from
    the step onward. ``rtg_baseline``: reward-to-go minus the mean
    reward-to-go at the same step index over the *other* rollouts that reach
    that step (zero if none do).

    Callers that score the censoring step append a zero reward for it, so it
    gets the total return (``full``), zero (``rtg``) or minus its baseline.
    """
    if variance_reduction == FULL_RETURN:
        return [np.full(r.size, r.sum()) for r in rewards]
    rtg = [np.cumsum(r[::-1])[::-1] for r in rewards]
    if variance_reduction == REWARD_TO_GO:
        return rtg
    if variance_reduction != REWARD_TO_GO_BASELINE:
        raise ValidationError(f"unknown variance reduction {variance_reduction!r}")
    width = max((g.size for g in rtg), default=0)
    total = np.zeros(width)
    count = np.zeros(width)
    for g in rtg:
        total[: g.size] += g
        count[: g.size] += 1
    out = []
    for g in rtg:
        n = g.size
        others = count[:n] - 1
        with np.errstate(invalid="ignore", divide="ignore"):
            b = np.where(others > 0, (total[:n] - g) / np.maximum(others, 1), 0.0)
        out.append(g - b)
    return out


def policy_gradient(
    expert: Dataset,
    samples: list[RolloutSample],
    params: PolicyParams,
    kernel: KernelConfig,
    variance_reduction: str = REWARD_TO_GO_BASELINE,
    expert_self_sum: float | None = None,
) -> tuple[np.ndarray, dict]:
    """Score-function estimate of the gradient of the expected reward.

    Returns the flat gradient and a dict with the batch ``mmd2`` and
    ``mean_return`` (average over rollouts of the summed leave-one-out reward).
    Under ``rtg_baseline`` the baselines come from :func:`coupled_baselines`;
    with only two rollouts plain reward-to-go is used instead.
    """
    if len(samples) < 2:
        raise ValidationError("policy_gradient needs at least two rollouts")
    learner = Dataset([s.sequence for s in samples], expert.window_end)
    est = RewardEstimator(expert, learner, kernel)
    rewards, blocks, mmd2 = est.learner_terms(expert_self_sum)
    baselines = None
    if variance_reduction == REWARD_TO_GO_BASELINE:
        baselines = coupled_baselines(rewards, blocks)
        if baselines is None:
            # with two rollouts no baseline is independent of the rollout
            variance_reduction = REWARD_TO_GO
    grad = score_gradient(params, samples, rewards, variance_reduction, baselines)
    mean_return = float(np.mean([r.sum() for r in rewards]))
    return grad, {"mmd2": mmd2, "mean_return": mean_return}


def _segment_rtg(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Reward-to-go within each segment ``values[offsets[m]:offsets[m+1]]``."""
    out = np.empty_like(values)
    for a, b in zip(offsets[:-1], offsets[1:]):
        out[a:b] = np.cumsum(values[a:b][::-1])[::-1]
    return out


def coupled_baselines(rewards: list[np.ndarray], blocks: np.ndarray) -> list[np.ndarray] | None:
    """Per-step baselines that do not depend on the rollout they are used for.

    Leave-one-out rewards couple the rollouts: rollout ``m``'s events enter
    every other rollout's reward. The baseline for ``m`` is therefore built
    from the others' rewards recomputed without ``m`` (learner mean over
    ``M - 2`` sequences), averaged per step index over the others that reach
    the step, the censoring step included. Returns ``None`` when ``M < 3``,
    where no such reward exists.

    ``rewards`` and ``blocks`` are as returned by
    :meth:`RewardEstimator.learner_terms`.
    """
    M = len(rewards)
    if M < 3:
        return None
    counts = np.array([r.size for r in rewards])
    if counts.sum() == 0:
        return [np.zeros(1) for _ in range(M)]
    offsets = np.zeros(M + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    seq_of = np.repeat(np.arange(M), counts)
    step_of = np.arange(offsets[-1]) - offsets[seq_of]
    # undo the (M - 1) learner average, then redo it without sequence m
    learner_sum = blocks.sum(axis=1) - blocks[np.arange(offsets[-1]), seq_of]
    expert_part = np.concatenate(rewards) + learner_sum / (M - 1)
    width = int(counts.max()) + 1
    # reach[i]: sequences with at least i events, i.e. that take step i
    reach = np.cumsum(np.bincount(counts, minlength=width)[::-1])[::-1]
    out = []
    for m in range(M):
        rtg = _segment_rtg(expert_part - (learner_sum - blocks[:, m]) / (M - 2), offsets)
        others = seq_of != m
        sums = np.bincount(step_of[others], weights=rtg[others], minlength=width)
        n_others = reach - (np.arange(width) <= counts[m])
        b = np.where(n_others > 0, sums / np.maximum(n_others, 1), 0.0)
        out.append(b[: counts[m] + 1])
    return out


def score_gradient(
    params: PolicyParams,
    samples: list[RolloutSample],
    rewards: list[np.ndarray],
    variance_reduction: str = REWARD_TO_GO_BASELINE,
    baselines: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Average over rollouts of the return-weighted trajectory score.

    ``rewards[m][i]`` is the reward of event ``i`` of rollout ``m``. For
    ``rtg_baseline``, ``baselines[m]`` (one entry per event plus the censoring
    step) replaces the default baseline of :func:`returns_for`, which is only
    unbiased when each rollout's rewards are independent of the others.
    """
    # the censoring step (no event before T) is the last step of every
    # trajectory; it earns no reward but its score keeps the estimator unbiased
    padded = [np.append(r, 0.0) for r in rewards]
    if variance_reduction == REWARD_TO_GO_BASELINE and baselines is not None:
        weights = [g - b for g, b in zip(returns_for(padded, REWARD_TO_GO), baselines)]
    else:
        weights = returns_for(padded, variance_reduction)
    grad = np.zeros(params.n_params)
    for s, w in zip(samples, weights):
        n = s.gaps.gaps.size
        tail = s.sequence.window_end - (float(s.sequence.times[-1]) if n else 0.0)
        grad += weighted_score(params, s.gaps.gaps, w[:n], survival=(w[n], tail), cache=(s.hidden, s.pre))
    return grad / len(samples)


# ----------------------------------------------------------------- stepping

class _ExpertGram:
    """Sequence-by-sequence kernel sums over the whole expert set, for a fixed bandwidth."""

    def __init__(self, expert: Dataset, kernel: KernelConfig):
        x, off = expert.pooled()
        per_point = block_sums(x, x, off, kernel)
        n = len(expert)
        self.G = np.zeros((n, n))
        nonempty = np.flatnonzero(np.diff(off) > 0)
        if nonempty.size:
            self.G[nonempty] = np.add.reduceat(per_point, off[:-1][nonempty], axis=0)

    def total(self, idx: np.ndarray) -> float:
        return float(self.G[np.ix_(idx, idx)].sum())


def _resolve_kernel(config: TrainConfig, expert: Dataset) -> KernelConfig | None:
    if config.kernel == "median-batch":
        return None
    if config.kernel == "median-data":
        return median_bandwidth(expert, seed=config.seed)
    return KernelConfig(float(config.kernel))


def _ascent(params: PolicyParams, grad: np.ndarray, opt: OptimizerState, config: TrainConfig) -> PolicyParams:
    x = params.flat()
    # overflow is reported below as NonFiniteUpdate
    with np.errstate(over="ignore", invalid="ignore"):
        if config.optimizer == "sgd":
            x = x + config.learning_rate * grad
        else:
            opt.t += 1
            opt.m = config.beta1 * opt.m + (1.0 - config.beta1) * grad
            opt.v = config.beta2 * opt.v + (1.0 - config.beta2) * grad * grad
            m_hat = opt.m / (1.0 - config.beta1**opt.t)
            v_hat = opt.v / (1.0 - config.beta2**opt.t)
            x = x + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    if not np.all(np.isfinite(x)):
        raise NonFiniteUpdate("a policy weight became non-finite")
    return PolicyParams.from_flat(x, params.d, params.dist)


def step(
    params: PolicyParams,
    expert: Dataset,
    config: TrainConfig,
    opt: OptimizerState,
    iteration: int,
    kernel: KernelConfig | None = None,
    gram: _ExpertGram | None = None,
) -> tuple[PolicyParams, TraceRow]:
    """One iteration: sample batches, estimate the gradient, update ``params``.

    ``opt`` is updated in place. ``kernel`` is the fixed bandwidth, or
    ``None`` to apply the median trick to this iteration's expert batch.
    """
    start = time.perf_counter()
    it_rng = RngStream(config.seed, (iteration,))
    idx = it_rng.child(0).generator().integers(0, len(expert), size=config.L)
    batch = expert.subset(idx)
    kcfg = kernel if kernel is not None else median_bandwidth(batch, seed=config.seed)
    samples = [
        rollout(params, expert.window_end, it_rng.child(1, m), config.rollout_cap)
        for m in range(config.M)
    ]
    ee = gram.total(idx) if gram is not None and kernel is not None else None
    grad, info = policy_gradient(batch, samples, params, kcfg, config.variance_reduction, ee)
    new_params = _ascent(params, grad, opt, config)
    row = TraceRow(
        iteration,
        info["mmd2"],
        info["mean_return"],
        float(np.linalg.norm(grad)),
        (time.perf_counter() - start) * 1e3,
    )
    return new_params, row


def initial_params(expert: Dataset, config: TrainConfig) -> PolicyParams:
    """Random weights; the output bias is ``config.init_bias`` when set.

    ``init_bias="data"`` picks the bias whose hazard equals the expert's mean
    event rate, so untrained rollouts already have about the right count.
    """
    params = init(config.d, config.seed, config.init_scale, config.dist)
    if config.init_bias == "data":
        rate = max(expert.total_events / (len(expert) * expert.window_end), 1e-3)
        if config.dist == EXPONENTIAL:
            theta = rate
        else:
            # Rayleigh mean gap is sqrt(pi / (2 theta))
            theta = math.pi / 2.0 * rate * rate
        c = float(np.log(np.expm1(theta))) if theta < 30 else theta
        params = replace(params, c=c)
    elif config.init_bias is not None:
        params = replace(params, c=float(config.init_bias))
    return params


def train(
    expert: Dataset,
    config: TrainConfig,
    *,
    params: PolicyParams | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: TrainState | None = None,
    callback: Callable[[TrainState], None] | None = None,
    timing: bool = True,
) -> tuple[PolicyParams, list[TraceRow]]:
    """Run ``config.iterations`` steps; returns final weights and the trace.

    With ``checkpoint_dir`` the final state is saved there, and with
    ``config.checkpoint_every > 0`` a checkpoint is also written every that
    many iterations (wall times zeroed unless
    ``timing``). ``resume`` continues from a state returned by
    :func:`load_checkpoint`.
    """
    if len(expert) < 1:
        raise ValidationError("expert dataset is empty")
    kernel = _resolve_kernel(config, expert)
    gram = None
    if kernel is not None and expert.total_events <= _GRAM_CACHE_LIMIT:
        gram = _ExpertGram(expert, kernel)
    if resume is not None:
        state = resume
    else:
        p0 = params if params is not None else initial_params(expert, config)
        state = TrainState(0, p0, OptimizerState.zeros(p0.n_params), [])
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    while state.iteration < config.iterations:
        state.params, row = step(state.params, expert, config, state.opt, state.iteration, kernel, gram)
        state.trace.append(row)
        state.iteration += 1
        if state.iteration % 100 == 0:
            log.info("iter %d mmd2 %.4g return %.4g", row.iteration, row.mmd2, row.mean_return)
        if ckpt_dir is not None and config.checkpoint_every > 0 and state.iteration % config.checkpoint_every == 0:
            save_checkpoint(ckpt_dir / f"checkpoint_{state.iteration:06d}.json", state, config, timing)
        if callback is not None:
            callback(state)
    if ckpt_dir is not None:
        save_checkpoint(ckpt_dir / f"checkpoint_{state.iteration:06d}.json", state, config, timing)
    return state.params, state.trace


# ----------------------------------------------------------------- file io

def write_trace_csv(trace: list[TraceRow], path, timing: bool = True) -> None:
    """Trace as CSV. With ``timing=False`` the wall-clock column is written as 0."""
    lines = [",".join(TRACE_HEADER)]
    for r in trace:
        wall = repr(float(r.wall_ms)) if timing else "0"
        lines.append(f"{r.iteration},{r.mmd2!r},{r.mean_return!r},{r.grad_norm!r},{wall}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_checkpoint(path, state: TrainState, config: TrainConfig, timing: bool = True) -> None:
    obj = {
        "format": "rlpp-train-checkpoint",
        "version": 1,
        "iteration": state.iteration,
        "config": config.to_dict(),
        "policy": params_to_dict(state.params),
        "optimizer": {"m": state.opt.m.tolist(), "v": state.opt.v.tolist(), "t": state.opt.t},
        "trace": [[r.iteration, r.mmd2, r.mean_return, r.grad_norm, r.wall_ms if timing else 0.0]
                  for r in state.trace],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    obj = json.loads(Path(path).read_text())
    if obj.get("format") != "rlpp-train-checkpoint":
        raise ValidationError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(obj["config"])
    params = params_from_dict(obj["policy"])
    opt = OptimizerState(np.array(obj["optimizer"]["m"]), np.array(obj["optimizer"]["v"]), int(obj["optimizer"]["t"]))
    trace = [TraceRow(int(r[0]), *map(float, r[1:])) for r in obj["trace"]]
    return TrainState(int(obj["iteration"]), params, opt, trace), config
