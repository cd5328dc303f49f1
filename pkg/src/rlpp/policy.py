"""Recurrent stochastic policy over inter-event times.

The policy draws gap ``a_i ~ pi(. | theta(h_{i-1}))`` and updates
``h_i = tanh(V a_i + W h_{i-1})`` from ``h_0 = 0``. The head is
``theta(h) = softplus(u . h + c) + 1e-6`` and ``pi`` is either

* exponential, density ``theta exp(-theta a)``, or
* Rayleigh, density ``theta a exp(-theta a^2 / 2)``.

Gradients are exact backpropagation through time with the sampled gaps held
fixed (score-function convention).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import kernels
from ._fallback import EPS, ROLLOUT_DONE, ROLLOUT_OVERFLOW, softplus
from .core import EventSequence, InterEventTimes, to_gaps
from .errors import RolloutOverflow, ValidationError
from .rng import RngStream

__all__ = [
    "EXPONENTIAL",
    "RAYLEIGH",
    "PolicyParams",
    "RolloutSample",
    "init",
    "theta_of",
    "sample_gap",
    "rollout",
    "rollouts",
    "log_likelihood",
    "grad_log_likelihood",
    "weighted_score",
    "implied_intensity",
    "implied_compensator_increments",
    "save_params",
    "load_params",
    "params_to_dict",
    "params_from_dict",
]

EXPONENTIAL = "exponential"
RAYLEIGH = "rayleigh"
_DIST_CODE = {EXPONENTIAL: 0, RAYLEIGH: 1}

ROLLOUT_CAP = 10_000
CHECKPOINT_FORMAT = "rlpp-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyParams:
    V: np.ndarray
    W: np.ndarray
    u: np.ndarray
    c: float
    dist: str = EXPONENTIAL

    def __post_init__(self):
        V = np.array(self.V, dtype=np.float64).reshape(-1)
        d = V.size
        W = np.array(self.W, dtype=np.float64).reshape(d, d)
        u = np.array(self.u, dtype=np.float64).reshape(d)
        for arr in (V, W, u):
            arr.setflags(write=False)
        if d < 1:
            raise ValidationError("hidden dimension must be at least 1")
        if self.dist not in _DIST_CODE:
            raise ValidationError(f"unknown output distribution {self.dist!r}")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "c", float(self.c))

    @property
    def d(self) -> int:
        return self.V.size

    @property
    def n_params(self) -> int:
        return self.d * self.d + 2 * self.d + 1

    def flat(self) -> np.ndarray:
        """Weights as one vector in the order V, W (row-major), u, c."""
        return np.concatenate([self.V, self.W.ravel(), self.u, [self.c]])

    @classmethod
    def from_flat(cls, x, d: int, dist: str = EXPONENTIAL) -> "PolicyParams":
        x = np.asarray(x, dtype=np.float64)
        if x.size != d * d + 2 * d + 1:
            raise ValidationError(f"expected {d * d + 2 * d + 1} weights, got {x.size}")
        return cls(x[:d], x[d:d + d * d], x[d + d * d:2 * d + d * d], float(x[-1]), dist)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.dist == other.dist and self.d == other.d and bool(np.all(self.flat() == other.flat()))

    @property
    def code(self) -> int:
        return _DIST_CODE[self.dist]


@dataclass(frozen=True)
class RolloutSample:
    """A generated sequence with the per-step state needed for gradients.

    ``hidden[k]`` is ``h_k`` and ``thetas[k] = theta(h_k)``; gap ``k`` (0-based)
    was drawn with ``thetas[k]``, and ``thetas[-1]`` is the parameter active
    when the window closed.
    """

    sequence: EventSequence
    gaps: InterEventTimes
    hidden: np.ndarray
    pre: np.ndarray

    @property
    def thetas(self) -> np.ndarray:
        return theta_of(self.pre)

    def __len__(self) -> int:
        return len(self.sequence)


def init(d: int, seed: int, scale: float, dist: str = EXPONENTIAL) -> PolicyParams:
    """Weights i.i.d. uniform on ``(-scale, scale)`` from ``RngStream(seed)``."""
    if d < 1:
        raise ValidationError("hidden dimension must be at least 1")
    if scale < 0:
        raise ValidationError("scale must be non-negative")
    gen = RngStream(seed, (0x696E6974,)).generator()
    x = gen.uniform(-scale, scale, size=d * d + 2 * d + 1) if scale > 0 else np.zeros(d * d + 2 * d + 1)
    return PolicyParams.from_flat(x, d, dist)


def theta_of(pre):
    return softplus(pre) + EPS


def _shape_terms(dist: str, a):
    """``f(a)`` with ``log pi = log theta - theta f(a) (+ log a for Rayleigh)``."""
    return a if dist == EXPONENTIAL else 0.5 * np.square(a)


def sample_gap(theta: float, dist: str, rng) -> float:
    """Inverse-CDF draw. ``rng`` is a Generator, or a uniform in ``[0, 1)``."""
    if theta <= 0:
        raise ValidationError("theta must be positive")
    u = rng.random() if isinstance(rng, np.random.Generator) else float(rng)
    e = -math.log1p(-u)  # -ln(U) with U = 1 - u in (0, 1]
    if dist == EXPONENTIAL:
        return e / theta
    if dist == RAYLEIGH:
        return math.sqrt(2.0 * e / theta)
    raise ValidationError(f"unknown output distribution {dist!r}")


def rollout(params: PolicyParams, T: float, rng: RngStream | np.random.Generator, cap: int = ROLLOUT_CAP) -> RolloutSample:
    """Generate events until the first draw at or after ``T`` (which is dropped)."""
    if T <= 0:
        raise ValidationError("T must be positive")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    # one uniform per drawn gap; extending the buffer keeps its prefix, so the
    # result does not depend on the chunk size
    uniforms = gen.random(64)
    while True:
        status, gaps, H, Z = kernels.rnn_rollout(
            params.V, params.W, params.u, params.c, params.code, uniforms, float(T), cap
        )
        if status == ROLLOUT_DONE:
            break
        if status == ROLLOUT_OVERFLOW:
            raise RolloutOverflow(f"rollout exceeded {cap} events before T={T}")
        uniforms = np.concatenate([uniforms, gen.random(uniforms.size)])
    seq = EventSequence(kernels.prefix_sums(gaps), T)
    return RolloutSample(seq, InterEventTimes(gaps), H, Z)


def rollouts(params: PolicyParams, T: float, n: int, rng: RngStream, cap: int = ROLLOUT_CAP) -> list[RolloutSample]:
    return [rollout(params, T, rng.child(i), cap) for i in range(n)]


def _forward(params: PolicyParams, gaps: np.ndarray):
    return kernels.rnn_forward(params.V, params.W, params.u, params.c, np.ascontiguousarray(gaps))


def _as_gaps(seq) -> tuple[np.ndarray, float]:
    if isinstance(seq, RolloutSample):
        return seq.gaps.gaps, seq.sequence.window_end
    if isinstance(seq, EventSequence):
        return to_gaps(seq).gaps, seq.window_end
    raise ValidationError(f"expected an EventSequence or RolloutSample, got {type(seq).__name__}")


def _loglik_terms(dist: str, theta: np.ndarray, gaps: np.ndarray) -> np.ndarray:
    terms = np.log(theta[:-1]) - theta[:-1] * _shape_terms(dist, gaps)
    if dist == RAYLEIGH:
        terms = terms + np.log(gaps)
    return terms


def log_likelihood(params: PolicyParams, seq, censored: bool = False) -> float:
    """Sum of log densities of the observed gaps.

    With ``censored=True`` the log-survival of the unfinished interval
    ``[t_N, T)`` is added, giving the proper point-process likelihood.
    """
    gaps, T = _as_gaps(seq)
    H, Z = _forward(params, gaps)
    theta = theta_of(Z)
    total = float(np.sum(_loglik_terms(params.dist, theta, gaps)))
    if censored:
        tail = T - (float(kernels.prefix_sums(gaps)[-1]) if gaps.size else 0.0)
        total -= float(theta[-1] * _shape_terms(params.dist, tail))
    return total


def weighted_score(
    params: PolicyParams,
    gaps: np.ndarray,
    step_weights=None,
    survival: tuple[float, float] | None = None,
    cache=None,
) -> np.ndarray:
    """Flat gradient of ``sum_i w_i log pi(a_i) + w_s log S(tail)``.

    ``step_weights[i]`` multiplies the score of gap ``i``; ``survival`` is
    ``(w_s, tail_length)`` or ``None``. ``cache`` may carry precomputed
    ``(H, Z)`` for these gaps.
    """
    gaps = np.ascontiguousarray(gaps, dtype=np.float64)
    N = gaps.size
    H, Z = cache if cache is not None else _forward(params, gaps)
    theta = theta_of(Z)
    w = np.ones(N) if step_weights is None else np.asarray(step_weights, dtype=np.float64)
    coef = np.zeros(N + 1)
    coef[:N] = w * (1.0 / theta[:N] - _shape_terms(params.dist, gaps))
    if survival is not None:
        ws, tail = survival
        coef[N] = -ws * _shape_terms(params.dist, tail)
    gV, gW, gu, gc = kernels.rnn_backward(params.V, params.W, params.u, gaps, H, Z, coef)
    return np.concatenate([gV, np.asarray(gW).ravel(), gu, [gc]])


def grad_log_likelihood(params: PolicyParams, seq, censored: bool = False) -> PolicyParams:
    """Exact gradient of :func:`log_likelihood`, shaped like the parameters."""
    gaps, T = _as_gaps(seq)
    cache = None
    if isinstance(seq, RolloutSample):
        cache = (seq.hidden, seq.pre)
    survival = None
    if censored:
        end = float(kernels.prefix_sums(gaps)[-1]) if gaps.size else 0.0
        survival = (1.0, T - end)
    g = weighted_score(params, gaps, survival=survival, cache=cache)
    return PolicyParams.from_flat(g, params.d, params.dist)


def _last_state(params: PolicyParams, seq: EventSequence, t: float) -> tuple[float, float]:
    times = seq.times[seq.times <= t] if isinstance(seq, EventSequence) else np.asarray(seq)
    gaps = to_gaps(EventSequence(times, np.inf)).gaps
    _, Z = _forward(params, gaps)
    t_last = float(times[-1]) if times.size else 0.0
    return float(theta_of(Z[-1])), t_last


def implied_intensity(params: PolicyParams, seq: EventSequence, t: float) -> float:
    """Hazard of the next gap at time ``t`` given the events up to ``t``."""
    theta, t_last = _last_state(params, seq, t)
    if params.dist == EXPONENTIAL:
        return theta
    return theta * (t - t_last)


def implied_compensator_increments(params: PolicyParams, seq: EventSequence) -> np.ndarray:
    """Integrated hazard over each inter-event interval of ``seq``."""
    gaps = to_gaps(seq).gaps
    _, Z = _forward(params, gaps)
    theta = theta_of(Z)[:-1]
    return theta * _shape_terms(params.dist, gaps)


# --------------------------------------------------------------- checkpoints

def params_to_dict(params: PolicyParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": params.d,
        "dist": params.dist,
        "V": params.V.tolist(),
        "W": params.W.ravel().tolist(),
        "u": params.u.tolist(),
        "c": params.c,
    }


def params_from_dict(obj: dict) -> PolicyParams:
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError("not a policy checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {obj.get('version')}")
    d = int(obj["d"])
    flat = np.concatenate([obj["V"], obj["W"], obj["u"], [obj["c"]]]).astype(np.float64)
    return PolicyParams.from_flat(flat, d, obj["dist"])


def save_params(params: PolicyParams, path, extra: dict | None = None) -> None:
    obj = params_to_dict(params)
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_params(path) -> PolicyParams:
    return params_from_dict(json.loads(Path(path).read_text()))
