"""Parametric intensities and exact samplers for the ground-truth processes.

Conventions
-----------
* Hawkes: ``lambda(t) = mu + alpha * sum_{t_i < t} decay * exp(-decay (t - t_i))``.
  The excitation kernel integrates to one, so ``alpha`` is the branching
  ratio and the stationary rate is ``mu / (1 - alpha)``.
* Self-correcting: ``lambda(t) = exp(mu t - alpha n(t))`` with ``n(t)`` the
  number of events strictly before ``t``.
* ``Sum`` components share one history: it is a single process whose
  intensity is the sum of the component intensities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

from ._backend import kernels
from .core import Dataset, EventSequence
from .errors import (
    DominatingRateOverflow,
    NegativeIntensity,
    UnknownPreset,
    ValidationError,
)
from .rng import RngStream

__all__ = [
    "Linear",
    "PiecewiseLinear",
    "Hawkes",
    "SelfCorrecting",
    "GaussianMixture",
    "Sum",
    "IntensitySpec",
    "check_spec",
    "intensity_at",
    "compensator",
    "compensator_increments",
    "simulate",
    "simulate_dataset",
    "preset",
    "PRESETS",
    "spec_to_dict",
    "spec_from_dict",
]

MAX_RATE = 1e6
_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class Linear:
    a: float
    b: float


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear rate.

    ``knots[k]`` is where piece ``k`` starts (``knots[0]`` is usually 0),
    ``intercept`` is the value at ``knots[0]`` and the last slope extends to
    infinity. Before ``knots[0]`` the rate is constant at ``intercept``.
    """

    knots: tuple[float, ...]
    slopes: tuple[float, ...]
    intercept: float

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        if len(self.knots) != len(self.slopes) or not self.knots:
            raise ValidationError("PiecewiseLinear needs one slope per knot")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValidationError("PiecewiseLinear knots must be strictly increasing")

    def _widths(self) -> np.ndarray:
        k = np.asarray(self.knots)
        return np.append(np.diff(k), np.inf)

    def values_at_knots(self, T: float) -> np.ndarray:
        k = np.asarray(self.knots)
        pts = np.append(k[k < T], T)
        return np.array([self.rate(p) for p in pts])

    def rate(self, t):
        k = np.asarray(self.knots)
        s = np.asarray(self.slopes)
        t = np.asarray(t, dtype=np.float64)
        x = np.clip(t[..., None] - k, 0.0, self._widths())
        return self.intercept + np.sum(s * x, axis=-1)

    def antiderivative(self, t):
        """Integral of the rate from ``knots[0]`` to ``t`` (t >= knots[0])."""
        k = np.asarray(self.knots)
        s = np.asarray(self.slopes)
        w = self._widths()
        t = np.asarray(t, dtype=np.float64)
        x = t[..., None] - k
        inside = np.clip(x, 0.0, w)
        # integral of clip(y - k, 0, w) dy from k0 to t
        g = 0.5 * inside**2 + np.where(x > w, w * (x - w), 0.0)
        return self.intercept * (t - k[0]) + np.sum(s * g, axis=-1)


@dataclass(frozen=True)
class Hawkes:
    mu: float
    alpha: float
    decay: float = 1.0


@dataclass(frozen=True)
class SelfCorrecting:
    mu: float
    alpha: float


@dataclass(frozen=True)
class GaussianMixture:
    """History-free rate ``sum_k w_k exp(-(t - c_k)^2 / (2 s_k^2))``."""

    weights: tuple[float, ...]
    centers: tuple[float, ...]
    widths: tuple[float, ...]

    def __post_init__(self):
        for name in ("weights", "centers", "widths"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (len(self.weights) == len(self.centers) == len(self.widths)):
            raise ValidationError("GaussianMixture fields must have equal length")

    def rate(self, t):
        t = np.asarray(t, dtype=np.float64)
        w, c, s = (np.asarray(v) for v in (self.weights, self.centers, self.widths))
        return np.sum(w * np.exp(-0.5 * ((t[..., None] - c) / s) ** 2), axis=-1)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        w, c, s = (np.asarray(v) for v in (self.weights, self.centers, self.widths))
        return np.sum(w * s * _SQRT_HALF_PI * erf((t[..., None] - c) / (_SQRT2 * s)), axis=-1)

    def sup_on(self, lo: float, hi: float) -> float:
        total = 0.0
        for w, c, s in zip(self.weights, self.centers, self.widths):
            x = min(max(c, lo), hi)
            total += w * math.exp(-0.5 * ((x - c) / s) ** 2)
        return total


@dataclass(frozen=True)
class Sum:
    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        flat = []
        for c in self.components:
            flat.extend(c.components if isinstance(c, Sum) else [c])
        object.__setattr__(self, "components", tuple(flat))


IntensitySpec = Linear | PiecewiseLinear | Hawkes | SelfCorrecting | GaussianMixture | Sum


def _parts(spec) -> tuple:
    return spec.components if isinstance(spec, Sum) else (spec,)


def _history(history, t=None) -> np.ndarray:
    if history is None:
        h = np.zeros(0)
    elif isinstance(history, EventSequence):
        h = history.times
    else:
        h = np.asarray(history, dtype=np.float64)
    if t is not None:
        h = h[: np.searchsorted(h, t, side="left")]
    return h


# ---------------------------------------------------------------- validation

def check_spec(spec, T: float | None = None) -> None:
    """Raise if ``spec`` is malformed, or negative somewhere on ``[0, T)``."""
    for p in _parts(spec):
        if isinstance(p, Linear):
            if T is not None:
                lo = min(p.b, p.a * T + p.b)
                if lo < 0:
                    root = -p.b / p.a
                    raise NegativeIntensity(
                        f"Linear({p.a}, {p.b}) goes negative at t={root:g} < T={T:g}"
                    )
        elif isinstance(p, PiecewiseLinear):
            if T is not None:
                v = p.values_at_knots(T)
                if v.min() < 0:
                    raise NegativeIntensity(f"PiecewiseLinear rate reaches {v.min():g} on [0, {T:g})")
        elif isinstance(p, Hawkes):
            if not (p.mu > 0 and 0 <= p.alpha < 1 and p.decay > 0):
                raise ValidationError(
                    f"Hawkes needs mu > 0, 0 <= alpha < 1, decay > 0; got {p}"
                )
        elif isinstance(p, SelfCorrecting):
            if not (p.mu > 0 and p.alpha > 0):
                raise ValidationError(f"SelfCorrecting needs mu > 0 and alpha > 0; got {p}")
        elif isinstance(p, GaussianMixture):
            if any(w < 0 for w in p.weights) or any(s <= 0 for s in p.widths):
                raise ValidationError("GaussianMixture needs weights >= 0 and widths > 0")
        else:
            raise ValidationError(f"unknown intensity component {p!r}")


# ----------------------------------------------------------------- intensity

def _part_rate(p, t: float, h: np.ndarray) -> float:
    if isinstance(p, Linear):
        v = p.a * t + p.b
    elif isinstance(p, PiecewiseLinear):
        v = float(p.rate(t))
    elif isinstance(p, GaussianMixture):
        return float(p.rate(t))
    elif isinstance(p, Hawkes):
        return p.mu + p.alpha * p.decay * float(np.sum(np.exp(-p.decay * (t - h))))
    elif isinstance(p, SelfCorrecting):
        return math.exp(p.mu * t - p.alpha * h.size)
    else:
        raise ValidationError(f"unknown intensity component {p!r}")
    if v < 0:
        raise NegativeIntensity(f"{p} evaluates to {v:g} at t={t:g}")
    return v


def intensity_at(spec, history, t: float) -> float:
    """Conditional intensity at ``t`` given the events of ``history`` before ``t``."""
    h = _history(history, t)
    return float(sum(_part_rate(p, t, h) for p in _parts(spec)))


# --------------------------------------------------------------- compensator

def _part_integral(p, s: float, e: float, h: np.ndarray) -> float:
    """Integral over [s, e] with ``h`` = all events before ``e``."""
    if isinstance(p, Linear):
        if min(p.a * s + p.b, p.a * e + p.b) < 0:
            raise NegativeIntensity(f"{p} is negative on [{s:g}, {e:g}]")
        return (e - s) * (0.5 * p.a * (e + s) + p.b)
    if isinstance(p, PiecewiseLinear):
        if min(p.rate(s), p.rate(e), *[p.rate(k) for k in p.knots if s < k < e]) < 0:
            raise NegativeIntensity(f"{p} is negative on [{s:g}, {e:g}]")
        return float(p.antiderivative(e) - p.antiderivative(s))
    if isinstance(p, GaussianMixture):
        return float(p.antiderivative(e) - p.antiderivative(s))
    if isinstance(p, Hawkes):
        start = np.maximum(s, h)
        exc = np.exp(-p.decay * (start - h)) - np.exp(-p.decay * (e - h))
        return p.mu * (e - s) + p.alpha * float(np.sum(exc))
    if isinstance(p, SelfCorrecting):
        # split [s, e] at the events inside it; n events before each piece
        cuts = h[(h > s) & (h < e)]
        n0 = int(np.searchsorted(h, s, side="left"))
        n0 += int(np.sum(h == s))
        bounds = np.concatenate([[s], cuts, [e]])
        n = n0 + np.arange(bounds.size - 1)
        a, b = bounds[:-1], bounds[1:]
        return float(np.sum(np.exp(p.mu * a - p.alpha * n) * np.expm1(p.mu * (b - a)) / p.mu))
    raise ValidationError(f"unknown intensity component {p!r}")


def compensator(spec, sequence, t_start: float, t_end: float) -> float:
    """Integral of the conditional intensity over ``[t_start, t_end]``."""
    if t_end < t_start:
        raise ValidationError("t_end must not precede t_start")
    if t_end == t_start:
        return 0.0
    h = _history(sequence, t_end)
    return float(sum(_part_integral(p, t_start, t_end, h) for p in _parts(spec)))


def compensator_increments(spec, sequence) -> np.ndarray:
    """Compensator over each inter-event interval ``(t_{i-1}, t_i]`` with ``t_0 = 0``.

    Linear in the number of events for every variant.
    """
    t = _history(sequence)
    out = np.zeros(t.size)
    if t.size == 0:
        return out
    prev = np.concatenate([[0.0], t[:-1]])
    dt = t - prev
    for p in _parts(spec):
        if isinstance(p, Linear):
            out += dt * (0.5 * p.a * (t + prev) + p.b)
        elif isinstance(p, (PiecewiseLinear, GaussianMixture)):
            F = p.antiderivative(np.concatenate([[0.0], t]))
            out += np.diff(F)
        elif isinstance(p, Hawkes):
            A = kernels.hawkes_excitation(np.ascontiguousarray(t), float(p.decay))
            # excitation mass alive just after t_{i-1}, including that event
            alive = np.concatenate([[0.0], 1.0 + A[:-1]])
            out += p.mu * dt - p.alpha * alive * np.expm1(-p.decay * dt)
        elif isinstance(p, SelfCorrecting):
            n = np.arange(t.size)
            out += np.exp(p.mu * prev - p.alpha * n) * np.expm1(p.mu * dt) / p.mu
        else:
            raise ValidationError(f"unknown intensity component {p!r}")
    return out


# ----------------------------------------------------------------- sampling

class _State:
    """Running state of a spec along a partially generated path."""

    def __init__(self, spec):
        self.parts = _parts(spec)
        self.n = 0
        self.t_last = 0.0
        # per Hawkes part: excitation sum_j decay*exp(-decay(t_last - t_j))
        self.excite = [0.0] * len(self.parts)
        self.increasing = any(
            isinstance(p, SelfCorrecting) for p in self.parts
        )

    def knots(self, T: float) -> list[float]:
        ks = set()
        for p in self.parts:
            if isinstance(p, PiecewiseLinear):
                ks.update(k for k in p.knots if 0 < k < T)
            elif isinstance(p, GaussianMixture):
                ks.update(c for c in p.centers if 0 < c < T)
        return sorted(ks)

    def add_event(self, t: float) -> None:
        for i, p in enumerate(self.parts):
            if isinstance(p, Hawkes):
                self.excite[i] = self.excite[i] * math.exp(-p.decay * (t - self.t_last)) + p.decay
        self.n += 1
        self.t_last = t

    def rate(self, t: float) -> float:
        total = 0.0
        for i, p in enumerate(self.parts):
            if isinstance(p, Hawkes):
                total += p.mu + p.alpha * self.excite[i] * math.exp(-p.decay * (t - self.t_last))
            elif isinstance(p, SelfCorrecting):
                total += math.exp(p.mu * t - p.alpha * self.n)
            elif isinstance(p, Linear):
                total += p.a * t + p.b
            elif isinstance(p, PiecewiseLinear):
                total += float(p.rate(t))
            else:
                total += float(p.rate(t))
        return total

    def bound(self, lo: float, hi: float) -> float:
        """Supremum of the rate on ``(lo, hi]`` if no event occurs there."""
        total = 0.0
        for i, p in enumerate(self.parts):
            if isinstance(p, Hawkes):
                total += p.mu + p.alpha * self.excite[i] * math.exp(-p.decay * (lo - self.t_last))
            elif isinstance(p, SelfCorrecting):
                total += math.exp(p.mu * hi - p.alpha * self.n)
            elif isinstance(p, Linear):
                total += max(p.a * lo + p.b, p.a * hi + p.b)
            elif isinstance(p, PiecewiseLinear):
                # [lo, hi] never straddles a knot, so the max is at an end
                total += max(float(p.rate(lo)), float(p.rate(hi)))
            else:
                total += p.sup_on(lo, hi)
        return total


def _thinning(spec, T: float, gen: np.random.Generator, max_rate: float, horizon: float) -> np.ndarray:
    state = _State(spec)
    knots = state.knots(T)
    ki = 0
    events = []
    t = 0.0
    while t < T:
        while ki < len(knots) and knots[ki] <= t:
            ki += 1
        t_end = min(T, knots[ki] if ki < len(knots) else T, t + horizon)
        lam_bar = state.bound(t, t_end)
        if lam_bar > max_rate:
            raise DominatingRateOverflow(
                f"dominating rate {lam_bar:.3g} exceeds cap {max_rate:.3g} at t={t:.6g}"
            )
        if lam_bar <= 0:
            t = t_end
            continue
        t_c = t + gen.standard_exponential() / lam_bar
        if t_c >= t_end:
            t = t_end
            continue
        lam = state.rate(t_c)
        if lam < 0:
            raise NegativeIntensity(f"intensity {lam:g} at t={t_c:g}")
        if gen.random() * lam_bar < lam:
            events.append(t_c)
            state.add_event(t_c)
        t = t_c
    return np.array(events)


def _self_correcting_inversion(p: SelfCorrecting, T: float, gen: np.random.Generator, cap: int) -> np.ndarray:
    # On (t_n, t_{n+1}] the compensator is exp(-n alpha)(e^{mu t} - e^{mu t_n}) / mu,
    # so t_{n+1} = log(e^{mu t_n} + mu E e^{n alpha}) / mu with E ~ Exp(1).
    events = []
    t = 0.0
    log_mu = math.log(p.mu)
    n = 0
    while True:
        e = gen.standard_exponential()
        t = np.logaddexp(p.mu * t, log_mu + math.log(e) + n * p.alpha) / p.mu
        if t >= T:
            break
        if events and t <= events[-1]:
            t = math.nextafter(events[-1], math.inf)
        events.append(float(t))
        n += 1
        if n > cap:
            raise DominatingRateOverflow(f"self-correcting path exceeded {cap} events")
    return np.array(events)


def simulate(
    spec,
    T: float,
    rng: RngStream,
    *,
    method: str = "auto",
    max_rate: float = MAX_RATE,
    horizon: float = 1.0,
) -> EventSequence:
    """Draw one path on ``[0, T)``.

    ``method`` is ``"thinning"``, ``"inversion"`` (a lone ``SelfCorrecting``
    only) or ``"auto"``, which picks inversion when it applies. Thinning uses
    a local dominating rate on windows no longer than ``horizon`` (only
    binding when some component can increase between events) and split at
    every knot of the piecewise parts.
    """
    check_spec(spec, T)
    gen = rng.generator()
    lone_sc = isinstance(spec, SelfCorrecting)
    if method == "inversion" and not lone_sc:
        raise ValidationError("inversion sampling is only available for SelfCorrecting")
    if method not in ("auto", "thinning", "inversion"):
        raise ValidationError(f"unknown sampling method {method!r}")
    if lone_sc and method != "thinning":
        times = _self_correcting_inversion(spec, T, gen, int(max_rate * T))
    else:
        state_has_increase = any(isinstance(p, (SelfCorrecting, Linear, PiecewiseLinear, GaussianMixture)) for p in _parts(spec))
        times = _thinning(spec, T, gen, max_rate, horizon if state_has_increase else math.inf)
    return EventSequence(times, T)


def simulate_dataset(spec, T: float, n: int, rng: RngStream, **kwargs) -> Dataset:
    """``n`` independent paths; path ``i`` uses the stream ``rng.child(i)``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    check_spec(spec, T)
    return Dataset([simulate(spec, T, rng.child(i), **kwargs) for i in range(n)], T)


# ------------------------------------------------------------------- presets

def _piecewise_preset(slopes: Sequence[float], T: float, floor: float = 0.5) -> PiecewiseLinear:
    w = T / len(slopes)
    knots = tuple(w * k for k in range(len(slopes)))
    offsets = np.cumsum(np.asarray(slopes) * w)
    intercept = floor - min(0.0, float(offsets.min()))
    return PiecewiseLinear(knots, tuple(slopes), intercept)


def preset(name: str, T: float = 15.0):
    """One of the four ground-truth processes: IP, HP, IP_HP1, IP_HP2."""
    key = name.upper().replace("+", "_").replace("-", "_")
    if key == "IP":
        return Linear(-0.2, 3.5)
    if key == "HP":
        return Hawkes(2.0, 0.5, 1.0)
    if key == "IP_HP1":
        return Sum((_piecewise_preset((0.2, 0.3, 0.4, 0.5), T), Hawkes(1.0, 0.5, 1.0)))
    if key == "IP_HP2":
        return Sum((_piecewise_preset((1.0, -1.0, 2.0, -2.0), T), Hawkes(1.0, 0.1, 1.0)))
    raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("IP", "HP", "IP_HP1", "IP_HP2")


# ------------------------------------------------------------ serialization

def spec_to_dict(spec) -> dict:
    if isinstance(spec, Sum):
        return {"type": "sum", "components": [spec_to_dict(p) for p in spec.components]}
    if isinstance(spec, Linear):
        return {"type": "linear", "a": spec.a, "b": spec.b}
    if isinstance(spec, PiecewiseLinear):
        return {"type": "piecewise_linear", "knots": list(spec.knots),
                "slopes": list(spec.slopes), "intercept": spec.intercept}
    if isinstance(spec, Hawkes):
        return {"type": "hawkes", "mu": spec.mu, "alpha": spec.alpha, "decay": spec.decay}
    if isinstance(spec, SelfCorrecting):
        return {"type": "self_correcting", "mu": spec.mu, "alpha": spec.alpha}
    if isinstance(spec, GaussianMixture):
        return {"type": "gaussian_mixture", "weights": list(spec.weights),
                "centers": list(spec.centers), "widths": list(spec.widths)}
    raise ValidationError(f"unknown intensity spec {spec!r}")


def spec_from_dict(d: dict):
    try:
        kind = d["type"]
        if kind == "sum":
            return Sum(tuple(spec_from_dict(c) for c in d["components"]))
        if kind == "linear":
            return Linear(float(d["a"]), float(d["b"]))
        if kind == "piecewise_linear":
            return PiecewiseLinear(tuple(d["knots"]), tuple(d["slopes"]), float(d["intercept"]))
        if kind == "hawkes":
            return Hawkes(float(d["mu"]), float(d["alpha"]), float(d.get("decay", 1.0)))
        if kind == "self_correcting":
            return SelfCorrecting(float(d["mu"]), float(d["alpha"]))
        if kind == "gaussian_mixture":
            return GaussianMixture(tuple(d["weights"]), tuple(d["centers"]), tuple(d["widths"]))
        if kind == "preset":
            return preset(d["name"], float(d.get("T", 15.0)))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed intensity spec {d!r}: {exc}") from exc
    raise ValidationError(f"unknown intensity spec type {kind!r}")
