"""Maximum-likelihood baselines: Hawkes, self-correcting, Gaussian-mixture
Poisson, and likelihood training of the policy network.

The parametric fits maximize the pooled log-likelihood with bound-constrained
L-BFGS-B. Objectives are divided by the total event count before optimizing so
that tolerances do not depend on the dataset size; reported log-likelihoods
are the unscaled sums.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import erf

from ._backend import kernels
from .core import Dataset, to_gaps
from .errors import DegenerateData, NonConvergence, NonFiniteUpdate, ValidationError
from .policy import EXPONENTIAL, PolicyParams, init, log_likelihood, params_from_dict, params_to_dict, weighted_score
from .simulate import GaussianMixture, Hawkes, SelfCorrecting

__all__ = [
    "HawkesFit",
    "SelfCorrectingFit",
    "GaussianMixtureIntensity",
    "InhomogeneousPoissonFit",
    "PolicyMLEFit",
    "hawkes_log_likelihood",
    "self_correcting_log_likelihood",
    "mixture_log_likelihood",
    "policy_mle_objective",
    "fit_hawkes",
    "fit_self_correcting",
    "fit_inhomogeneous_poisson",
    "fit_policy_mle",
    "fit_to_dict",
    "fit_from_dict",
    "save_fit",
    "load_fit",
]

GaussianMixtureIntensity = GaussianMixture

FIT_FORMAT = "rlpp-fit"
_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_ALPHA_MAX = 1.0 - 1e-9
_POS_MIN = 1e-10


@dataclass(frozen=True)
class HawkesFit:
    mu: float
    alpha: float
    log_likelihood: float
    decay: float = 1.0
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def spec(self) -> Hawkes:
        return Hawkes(self.mu, self.alpha, self.decay)


@dataclass(frozen=True)
class SelfCorrectingFit:
    mu: float
    alpha: float
    log_likelihood: float
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def spec(self) -> SelfCorrecting:
        return SelfCorrecting(self.mu, self.alpha)


@dataclass(frozen=True)
class InhomogeneousPoissonFit:
    intensity: GaussianMixture
    log_likelihood: float
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def spec(self) -> GaussianMixture:
        return self.intensity


@dataclass(frozen=True)
class PolicyMLEFit:
    params: PolicyParams
    log_likelihood: float
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def spec(self) -> PolicyParams:
        return self.params


# ------------------------------------------------------------- optimizer

def _maximize(fun, x0, bounds, tol: float, max_iter: int, scale: float):
    """Maximize ``fun`` (returning value and gradient) within box ``bounds``.

    Returns ``(x, value, history)`` where ``history`` holds the objective at
    each accepted iterate.
    """
    history: list[float] = []

    def neg(x):
        v, g = fun(x)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(x)
        return -v / scale, -np.asarray(g) / scale

    def record(x):
        history.append(float(fun(x)[0]))

    x0 = np.asarray(x0, dtype=np.float64)
    history.append(float(fun(x0)[0]))
    res = minimize(
        neg,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=record,
        options={"maxiter": max_iter, "ftol": 0.0, "gtol": tol, "maxls": 50},
    )
    x = res.x
    value, g = fun(x)
    if not np.isfinite(value):
        raise NonConvergence(f"optimizer ended at a non-finite log-likelihood: {res.message}")
    if res.status == 1:
        raise NonConvergence(f"no convergence after {max_iter} iterations (|g| = {np.linalg.norm(g) / scale:.3g})")
    if res.status != 0:
        # line-search stalls at machine precision count as converged when the
        # projected gradient is already small
        lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
        pg = np.clip(x + np.asarray(g) / scale, lo, hi) - x
        if np.linalg.norm(pg) > max(1e3 * tol, 1e-6):
            raise NonConvergence(f"optimizer stopped early: {res.message}")
    return x, float(value), tuple(history)


def _nonempty(data: Dataset, minimum: int = 1) -> np.ndarray:
    if len(data) == 0:
        raise DegenerateData("the dataset has no sequences")
    if data.total_events < minimum:
        raise DegenerateData(f"need at least {minimum} events in total, got {data.total_events}")
    x, _ = data.pooled()
    return x


# --------------------------------------------------------------- Hawkes

class _HawkesStats:
    def __init__(self, data: Dataset, decay: float):
        self.n_seq = len(data)
        self.T = data.window_end
        A, tail = [], 0.0
        for s in data:
            t = np.ascontiguousarray(s.times)
            A.append(decay * kernels.hawkes_excitation(t, decay))
            tail += float(np.sum(-np.expm1(-decay * (self.T - t))))
        self.A = np.concatenate(A) if A else np.zeros(0)
        self.tail = tail

    def value_grad(self, mu: float, alpha: float):
        lam = mu + alpha * self.A
        if np.any(lam <= 0):
            return -np.inf, np.zeros(2)
        inv = 1.0 / lam
        ll = float(np.sum(np.log(lam))) - mu * self.n_seq * self.T - alpha * self.tail
        g = np.array([np.sum(inv) - self.n_seq * self.T, np.dot(inv, self.A) - self.tail])
        return ll, g


def hawkes_log_likelihood(data: Dataset, mu: float, alpha: float, decay: float = 1.0) -> float:
    return _HawkesStats(data, decay).value_grad(mu, alpha)[0]


def fit_hawkes(
    data: Dataset,
    init: tuple[float, float] | None = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
    decay: float = 1.0,
) -> HawkesFit:
    """Fit ``(mu, alpha)`` of a Hawkes process with fixed ``decay``."""
    _nonempty(data, 2)
    st = _HawkesStats(data, decay)
    n = data.total_events
    if init is None:
        init = (0.5 * n / (len(data) * data.window_end), 0.5)
    x, ll, hist = _maximize(
        lambda x: st.value_grad(x[0], x[1]),
        np.array(init, dtype=np.float64),
        [(_POS_MIN, None), (_POS_MIN, _ALPHA_MAX)],
        tol,
        max_iter,
        float(n),
    )
    return HawkesFit(float(x[0]), float(x[1]), ll, decay, hist)


# ------------------------------------------------------- self-correcting

class _SelfCorrectingStats:
    def __init__(self, data: Dataset):
        self.T = data.window_end
        starts, ends, counts = [], [], []
        ev_t, ev_n = [], []
        for s in data:
            t = s.times
            k = np.arange(t.size + 1, dtype=np.float64)
            starts.append(np.concatenate([[0.0], t]))
            ends.append(np.concatenate([t, [self.T]]))
            counts.append(k)
            ev_t.append(t)
            ev_n.append(k[:-1])
        self.a = np.concatenate(starts)
        self.b = np.concatenate(ends)
        self.k = np.concatenate(counts)
        self.sum_t = float(np.sum(np.concatenate(ev_t))) if ev_t else 0.0
        self.sum_n = float(np.sum(np.concatenate(ev_n))) if ev_n else 0.0

    def value_grad(self, mu: float, alpha: float):
        # integral of exp(mu t - k alpha) over [a, b] and its derivatives
        d = self.b - self.a
        e_a = np.exp(mu * self.a - alpha * self.k)
        q = np.expm1(mu * d) / mu  # integral of exp(mu s) over [0, d]
        I = e_a * q
        # d/dmu of integral of exp(mu t) over [a, b] = integral of t exp(mu t)
        dq = (d * np.exp(mu * d) - q) / mu
        dI_mu = e_a * (self.a * q + dq)
        ll = mu * self.sum_t - alpha * self.sum_n - float(np.sum(I))
        g = np.array([self.sum_t - float(np.sum(dI_mu)), -self.sum_n + float(np.dot(self.k, I))])
        if not np.all(np.isfinite(g)) or not math.isfinite(ll):
            return -np.inf, np.zeros(2)
        return ll, g


def self_correcting_log_likelihood(data: Dataset, mu: float, alpha: float) -> float:
    return _SelfCorrectingStats(data).value_grad(mu, alpha)[0]


def fit_self_correcting(
    data: Dataset,
    init: tuple[float, float] = (0.5, 0.5),
    tol: float = 1e-8,
    max_iter: int = 1000,
) -> SelfCorrectingFit:
    """Fit ``(mu, alpha)`` of ``exp(mu t - n(t) alpha)``."""
    _nonempty(data, 1)
    st = _SelfCorrectingStats(data)
    x, ll, hist = _maximize(
        lambda x: st.value_grad(x[0], x[1]),
        np.array(init, dtype=np.float64),
        [(1e-8, None), (_POS_MIN, None)],
        tol,
        max_iter,
        float(data.total_events),
    )
    return SelfCorrectingFit(float(x[0]), float(x[1]), ll, hist)


# -------------------------------------------------- Gaussian mixture Poisson

def _mixture_value_grad(x: np.ndarray, events: np.ndarray, n_seq: int, T: float):
    K = x.size // 3
    w, c, s = x[:K], x[K:2 * K], x[2 * K:]
    z = (events[:, None] - c) / s
    e = np.exp(-0.5 * z * z)
    lam = e @ w
    if np.any(lam <= 0):
        return -np.inf, np.zeros_like(x)
    r = 1.0 / lam
    # event term derivatives
    gw = r @ e
    gc = r @ (e * z / s) * w
    gs = r @ (e * z * z / s) * w
    # compensator over [0, T)
    z0, z1 = (0.0 - c) / s, (T - c) / s
    derf = erf(z1 / _SQRT2) - erf(z0 / _SQRT2)
    g0, g1 = np.exp(-0.5 * z0 * z0), np.exp(-0.5 * z1 * z1)
    mass = s * _SQRT_HALF_PI * derf
    I = float(np.dot(w, mass))
    dI_w = mass
    dI_c = w * (g0 - g1)
    dI_s = w * (_SQRT_HALF_PI * derf - (g1 * z1 - g0 * z0))
    ll = float(np.sum(np.log(lam))) - n_seq * I
    g = np.concatenate([gw - n_seq * dI_w, gc - n_seq * dI_c, gs - n_seq * dI_s])
    return ll, g


def mixture_log_likelihood(data: Dataset, mixture: GaussianMixture) -> float:
    x = np.concatenate([mixture.weights, mixture.centers, mixture.widths])
    events, _ = data.pooled()
    return _mixture_value_grad(x, events, len(data), data.window_end)[0]


def fit_inhomogeneous_poisson(
    data: Dataset,
    K: int = 4,
    tol: float = 1e-8,
    max_iter: int = 2000,
    starts: int = 3,
) -> InhomogeneousPoissonFit:
    """Fit a history-free intensity made of ``K`` Gaussian bumps.

    Centers start on a uniform grid over ``[0, T)``; the starts differ in
    their initial width. The best start by log-likelihood is returned.
    """
    if K < 1:
        raise ValidationError("K must be at least 1")
    events = _nonempty(data, 1)
    T, n_seq = data.window_end, len(data)
    rate = data.total_events / (n_seq * T)
    centers = (np.arange(K) + 0.5) * T / K
    bounds = [(0.0, None)] * K + [(-T, 2.0 * T)] * K + [(1e-3 * T, 10.0 * T)] * K
    best = None
    for j in range(starts):
        width = (T / K) * (0.5, 1.0, 2.0, 4.0, 0.25)[j % 5]
        # weights matching the mean rate at the window center
        bump = np.exp(-0.5 * ((T / 2 - centers) / width) ** 2)
        w0 = np.full(K, rate / max(bump.sum(), 1e-12))
        x0 = np.concatenate([w0, centers, np.full(K, width)])
        try:
            x, ll, hist = _maximize(
                lambda x: _mixture_value_grad(x, events, n_seq, T),
                x0, bounds, tol, max_iter, float(data.total_events),
            )
        except NonConvergence:
            continue
        if best is None or ll > best[1]:
            best = (x, ll, hist)
    if best is None:
        raise NonConvergence(f"no start of the {K}-component mixture converged")
    x, ll, hist = best
    mix = GaussianMixture(tuple(x[:K]), tuple(x[K:2 * K]), tuple(x[2 * K:]))
    return InhomogeneousPoissonFit(mix, ll, hist)


# ------------------------------------------------------------ policy MLE

def policy_mle_objective(params: PolicyParams, data: Dataset) -> tuple[float, np.ndarray]:
    """Censored log-likelihood summed over sequences, with its flat gradient."""
    total = 0.0
    grad = np.zeros(params.n_params)
    T = data.window_end
    for s in data:
        gaps = to_gaps(s).gaps
        tail = T - (float(s.times[-1]) if len(s) else 0.0)
        total += log_likelihood(params, s, censored=True)
        grad += weighted_score(params, gaps, survival=(1.0, tail))
    return total, grad


def fit_policy_mle(
    data: Dataset,
    d: int = 64,
    dist: str = EXPONENTIAL,
    seed: int = 0,
    init_scale: float = 0.1,
    iterations: int = 500,
    learning_rate: float = 1e-3,
    freeze_recurrent: bool = False,
    params: PolicyParams | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> PolicyMLEFit:
    """Full-batch Adam ascent on the censored log-likelihood of the policy.

    With ``freeze_recurrent`` the input and recurrent weights keep their
    initial values and only the output head is trained.
    """
    _nonempty(data, 1)
    p = params if params is not None else init(d, seed, init_scale, dist)
    x = p.flat()
    n = x.size
    dd = p.d
    mask = np.ones(n)
    if freeze_recurrent:
        mask[: dd + dd * dd] = 0.0
    m = np.zeros(n)
    v = np.zeros(n)
    history = []
    for it in range(1, iterations + 1):
        ll, g = policy_mle_objective(p, data)
        history.append(ll)
        g = g * mask
        # overflow is reported below as NonFiniteUpdate
        with np.errstate(over="ignore", invalid="ignore"):
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            x = x + learning_rate * (m / (1 - beta1**it)) / (np.sqrt(v / (1 - beta2**it)) + eps)
        if not np.all(np.isfinite(x)):
            raise NonFiniteUpdate(f"non-finite policy weights at MLE iteration {it}")
        p = PolicyParams.from_flat(x, dd, p.dist)
    ll, _ = policy_mle_objective(p, data)
    history.append(ll)
    return PolicyMLEFit(p, ll, tuple(history))


# ------------------------------------------------------------ serialization

def fit_to_dict(fit) -> dict:
    base = {"format": FIT_FORMAT, "version": 1, "log_likelihood": fit.log_likelihood}
    if isinstance(fit, HawkesFit):
        return {**base, "model": "hawkes", "mu": fit.mu, "alpha": fit.alpha, "decay": fit.decay}
    if isinstance(fit, SelfCorrectingFit):
        return {**base, "model": "sc", "mu": fit.mu, "alpha": fit.alpha}
    if isinstance(fit, InhomogeneousPoissonFit):
        g = fit.intensity
        return {**base, "model": "ip", "weights": list(g.weights), "centers": list(g.centers), "widths": list(g.widths)}
    if isinstance(fit, PolicyMLEFit):
        return {**base, "model": "policy-mle", "policy": params_to_dict(fit.params)}
    raise ValidationError(f"not a fit result: {type(fit).__name__}")


def fit_from_dict(obj: dict):
    if obj.get("format") != FIT_FORMAT:
        raise ValidationError("not an rlpp fit file")
    model = obj.get("model")
    ll = float(obj["log_likelihood"])
    if model == "hawkes":
        return HawkesFit(float(obj["mu"]), float(obj["alpha"]), ll, float(obj.get("decay", 1.0)))
    if model == "sc":
        return SelfCorrectingFit(float(obj["mu"]), float(obj["alpha"]), ll)
    if model == "ip":
        return InhomogeneousPoissonFit(GaussianMixture(obj["weights"], obj["centers"], obj["widths"]), ll)
    if model == "policy-mle":
        return PolicyMLEFit(params_from_dict(obj["policy"]), ll)
    raise ValidationError(f"unknown fit model {model!r}")


def save_fit(fit, path) -> None:
    Path(path).write_text(json.dumps(fit_to_dict(fit), indent=2, sort_keys=True) + "\n")


def load_fit(path):
    return fit_from_dict(json.loads(Path(path).read_text()))
