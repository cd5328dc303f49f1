"""Model checking: empirical intensity, time rescaling, QQ data and KS tests."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, EventSequence
from .errors import InsufficientData, ValidationError
from .kernel import KernelConfig, median_bandwidth, mmd_squared
from .policy import PolicyParams, implied_compensator_increments
from .simulate import compensator_increments

__all__ = [
    "IntensityCurve",
    "RescaledGaps",
    "empirical_intensity",
    "time_rescale",
    "rescale_dataset",
    "qq_points",
    "qq_slope",
    "kolmogorov_sf",
    "ks_test",
    "ks_pvalues",
    "pvalue_cdf",
    "cdf_sup_deviation",
    "intensity_slope",
    "CandidateReport",
    "Report",
    "compare_report",
    "write_report",
]


@dataclass(frozen=True)
class IntensityCurve:
    edges: np.ndarray
    rates: np.ndarray
    n_sequences: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


@dataclass(frozen=True)
class RescaledGaps:
    values: np.ndarray

    def __len__(self) -> int:
        return self.values.size


def empirical_intensity(data: Dataset | Sequence[EventSequence], bins: int = 20, window_end: float | None = None) -> IntensityCurve:
    """Events per unit time per sequence in ``bins`` equal bins over ``[0, T)``."""
    if bins < 1:
        raise ValidationError("bins must be at least 1")
    seqs = list(data)
    T = window_end if window_end is not None else (data.window_end if isinstance(data, Dataset) else None)
    if T is None:
        if not seqs:
            raise ValidationError("window_end is required for an empty collection")
        T = seqs[0].window_end
    edges = np.linspace(0.0, T, bins + 1)
    if not seqs:
        return IntensityCurve(edges, np.zeros(bins), 0)
    times = np.concatenate([s.times for s in seqs]) if seqs else np.zeros(0)
    # searchsorted keeps bins half-open like the window itself
    idx = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return IntensityCurve(edges, counts / (len(seqs) * np.diff(edges)), len(seqs))


def intensity_slope(curve: IntensityCurve, t_max: float | None = None) -> float:
    """Least-squares slope of bin rate against bin center (bins with center <= ``t_max``)."""
    x = curve.centers
    y = curve.rates
    if t_max is not None:
        keep = x <= t_max
        x, y = x[keep], y[keep]
    return float(np.polyfit(x, y, 1)[0])


def time_rescale(seq: EventSequence, model) -> RescaledGaps:
    """Compensator increments between consecutive events (with ``t_0 = 0``).

    ``model`` is an intensity spec or a :class:`PolicyParams` (its implied
    hazard).
    """
    if isinstance(model, PolicyParams):
        return RescaledGaps(implied_compensator_increments(model, seq))
    return RescaledGaps(compensator_increments(model, seq))


def rescale_dataset(data: Dataset, model) -> list[RescaledGaps]:
    return [time_rescale(s, model) for s in data]


def qq_points(gaps: RescaledGaps | np.ndarray, quantiles: int | None = None) -> np.ndarray:
    """Rows of (Exp(1) quantile, empirical quantile) at probabilities ``(i - 0.5)/n``."""
    x = np.sort(np.asarray(getattr(gaps, "values", gaps), dtype=np.float64))
    n = quantiles if quantiles is not None else x.size
    if n < 1 or x.size < n:
        raise InsufficientData(f"need at least {n} gaps for {n} quantiles, got {x.size}")
    p = (np.arange(1, n + 1) - 0.5) / n
    theo = -np.log1p(-p)
    emp = x if n == x.size else np.quantile(x, p)
    return np.column_stack([theo, emp])


def qq_slope(points: np.ndarray) -> float:
    """Least-squares slope through the origin of empirical on theoretical."""
    x, y = points[:, 0], points[:, 1]
    return float(np.dot(x, y) / np.dot(x, x))


def kolmogorov_sf(x: float, tol: float = 1e-10) -> float:
    """Survival function of the limiting Kolmogorov distribution."""
    if x <= 0:
        return 1.0
    if x >= 1.0:
        total = 0.0
        k = 1
        while True:
            term = math.exp(-2.0 * k * k * x * x)
            total += term if k % 2 else -term
            if term < tol:
                break
            k += 1
        return min(1.0, max(0.0, 2.0 * total))
    # small x: the theta-function form converges quickly
    c = math.pi * math.pi / (8.0 * x * x)
    total = 0.0
    k = 1
    while True:
        term = math.exp(-(2 * k - 1) ** 2 * c)
        total += term
        if term < tol:
            break
        k += 1
    cdf = math.sqrt(2.0 * math.pi) / x * total
    return min(1.0, max(0.0, 1.0 - cdf))


def ks_test(gaps: RescaledGaps | np.ndarray) -> tuple[float, float]:
    """KS statistic against Exp(1) and its asymptotic p-value."""
    x = np.sort(np.asarray(getattr(gaps, "values", gaps), dtype=np.float64))
    n = x.size
    if n < 1:
        raise InsufficientData("the KS test needs at least one value")
    F = -np.expm1(-np.maximum(x, 0.0))
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def ks_pvalues(data: Dataset, model, min_events: int = 1) -> np.ndarray:
    """Per-sequence KS p-values of the rescaled gaps (sequences with fewer events skipped)."""
    out = []
    for s in data:
        g = time_rescale(s, model)
        if len(g) >= min_events:
            out.append(ks_test(g)[1])
    return np.array(out)


def pvalue_cdf(pvalues) -> np.ndarray:
    """Rows of (sorted p-value, i/n)."""
    p = np.sort(np.asarray(pvalues, dtype=np.float64))
    if p.size == 0:
        raise InsufficientData("no p-values")
    return np.column_stack([p, np.arange(1, p.size + 1) / p.size])


def cdf_sup_deviation(pvalues) -> float:
    """Largest distance between the empirical CDF of ``pvalues`` and the diagonal."""
    p = np.sort(np.asarray(pvalues, dtype=np.float64))
    n = p.size
    if n == 0:
        raise InsufficientData("no p-values")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - p), np.max(p - (i - 1) / n)))


# ------------------------------------------------------------------ reports

@dataclass
class CandidateReport:
    name: str
    curve: IntensityCurve
    mae: float
    mmd2: float
    extras: dict = field(default_factory=dict)


@dataclass
class Report:
    expert_curve: IntensityCurve
    kernel: KernelConfig
    candidates: list[CandidateReport]

    def summary(self) -> dict:
        return {
            "bandwidth": self.kernel.sigma,
            "bins": int(self.expert_curve.rates.size),
            "candidates": {
                c.name: {"intensity_mae": c.mae, "mmd2": c.mmd2, **c.extras} for c in self.candidates
            },
        }


def compare_report(
    expert: Dataset,
    candidates: Sequence[tuple[str, Dataset]],
    bins: int = 20,
    kernel: KernelConfig | None = None,
) -> Report:
    """Intensity curves, intensity MAE and MMD^2 of each candidate against the expert."""
    kcfg = kernel if kernel is not None else median_bandwidth(expert)
    ref = empirical_intensity(expert, bins)
    out = []
    for name, data in candidates:
        if data.window_end != expert.window_end:
            raise ValidationError(f"candidate {name!r} has window {data.window_end}, expert {expert.window_end}")
        curve = empirical_intensity(data, bins)
        mae = float(np.mean(np.abs(curve.rates - ref.rates)))
        out.append(CandidateReport(name, curve, mae, mmd_squared(expert, data, kcfg)))
    return Report(ref, kcfg, out)


def write_report(report: Report, out_dir, extra_summary: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [c.name for c in report.candidates]
    lines = [",".join(["bin_center", "expert", *names])]
    for b, center in enumerate(report.expert_curve.centers):
        row = [repr(float(center)), repr(float(report.expert_curve.rates[b]))]
        row += [repr(float(c.curve.rates[b])) for c in report.candidates]
        lines.append(",".join(row))
    (out / "intensity.csv").write_text("\n".join(lines) + "\n")
    summary = report.summary()
    if extra_summary:
        summary.update(extra_summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_pairs_csv(path, header: tuple[str, str], rows: np.ndarray) -> None:
    lines = [",".join(header)] + [f"{float(a)!r},{float(b)!r}" for a, b in rows]
    Path(path).write_text("\n".join(lines) + "\n")
