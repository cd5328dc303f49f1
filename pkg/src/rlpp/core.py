"""Event sequences, datasets and inter-event gaps.

All containers are immutable: arrays are copied on construction and marked
read-only, so instances can be shared freely between threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .errors import DegenerateData, NonMonotonic, OutOfWindow, ValidationError

__all__ = [
    "EventSequence",
    "Dataset",
    "InterEventTimes",
    "validate",
    "to_gaps",
    "from_gaps",
]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


class EventSequence:
    """Event times on the half-open window ``[0, window_end)``.

    Construction does not validate; call :func:`validate` (or use
    :meth:`checked`) when the times come from an untrusted source.
    """

    __slots__ = ("times", "window_end")

    def __init__(self, times: Iterable[float], window_end: float):
        object.__setattr__(self, "times", _frozen(list(times) if not isinstance(times, np.ndarray) else times))
        object.__setattr__(self, "window_end", float(window_end))

    def __setattr__(self, name, value):
        raise AttributeError("EventSequence is immutable")

    @classmethod
    def checked(cls, times, window_end) -> "EventSequence":
        seq = cls(times, window_end)
        validate(seq)
        return seq

    def __len__(self) -> int:
        return self.times.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            self.window_end == other.window_end
            and self.times.shape == other.times.shape
            and bool(np.all(self.times == other.times))
        )

    def __hash__(self):
        return hash((self.window_end, self.times.tobytes()))

    def __repr__(self) -> str:
        return f"EventSequence(n={len(self)}, T={self.window_end})"

    def shifted(self, offset: float, window_end: float | None = None) -> "EventSequence":
        T = self.window_end if window_end is None else window_end
        return EventSequence(self.times + offset, T)


@dataclass(frozen=True)
class InterEventTimes:
    gaps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gaps", _frozen(self.gaps))

    def __len__(self) -> int:
        return self.gaps.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, InterEventTimes):
            return NotImplemented
        return self.gaps.shape == other.gaps.shape and bool(np.all(self.gaps == other.gaps))


class Dataset:
    """A nonempty collection of sequences sharing one observation window."""

    __slots__ = ("sequences", "window_end")

    def __init__(self, sequences: Sequence[EventSequence], window_end: float | None = None):
        seqs = tuple(sequences)
        if not seqs:
            raise ValidationError("a Dataset needs at least one sequence")
        T = seqs[0].window_end if window_end is None else float(window_end)
        for s in seqs:
            if s.window_end != T:
                raise ValidationError(
                    f"sequence window {s.window_end} differs from dataset window {T}"
                )
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "window_end", T)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, idx):
        return self.sequences[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.window_end == other.window_end and self.sequences == other.sequences

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, T={self.window_end}, events={self.total_events})"

    @property
    def total_events(self) -> int:
        return sum(len(s) for s in self.sequences)

    def counts(self) -> np.ndarray:
        return np.array([len(s) for s in self.sequences], dtype=np.int64)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """All event times concatenated, plus CSR-style sequence offsets."""
        counts = self.counts()
        offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        if offsets[-1] == 0:
            return np.zeros(0), offsets
        return np.concatenate([s.times for s in self.sequences]), offsets

    def subset(self, indices) -> "Dataset":
        return Dataset([self.sequences[int(i)] for i in indices], self.window_end)

    def validate(self) -> None:
        for s in self.sequences:
            validate(s)


def validate(seq: EventSequence) -> None:
    """Raise unless ``seq`` has strictly increasing times inside ``[0, T)``."""
    t = seq.times
    T = seq.window_end
    if not np.isfinite(T) or T <= 0:
        raise OutOfWindow(f"window end must be positive and finite, got {T}")
    if t.size == 0:
        return
    if not np.all(np.isfinite(t)):
        raise OutOfWindow("event times must be finite")
    if t.size > 1 and not np.all(np.diff(t) > 0):
        i = int(np.argmin(np.diff(t) > 0))
        raise NonMonotonic(f"times not strictly increasing at index {i + 1}: {t[i]} -> {t[i + 1]}")
    if t[0] < 0:
        raise OutOfWindow(f"event time {t[0]} is negative")
    if t[-1] >= T:
        raise OutOfWindow(f"event time {t[-1]} is not below the window end {T}")


def to_gaps(seq: EventSequence) -> InterEventTimes:
    """Inter-event times with ``t_0 = 0``.

    Each gap is the difference to the previous event, adjusted by at most a
    few ulps so that :func:`from_gaps` rebuilds the times bit for bit.
    """
    t = np.ascontiguousarray(seq.times, dtype=np.float64)
    if t.size == 0:
        return InterEventTimes(np.zeros(0))
    return InterEventTimes(kernels.exact_gaps(t))


def from_gaps(gaps, window_end: float) -> EventSequence:
    """Running sum of ``gaps``; events at or after ``window_end`` are dropped.

    The sum runs left to right, with each addition rounded to nearest and
    exact ties broken upward. Under the default ties-to-even rule some
    sorted sequences of doubles cannot be produced by any gaps; with upward
    ties every one can, so ``from_gaps(to_gaps(s), T) == s`` holds exactly.
    """
    g = gaps.gaps if isinstance(gaps, InterEventTimes) else np.asarray(gaps, dtype=np.float64)
    if g.size and not np.all(g > 0):
        raise ValidationError("gaps must be strictly positive")
    times = kernels.prefix_sums(np.ascontiguousarray(g, dtype=np.float64))
    n = int(np.searchsorted(times, window_end, side="left"))
    return EventSequence(times[:n], window_end)


def ensure_events(data: Dataset, minimum: int = 1) -> None:
    if data.total_events < minimum:
        raise DegenerateData(f"need at least {minimum} events, dataset has {data.total_events}")
