"""Event files, flat config files and model-file detection.

Event files are JSON Lines. The first line is ``{"T": <float>, "format": 1}``
and each following line is ``{"t": [<float>, ...]}`` holding one sequence.
Floats are written with their shortest round-trip representation, so a
write/read cycle reproduces every time bit for bit.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import Dataset, EventSequence
from .errors import FileFormatError, ValidationError

__all__ = [
    "EVENT_FORMAT",
    "write_events",
    "read_events",
    "dumps_events",
    "read_config",
    "write_config",
    "read_csv_sequences",
    "detect_kind",
]

EVENT_FORMAT = 1


def dumps_events(data: Dataset) -> str:
    lines = [json.dumps({"T": float(data.window_end), "format": EVENT_FORMAT})]
    for s in data:
        lines.append(json.dumps({"t": [float(x) for x in s.times]}))
    return "\n".join(lines) + "\n"


def write_events(data: Dataset, path) -> None:
    Path(path).write_text(dumps_events(data))


def read_events(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FileFormatError(f"{path}: empty event file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}:1: header is not JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != EVENT_FORMAT or "T" not in header:
        raise FileFormatError(f'{path}:1: expected a header {{"T": ..., "format": 1}}')
    T = float(header["T"])
    if not (math.isfinite(T) and T > 0):
        raise FileFormatError(f"{path}:1: window end must be positive and finite")
    seqs = []
    for no, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
            times = obj["t"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise FileFormatError(f'{path}:{no}: expected an object {{"t": [...]}}') from None
        try:
            seqs.append(EventSequence.checked(np.asarray(times, dtype=np.float64), T))
        except (ValidationError, ValueError) as exc:
            raise FileFormatError(f"{path}:{no}: {exc}") from None
    if not seqs:
        raise FileFormatError(f"{path}: no sequences after the header")
    return Dataset(seqs, T)


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}:{no}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FileFormatError(f"{path}:{no}: empty key")
        if key in out:
            raise FileFormatError(f"{path}:{no}: duplicate key {key!r}")
        out[key] = value
    return out


def write_config(values: dict, path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def read_csv_sequences(path, offset: float = 0.0, scale: float = 1.0) -> list[np.ndarray]:
    """One sequence per non-empty line of comma-separated timestamps, mapped by ``(t - offset) * scale``."""
    out = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            t = np.array([float(x) for x in line.split(",") if x.strip()], dtype=np.float64)
        except ValueError:
            raise FileFormatError(f"{path}:{no}: non-numeric timestamp") from None
        out.append((t - offset) * scale)
    return out


def detect_kind(path) -> str:
    """``"events"``, ``"fit"``, ``"policy"`` or ``"checkpoint"`` from a file's content."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        try:
            obj = json.loads(first)
        except json.JSONDecodeError:
            fh.seek(0)
            try:
                obj = json.loads(fh.read())
            except json.JSONDecodeError:
                raise FileFormatError(f"{path}: not a JSON or JSON Lines file") from None
    if isinstance(obj, dict):
        if obj.get("format") == EVENT_FORMAT and "T" in obj:
            return "events"
        kinds = {"rlpp-fit": "fit", "rlpp-policy": "policy", "rlpp-train-checkpoint": "checkpoint"}
        if obj.get("format") in kinds:
            return kinds[obj["format"]]
    raise FileFormatError(f"{path}: unrecognised file contents")
