"""Marked event sequences, mark normalization and JSON-lines persistence."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence as TypingSequence

import numpy as np

TWO_PI = 2.0 * math.pi
LABELS = ("anomalous", "normal", "unknown")


class ValidationError(ValueError):
    """Raised when a sequence or a data file violates the event model."""

    def __init__(self, message, violations=None, line=None):
        super().__init__(message)
        self.violations = list(violations or [])
        self.line = line


@dataclass(frozen=True)
class Event:
    t: float
    mark: tuple = ()

    @property
    def d(self) -> int:
        return len(self.mark)

    def as_vector(self) -> np.ndarray:
        return np.array((self.t, *self.mark), dtype=float)


@dataclass(frozen=True)
class Sequence:
    events: tuple
    horizon: float
    label: str | None = None
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def __len__(self):
        return len(self.events)

    @property
    def d(self) -> int | None:
        return self.events[0].d if self.events else None

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=float)

    def points(self, d: int | None = None) -> np.ndarray:
        """Events stacked as an ``(N, d+1)`` array of ``[t, mark...]`` rows."""
        if d is None:
            d = self.d or 0
        if not self.events:
            return np.zeros((0, d + 1))
        return np.array([(e.t, *e.mark) for e in self.events], dtype=float)

    def prefix(self, i: int) -> "Sequence":
        return Sequence(self.events[:i], self.horizon, self.label)

    @classmethod
    def from_arrays(cls, times, marks=None, horizon=1.0, label=None, truncated=False):
        times = np.asarray(times, dtype=float)
        if marks is None:
            marks = np.zeros((len(times), 0))
        marks = np.asarray(marks, dtype=float)
        marks = marks.reshape(len(times), marks.shape[-1] if marks.ndim > 1 else -1) if len(times) \
            else np.zeros((0, 0))
        events = tuple(Event(float(t), tuple(float(v) for v in m)) for t, m in zip(times, marks))
        return cls(events, float(horizon), label, truncated)


@dataclass(frozen=True)
class MarkNormalization:
    """Per-coordinate source ranges ``[lo, hi]`` mapped affinely onto ``[0, 2*pi]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same length")
        for k, (a, b) in enumerate(zip(self.lo, self.hi)):
            if not b > a:
                raise ValueError(f"empty range for mark coordinate {k}: [{a}, {b}]")

    @property
    def d(self) -> int:
        return len(self.lo)

    @classmethod
    def fit(cls, seqs: Iterable[Sequence]) -> "MarkNormalization":
        marks = np.array([e.mark for s in seqs for e in s.events], dtype=float)
        if marks.size == 0:
            raise ValueError("no marks to fit a normalization on")
        lo, hi = marks.min(axis=0), marks.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(tuple(lo.tolist()), tuple(hi.tolist()))


def normalize_marks(seq: Sequence, norm: MarkNormalization) -> Sequence:
    lo, hi = np.asarray(norm.lo, float), np.asarray(norm.hi, float)
    events = []
    for i, e in enumerate(seq.events):
        m = np.asarray(e.mark, dtype=float)
        if m.shape != lo.shape:
            raise ValidationError(f"event {i}: mark has {m.size} coordinates, expected {norm.d}")
        if np.any(m < lo) or np.any(m > hi):
            raise ValidationError(f"event {i}: mark {e.mark} outside declared range",
                                  violations=[f"mark out of range at index {i}"])
        events.append(Event(e.t, tuple((TWO_PI * (m - lo) / (hi - lo)).tolist())))
    return Sequence(events, seq.horizon, seq.label, seq.truncated)


def denormalize_marks(seq: Sequence, norm: MarkNormalization) -> Sequence:
    lo, hi = np.asarray(norm.lo, float), np.asarray(norm.hi, float)
    events = [Event(e.t, tuple((lo + np.asarray(e.mark) * (hi - lo) / TWO_PI).tolist()))
              for e in seq.events]
    return Sequence(events, seq.horizon, seq.label, seq.truncated)


def validate(seq: Sequence, normalized: bool = True) -> list[str]:
    """Return every violated invariant of ``seq`` (empty list when valid).

    With ``normalized=False`` mark coordinates are not range-checked.
    """
    problems = []
    T = seq.horizon
    if not (isinstance(T, (int, float)) and math.isfinite(T) and T > 0):
        problems.append(f"horizon must be finite and positive, got {T!r}")
    if seq.label is not None and seq.label not in LABELS:
        problems.append(f"unknown label {seq.label!r}")
    d = seq.d
    prev = None
    for i, e in enumerate(seq.events):
        if not math.isfinite(e.t) or e.t < 0:
            problems.append(f"invalid time at index {i}")
        elif math.isfinite(T) and e.t >= T:
            problems.append(f"event beyond horizon at index {i}")
        if prev is not None and not e.t > prev:
            problems.append(f"non-strict ordering at index {i}")
        prev = e.t
        if len(e.mark) != d:
            problems.append(f"mark dimension mismatch at index {i}")
        elif any(not math.isfinite(v) for v in e.mark):
            problems.append(f"non-finite mark at index {i}")
        elif normalized and any(v < 0 or v > TWO_PI for v in e.mark):
            problems.append(f"mark out of [0, 2pi] at index {i}")
    return problems


def check_dataset(seqs: TypingSequence[Sequence], normalized: bool = True) -> list[str]:
    """Validate a collection; also requires a single shared mark dimension."""
    problems = []
    dims = set()
    for k, s in enumerate(seqs):
        problems += [f"sequence {k}: {p}" for p in validate(s, normalized)]
        if s.d is not None:
            dims.add(s.d)
    if len(dims) > 1:
        problems.append(f"sequences disagree on mark dimension: {sorted(dims)}")
    return problems


def sequence_to_record(seq: Sequence) -> dict:
    rec = {"horizon": seq.horizon}
    if seq.label is not None:
        rec["label"] = seq.label
    rec["events"] = [{"t": e.t, "mark": list(e.mark)} for e in seq.events]
    return rec


def sequence_from_record(rec: dict) -> Sequence:
    events = tuple(Event(float(ev["t"]), tuple(float(v) for v in ev.get("mark", ())))
                   for ev in rec["events"])
    return Sequence(events, float(rec["horizon"]), rec.get("label"))


def dumps_sequence(seq: Sequence) -> str:
    return json.dumps(sequence_to_record(seq), separators=(",", ":"), allow_nan=False)


def save_jsonl(seqs: Iterable[Sequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in seqs:
            fh.write(dumps_sequence(s) + "\n")


def load_jsonl(path, normalized: bool = True) -> list[Sequence]:
    """Read sequences from a JSON-lines file, validating each one.

    Raises ``ValidationError`` carrying the 1-based line number on malformed
    records or invariant violations.
    """
    seqs = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                seq = sequence_from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"line {lineno}: malformed record ({exc})", line=lineno) from exc
            problems = validate(seq, normalized)
            if problems:
                raise ValidationError(f"line {lineno}: " + "; ".join(problems),
                                      violations=problems, line=lineno)
            seqs.append(seq)
    return seqs
