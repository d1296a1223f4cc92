"""Time-varying alarm threshold and the online detector.

The threshold at step ``i`` is ``c`` times the mean prefix statistic of
sequences drawn from the trained generator. A generated sequence shorter
than ``i`` contributes its last prefix value (0 for an empty sequence, the
value of the empty prefix). The detector raises an alarm at the first event
whose prefix statistic reaches the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .events import Event, Sequence
from .fourier import feature_map
from .generator import GeneratorParams, generate_batch
from .hawkes import INTENSITY_FLOOR, DetectorParams, batch_prefix_log_likelihood, mark_volume, pack


@dataclass
class ThresholdCurve:
    eta: np.ndarray  # threshold for steps 1..i_max
    c: float = 1.0
    n_gen: int = 0
    seed: int | None = None
    generated_mean: np.ndarray | None = None  # unscaled mean statistic per step
    generated_std: np.ndarray | None = None  # cross-sequence standard deviation per step

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if self.eta.ndim != 1 or len(self.eta) < 1:
            raise ValueError("threshold curve needs at least one step")
        if not np.all(np.isfinite(self.eta)):
            raise ValueError("threshold values must be finite")

    @property
    def i_max(self) -> int:
        return len(self.eta)

    def at(self, i: int) -> float:
        """Threshold for 1-based step ``i``; constant beyond ``i_max``."""
        return float(self.eta[min(i, self.i_max) - 1])

    def scaled(self, c: float) -> "ThresholdCurve":
        base = self.generated_mean if self.generated_mean is not None else self.eta / self.c
        return ThresholdCurve(c * base, c, self.n_gen, self.seed, base, self.generated_std)


def carry_forward(stats: np.ndarray, lengths, i_max: int) -> np.ndarray:
    """Extend each row of a NaN-padded prefix matrix to ``i_max`` columns by
    repeating its last value (0 for empty rows)."""
    out = np.zeros((len(lengths), i_max))
    for b, n in enumerate(lengths):
        n_use = min(n, i_max)
        out[b, :n_use] = stats[b, :n_use]
        if n_use < i_max:
            out[b, n_use:] = stats[b, n - 1] if n > 0 else 0.0
    return out


def prefix_matrix(seqs, detector: DetectorParams, i_max: int, fs=None) -> np.ndarray:
    """Carry-forward prefix statistics, shape ``(len(seqs), i_max)``."""
    if not seqs:
        return np.zeros((0, i_max))
    batch = pack(seqs, detector.d)
    stats = batch_prefix_log_likelihood(detector, batch, fs)
    return carry_forward(stats, [len(s) for s in seqs], i_max)


def estimate_threshold(detector: DetectorParams, generator: GeneratorParams, n_gen: int, i_max: int,
                       rng, horizon: float, c: float = 1.0, max_events: int = 10_000,
                       seed: int | None = None) -> ThresholdCurve:
    if n_gen < 1 or i_max < 1:
        raise ValueError("n_gen and i_max must be at least 1")
    if detector.frozen_features is None:
        raise ValueError("detector has no frozen Fourier features")
    rng = np.random.default_rng(rng)
    seqs = generate_batch(generator, np.full(n_gen, float(horizon)), rng, max_events)
    if all(len(s) == 0 for s in seqs):
        raise ValueError("every generated sequence is empty; cannot estimate a threshold")
    stats = prefix_matrix(seqs, detector, i_max)
    mean = stats.mean(axis=0)
    std = stats.std(axis=0, ddof=1) if n_gen > 1 else np.zeros(i_max)
    return ThresholdCurve(c * mean, c, n_gen, seed, mean, std)


@dataclass
class DetectionResult:
    is_anomaly: bool
    stop_index: int | None = None
    stop_time: float | None = None
    trace: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {"is_anomaly": self.is_anomaly, "stop_index": self.stop_index,
                "stop_time": self.stop_time, "trace": [float(v) for v in self.trace]}


class OnlineDetector:
    """Streaming prefix statistic with a running sum of past feature vectors.

    Each ``update`` costs O(D): the excitation at a new event is the dot
    product of its feature vector with the sum of all earlier ones.
    """

    def __init__(self, detector: DetectorParams, fs=None):
        self.params = detector
        self.fs = detector.features_or(fs)
        self.feature_sum = np.zeros(self.fs.D)
        self.stat = 0.0
        self.t_prev = 0.0
        self.i = 0
        self._vol = mark_volume(detector.d)

    def update(self, event) -> float:
        x = event.as_vector() if isinstance(event, Event) else np.asarray(event, dtype=float)
        if self.i and not x[0] > self.t_prev:
            raise ValueError("events must arrive in strictly increasing time order")
        phi = feature_map(x, self.fs, self.params.W)
        lam = max(self.params.mu + self.params.alpha * float(phi @ self.feature_sum), INTENSITY_FLOOR)
        self.stat += math.log(lam) - self.params.mu * (x[0] - self.t_prev) * self._vol
        self.feature_sum += phi
        self.t_prev = float(x[0])
        self.i += 1
        return self.stat


def detect(seq: Sequence, detector: DetectorParams, curve: ThresholdCurve, fs=None) -> DetectionResult:
    """Single pass over ``seq``; stops at the first step with statistic >= threshold."""
    online = OnlineDetector(detector, fs)
    trace = []
    for i, ev in enumerate(seq.events, start=1):
        stat = online.update(ev)
        trace.append(stat)
        if stat >= curve.at(i):
            return DetectionResult(True, i, ev.t, trace)
    return DetectionResult(False, None, None, trace)


def detect_regenerating(seq: Sequence, detector: DetectorParams, generator: GeneratorParams,
                        n_gen: int, rng, c: float = 1.0, max_events: int = 10_000) -> DetectionResult:
    """Variant that redraws ``n_gen`` generated sequences at every step to set
    that step's threshold, instead of using a precomputed curve."""
    rng = np.random.default_rng(rng)
    online = OnlineDetector(detector)
    trace = []
    for i, ev in enumerate(seq.events, start=1):
        stat = online.update(ev)
        trace.append(stat)
        gens = generate_batch(generator, np.full(n_gen, seq.horizon), rng, max_events)
        eta = c * prefix_matrix(gens, detector, i)[:, i - 1].mean()
        if stat >= eta:
            return DetectionResult(True, i, ev.t, trace)
    return DetectionResult(False, None, None, trace)
