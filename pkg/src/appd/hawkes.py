"""Marked Hawkes detector with a deep Fourier kernel.

Conditional intensity::

    lambda(x | history) = mu + alpha * sum_{x' in history} K(x, x')

floored at ``INTENSITY_FLOOR`` before taking logs, since the cosine kernel
estimate can go negative. Marks are assumed normalized to ``[0, 2*pi]^d``;
under that normalization the likelihood integral term is taken as
``mu * T * (2*pi)^d``. ``integral_quadrature`` integrates the actual
intensity numerically and is kept as an independent check on that value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .events import TWO_PI, Event, Sequence
from .fourier import FourierFeatureSet, SpectrumNet, feature_map, features, spectrum_forward

INTENSITY_FLOOR = 1e-9


@dataclass
class DetectorParams:
    mu: float
    alpha: float
    W: np.ndarray  # (r, d+1)
    spectrum: SpectrumNet
    frozen_features: FourierFeatureSet | None = field(default=None)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.mu < 0 or self.alpha < 0:
            raise ValueError("mu and alpha must be non-negative")
        if self.W.shape[0] != self.spectrum.r:
            raise ValueError(f"W has {self.W.shape[0]} rows, spectrum outputs R^{self.spectrum.r}")

    @property
    def d(self) -> int:
        return self.W.shape[1] - 1

    @classmethod
    def init(cls, d=0, mu=1.0, alpha=0.1, q=2, r=2, hidden=(32, 32), rng=None) -> "DetectorParams":
        rng = np.random.default_rng(rng)
        bound = 1.0 / math.sqrt(d + 1)
        W = rng.uniform(-bound, bound, (r, d + 1))
        return cls(mu, alpha, W, SpectrumNet.init(q, r, hidden, rng))

    def arrays(self) -> dict:
        """Trainable parameters; mu and alpha in log space."""
        with np.errstate(divide="ignore"):
            out = {"log_mu": np.array(np.log(self.mu)), "log_alpha": np.array(np.log(self.alpha)),
                   "W": self.W}
        out.update(self.spectrum.arrays())
        return out

    def with_arrays(self, arrays: dict) -> "DetectorParams":
        return DetectorParams(float(np.exp(arrays["log_mu"])), float(np.exp(arrays["log_alpha"])),
                              np.array(arrays["W"]), SpectrumNet.from_arrays(arrays),
                              self.frozen_features)

    def features_or(self, fs):
        fs = fs if fs is not None else self.frozen_features
        if fs is None:
            raise ValueError("no Fourier features given and none frozen in the detector")
        return fs


def _as_point(x) -> np.ndarray:
    if isinstance(x, Event):
        return x.as_vector()
    return np.asarray(x, dtype=float)


def _history_points(history, d) -> np.ndarray:
    if isinstance(history, Sequence):
        return history.points(d)
    pts = [_as_point(e) for e in history]
    return np.array(pts).reshape(len(pts), d + 1)


def intensity(x, history, params: DetectorParams, fs: FourierFeatureSet | None = None) -> float:
    fs = params.features_or(fs)
    x = _as_point(x)
    hist = _history_points(history, params.d)
    if len(hist) and not np.all(hist[:, 0] < x[0]):
        raise ValueError("history must lie strictly before the evaluated point")
    excite = 0.0
    if len(hist):
        phi_x = feature_map(x, fs, params.W)
        excite = float((feature_map(hist, fs, params.W) @ phi_x).sum())
    return max(params.mu + params.alpha * excite, INTENSITY_FLOOR)


def log_intensities(seq: Sequence, params: DetectorParams, fs=None) -> np.ndarray:
    """``log lambda(x_i | x_{1:i-1})`` for every event, via the pairwise kernel matrix."""
    fs = params.features_or(fs)
    pts = seq.points(params.d)
    if len(pts) == 0:
        return np.zeros(0)
    phi = feature_map(pts, fs, params.W)
    excite = np.tril(phi @ phi.T, k=-1).sum(axis=1)
    return np.log(np.maximum(params.mu + params.alpha * excite, INTENSITY_FLOOR))


def mark_volume(d: int) -> float:
    return TWO_PI ** d


def integral_closed_form(seq: Sequence, params: DetectorParams, fs=None) -> float:
    return params.mu * seq.horizon * mark_volume(params.d)


def log_likelihood(seq: Sequence, params: DetectorParams, fs=None) -> float:
    return float(log_intensities(seq, params, fs).sum() - integral_closed_form(seq, params, fs))


def prefix_log_likelihood(seq: Sequence, params: DetectorParams, fs=None) -> np.ndarray:
    """Detection statistic for every prefix, by the recursion

    ``l_i = l_{i-1} + log lambda(x_i) - mu * (t_i - t_{i-1}) * (2 pi)^d`` with ``t_0 = 0``.
    The survival term over ``(t_N, T]`` is not included.
    """
    logs = log_intensities(seq, params, fs)
    gaps = np.diff(seq.times, prepend=0.0)
    out = np.empty(len(logs))
    acc = 0.0
    vol = mark_volume(params.d)
    for i, (lg, dt) in enumerate(zip(logs, gaps)):
        acc = acc + lg - params.mu * dt * vol
        out[i] = acc
    return out


def integral_quadrature(seq: Sequence, params: DetectorParams, fs=None,
                        resolution: int = 1000, mark_points: int = 257) -> float:
    """Numerical integral of the un-floored intensity over ``[0, T] x [0, 2 pi]^d``.

    Time is integrated with the composite trapezoid rule separately on each
    inter-event interval (the integrand jumps at events), with ``resolution``
    points per time unit. Marks (``d <= 2``) use a tensor trapezoid grid of
    ``mark_points`` nodes per coordinate.
    """
    fs = params.features_or(fs)
    d = params.d
    if d > 2:
        raise NotImplementedError("quadrature supports at most two mark dimensions")
    if resolution < 100:
        raise ValueError("resolution must be at least 100 points per time unit")
    T = seq.horizon
    hist = seq.points(d)
    W = params.W
    a = fs.omegas @ W[:, 0]  # time frequency per feature
    B = fs.omegas @ W[:, 1:]  # (D, d) mark frequencies
    vol = mark_volume(d)

    # integral over marks of cos(B_k . m) and sin(B_k . m)
    if d == 0:
        mc, ms = np.ones(fs.D), np.zeros(fs.D)
    else:
        grid = np.linspace(0.0, TWO_PI, mark_points)
        mesh = np.stack(np.meshgrid(*([grid] * d), indexing="ij"), axis=-1).reshape(-1, d)
        w1 = np.full(mark_points, TWO_PI / (mark_points - 1))
        w1[[0, -1]] *= 0.5
        wts = np.prod(np.stack(np.meshgrid(*([w1] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
        arg = mesh @ B.T  # (G, D)
        mc, ms = wts @ np.cos(arg), wts @ np.sin(arg)

    # coefficient of each past event in the kernel: cos(omega_k . W x_j + u_k)
    cj = np.cos(hist @ W.T @ fs.omegas.T + fs.phases) if len(hist) else np.zeros((0, fs.D))
    scale = 2.0 / fs.D
    knots = np.concatenate([[0.0], hist[:, 0], [T]])
    total = 0.0
    for i in range(len(knots) - 1):
        lo, hi = knots[i], knots[i + 1]
        total += params.mu * vol * (hi - lo)
        if i == 0 or hi <= lo:
            continue
        n = max(int(math.ceil((hi - lo) * resolution)), 2) + 1
        ts = np.linspace(lo, hi, n)
        phase = np.outer(ts, a) + fs.phases  # (n, D)
        per_t = np.cos(phase) * mc - np.sin(phase) * ms  # mark-integrated cos(...)
        vals = params.alpha * scale * per_t @ cj[:i].sum(axis=0)
        total += float(np.sum((vals[1:] + vals[:-1]) * np.diff(ts)) / 2.0)
    return total


# ---------------------------------------------------------------------------
# batched, tape-friendly likelihood used by training and threshold estimation


@dataclass
class Batch:
    points: np.ndarray  # (B, N, d+1), zero padded
    mask: np.ndarray  # (B, N) bool
    horizons: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return len(self.horizons)


def pack(seqs, d: int) -> Batch:
    n = max((len(s) for s in seqs), default=0)
    pts = np.zeros((len(seqs), n, d + 1))
    mask = np.zeros((len(seqs), n), dtype=bool)
    for b, s in enumerate(seqs):
        if len(s):
            pts[b, :len(s)] = s.points(d)
            mask[b, :len(s)] = True
    return Batch(pts, mask, np.array([s.horizon for s in seqs], dtype=float))


def batch_log_intensities(arrays: dict, points, phases, zetas=None, omegas=None):
    """``log lambda`` at every (possibly padded) event; (B, N).

    ``arrays`` holds detector parameters as produced by ``DetectorParams.arrays``
    (plain or tape variables); ``points`` may also live on the tape. Frequencies
    are either given directly or computed from spectrum noise ``zetas`` (the
    reparameterized path used in training). The excitation uses an exclusive
    running sum of feature vectors, which equals the pairwise kernel sum.
    """
    if omegas is None:
        omegas = spectrum_forward(*_spectrum_layers(arrays), zetas)
    phi = features(points, arrays["W"], omegas, phases)  # (B, N, D)
    before = ad.cumsum(phi, axis=1) - phi
    excite = ad.sum_(phi * before, axis=2)
    lam = ad.exp(arrays["log_mu"]) + ad.exp(arrays["log_alpha"]) * excite
    return ad.log(ad.floor_at(lam, INTENSITY_FLOOR))


def batch_log_likelihood(arrays: dict, points, mask, horizons, phases, d: int, zetas=None, omegas=None):
    """Per-sequence log-likelihood, shape (B,)."""
    logs = batch_log_intensities(arrays, points, phases, zetas, omegas)
    return ad.sum_(ad.where(mask, logs, 0.0), axis=1) - ad.exp(arrays["log_mu"]) * (horizons * mark_volume(d))


def batch_prefix_log_likelihood(params: DetectorParams, batch: Batch, fs=None) -> np.ndarray:
    """Prefix statistics for a packed batch; entries past each sequence end are NaN."""
    fs = params.features_or(fs)
    logs = batch_log_intensities(params.arrays(), batch.points, fs.phases, omegas=fs.omegas) \
        if batch.points.shape[1] else np.zeros(batch.mask.shape)
    gaps = np.diff(batch.points[:, :, 0], axis=1, prepend=0.0)
    inc = logs - params.mu * gaps * mark_volume(params.d)
    out = np.cumsum(inc, axis=1)
    return np.where(batch.mask, out, np.nan)


def _spectrum_layers(arrays):
    weights, biases, k = [], [], 0
    while f"spectrum.W{k}" in arrays:
        weights.append(arrays[f"spectrum.W{k}"])
        biases.append(arrays[f"spectrum.b{k}"])
        k += 1
    return weights, biases
