"""Stochastic recurrent sequence generator.

An LSTM cell carries the history. At each step a linear head reads the
hidden state and outputs a Gaussian mean and a pre-positivity scale for
``[dt, mark]``; a reparameterized draw is squashed so that ``dt > 0`` and
marks land in ``(0, 2*pi)``. The new event is fed back into the cell.
Generation stops at the first event that would fall at or after the horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .events import TWO_PI, Event, Sequence

MIN_GAP = 1e-6
MAX_EVENTS_CAP = 10_000


@dataclass
class GeneratorParams:
    cell_W: np.ndarray  # (p + d + 1, 4p), gate order: input, forget, output, candidate
    cell_b: np.ndarray  # (4p,)
    head_W: np.ndarray  # (p, 2(d+1))
    head_b: np.ndarray  # (2(d+1),)

    def __post_init__(self):
        p = self.cell_W.shape[1] // 4
        d = self.head_W.shape[1] // 2 - 1
        if (self.cell_W.shape != (p + d + 1, 4 * p) or self.cell_b.shape != (4 * p,)
                or self.head_W.shape != (p, 2 * (d + 1)) or self.head_b.shape != (2 * (d + 1),)):
            raise ValueError("inconsistent generator parameter shapes")

    @property
    def p(self) -> int:
        return self.cell_b.shape[0] // 4

    @property
    def d(self) -> int:
        return self.head_b.shape[0] // 2 - 1

    @classmethod
    def init(cls, d=0, p=32, rng=None, mean_gap=None) -> "GeneratorParams":
        """Uniform(+-1/sqrt(fan_in)) weights.

        With ``mean_gap`` the head bias is set so that the noiseless first gap
        equals ``mean_gap``.
        """
        rng = np.random.default_rng(rng)
        b_cell = 1.0 / math.sqrt(p + d + 1)
        b_head = 1.0 / math.sqrt(p)
        params = cls(rng.uniform(-b_cell, b_cell, (p + d + 1, 4 * p)),
                     rng.uniform(-b_cell, b_cell, 4 * p),
                     rng.uniform(-b_head, b_head, (p, 2 * (d + 1))),
                     rng.uniform(-b_head, b_head, 2 * (d + 1)))
        if mean_gap is not None:
            params.head_b[0] = inverse_softplus(mean_gap - MIN_GAP)
        return params

    def arrays(self) -> dict:
        return {"cell_W": self.cell_W, "cell_b": self.cell_b,
                "head_W": self.head_W, "head_b": self.head_b}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "GeneratorParams":
        return cls(*(np.array(arrays[k], dtype=float) for k in ("cell_W", "cell_b", "head_W", "head_b")))


def inverse_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


@dataclass
class GenState:
    h: np.ndarray
    c: np.ndarray
    t_prev: float = 0.0

    @classmethod
    def initial(cls, p: int) -> "GenState":
        return cls(np.zeros(p), np.zeros(p), 0.0)


def head(arrays, h, noise, d):
    """Sample ``(dt, marks)`` from the head given hidden state ``h`` (B, p)."""
    out = ad.matmul(h, arrays["head_W"]) + arrays["head_b"]
    loc = out[:, : d + 1]
    scale = ad.softplus(out[:, d + 1:])
    raw = loc + scale * noise
    dt = ad.softplus(raw[:, :1]) + MIN_GAP
    marks = TWO_PI * ad.sigmoid(raw[:, 1:])
    return dt, marks


def cell(arrays, h, c, z):
    """One LSTM update of ``(h, c)`` with input ``z`` = ``[t, mark]`` rows."""
    p = np.shape(ad.value(h))[1]
    gates = ad.matmul(ad.concatenate([h, z], axis=1), arrays["cell_W"]) + arrays["cell_b"]
    i = ad.sigmoid(gates[:, :p])
    f = ad.sigmoid(gates[:, p:2 * p])
    o = ad.sigmoid(gates[:, 2 * p:3 * p])
    g = ad.tanh(gates[:, 3 * p:])
    c = f * c + i * g
    h = o * ad.tanh(c)
    return h, c


def step(state: GenState, params: GeneratorParams, noise):
    """Emit one event and advance the state. ``noise`` is standard normal in R^{d+1}."""
    arrays = params.arrays()
    d = params.d
    noise = np.asarray(noise, dtype=float).reshape(1, d + 1)
    dt, marks = head(arrays, state.h[None, :], noise, d)
    t = state.t_prev + float(dt[0, 0])
    z = np.concatenate([[[t]], marks], axis=1)
    h, c = cell(arrays, state.h[None, :], state.c[None, :], z)
    return Event(t, tuple(marks[0].tolist())), GenState(h[0], c[0], t)


@dataclass
class Rollout:
    points: object  # (B, L, d+1) array or tape variable
    mask: np.ndarray  # (B, L) bool, True for events inside the horizon
    horizons: np.ndarray
    truncated: np.ndarray  # (B,) bool

    def sequences(self, label=None) -> list:
        pts = np.asarray(ad.value(self.points))
        out = []
        for b in range(len(self.horizons)):
            n = int(self.mask[b].sum())
            out.append(Sequence.from_arrays(pts[b, :n, 0], pts[b, :n, 1:], self.horizons[b],
                                            label, bool(self.truncated[b])))
        return out


def rollout(arrays: dict, horizons, d: int, rng=None, noise=None, max_events=MAX_EVENTS_CAP) -> Rollout:
    """Generate a batch of sequences, one per horizon, from ``h_0 = 0``, ``t_0 = 0``.

    Noise is either drawn step by step from ``rng`` (shape ``(B, d+1)`` per step)
    or read from ``noise`` of shape ``(B, L, d+1)``, which also caps the
    number of steps at ``L``. With tape variables in ``arrays`` the returned
    points are differentiable in the parameters.
    """
    horizons = np.asarray(horizons, dtype=float)
    B = len(horizons)
    max_events = min(int(max_events), MAX_EVENTS_CAP)
    if max_events < 1:
        raise ValueError("max_events must be at least 1")
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        max_events = min(max_events, noise.shape[1])
    p = np.shape(ad.value(arrays["cell_b"]))[0] // 4
    h = np.zeros((B, p))
    c = np.zeros((B, p))
    t = np.zeros((B, 1))
    alive = np.ones(B, dtype=bool)
    zs, masks = [], []
    for i in range(max_events):
        eps = noise[:, i] if noise is not None else rng.standard_normal((B, d + 1))
        dt, marks = head(arrays, h, eps, d)
        t = t + dt
        alive = alive & (ad.value(t)[:, 0] < horizons)
        if not alive.any():
            break
        z = ad.concatenate([t, marks], axis=1)
        zs.append(z)
        masks.append(alive.copy())
        h, c = cell(arrays, h, c, z)
    if zs:
        points = ad.stack(zs, axis=1)
        mask = np.stack(masks, axis=1)
    else:
        points = np.zeros((B, 0, d + 1))
        mask = np.zeros((B, 0), dtype=bool)
    truncated = alive if zs and len(zs) == max_events else np.zeros(B, dtype=bool)
    return Rollout(points, mask, horizons, truncated)


def generate(params: GeneratorParams, T: float, rng, max_events: int = MAX_EVENTS_CAP) -> Sequence:
    if T <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(rng)
    return rollout(params.arrays(), [T], params.d, rng=rng, max_events=max_events).sequences()[0]


def generate_batch(params: GeneratorParams, horizons, rng, max_events: int = MAX_EVENTS_CAP, label=None) -> list:
    rng = np.random.default_rng(rng)
    return rollout(params.arrays(), horizons, params.d, rng=rng, max_events=max_events).sequences(label)


def default_max_events(expected_count: float) -> int:
    return int(min(10 * math.ceil(max(expected_count, 1.0)), MAX_EVENTS_CAP))
