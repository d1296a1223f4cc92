"""Minimax training of the detector against the sequence generator.

The objective is the gap between mean detector log-likelihood on real
(anomalous) sequences and on generated ones. Each outer iteration takes one
descent step on the generator, then ``M1`` ascent steps on the detector,
redrawing the real minibatch, the generated minibatch and the Fourier
features before every step. All noise is drawn up front per step and fed in
as explicit inputs, so each loss is a deterministic function of parameters.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteLossError, ParamVector
from .events import Sequence
from .fourier import draw_noise, sample_features
from .generator import GeneratorParams, default_max_events, rollout
from .hawkes import DetectorParams, batch_log_likelihood, log_likelihood, mark_volume, pack

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    M0: int = 1000
    M1: int = 5
    n_gen: int = 32
    n_real: int = 32
    D: int = 20
    lr_phi: float = 1e-3
    lr_theta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = None
    seed: int = 0
    hidden: int = 32  # generator LSTM width
    q: int = 2
    r: int = 2
    spectrum_hidden: tuple = (32, 32)
    alpha_init: float = 0.1
    max_events: int | None = None  # default: 10 x mean real length

    def __post_init__(self):
        self.spectrum_hidden = tuple(self.spectrum_hidden)
        for name in ("M1", "n_gen", "n_real", "D", "hidden", "q", "r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.M0 < 0:
            raise ValueError("M0 must be non-negative")
        if self.lr_phi < 0 or self.lr_theta < 0:
            raise ValueError("learning rates must be non-negative")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["spectrum_hidden"] = list(self.spectrum_hidden)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, g, ascend=False):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        delta = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return x + delta if ascend else x - delta

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}

    def load(self, state: dict):
        self.m = np.array(state["m"], dtype=float)
        self.v = np.array(state["v"], dtype=float)
        self.t = int(state["t"])


@dataclass
class TrainHistory:
    iteration: list = field(default_factory=list)
    J: list = field(default_factory=list)
    real_mean: list = field(default_factory=list)
    gen_mean: list = field(default_factory=list)
    grad_norm_theta: list = field(default_factory=list)
    grad_norm_phi: list = field(default_factory=list)

    COLUMNS = ("iteration", "J", "real_mean", "gen_mean", "grad_norm_theta", "grad_norm_phi")

    def append(self, **row):
        for k in self.COLUMNS:
            getattr(self, k).append(row[k])

    def __len__(self):
        return len(self.iteration)

    def rows(self):
        return list(zip(*(getattr(self, k) for k in self.COLUMNS)))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows():
                fh.write(f"{row[0]}," + ",".join(repr(float(v)) for v in row[1:]) + "\n")

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in self.COLUMNS}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(**{k: list(d[k]) for k in cls.COLUMNS})


@dataclass
class TrainState:
    """Everything needed to continue a run: parameters, optimizers, RNG, history."""

    detector: DetectorParams
    generator: GeneratorParams
    horizon_pool: np.ndarray
    max_events: int
    iteration: int = 0
    adam_theta: dict | None = None
    adam_phi: dict | None = None
    rng_state: dict | None = None
    history: TrainHistory = field(default_factory=TrainHistory)
    aborted: str | None = None
    # raw optimizer-space parameters; mu and alpha do not survive exp/log bit-exactly
    theta_arrays: dict | None = None
    phi_arrays: dict | None = None


def objective(real_batch, gen_batch, params: DetectorParams, fs=None) -> float:
    if not real_batch or not gen_batch:
        raise ValueError("both batches must be non-empty")
    real = np.mean([log_likelihood(s, params, fs) for s in real_batch])
    gen = np.mean([log_likelihood(s, params, fs) for s in gen_batch])
    return float(real - gen)


def _streams(seed):
    init, loop, freeze = np.random.SeedSequence(seed).spawn(3)
    return init, loop, freeze


def data_stats(dataset) -> tuple:
    if not dataset:
        raise ValueError("dataset is empty")
    dims = {s.d for s in dataset if s.d is not None}
    if len(dims) > 1:
        raise ValueError(f"sequences disagree on mark dimension: {sorted(dims)}")
    d = dims.pop() if dims else 0
    n_events = sum(len(s) for s in dataset)
    exposure = sum(s.horizon for s in dataset) * mark_volume(d)
    mean_len = n_events / len(dataset)
    return d, n_events / exposure, mean_len


def init_state(dataset, config: TrainConfig) -> TrainState:
    """Detector starts at the homogeneous Poisson fit (mu = event rate per unit
    time and mark volume, alpha = ``alpha_init``); the generator's first gap
    starts at the mean inter-event gap of the data."""
    d, rate, mean_len = data_stats(dataset)
    init_ss, loop_ss, _ = _streams(config.seed)
    rng = np.random.default_rng(init_ss)
    detector = DetectorParams.init(d, mu=max(rate, 1e-6), alpha=config.alpha_init, q=config.q,
                                   r=config.r, hidden=config.spectrum_hidden, rng=rng)
    horizons = np.array([s.horizon for s in dataset])
    mean_gap = float(horizons.mean() / (mean_len + 1.0))
    generator = GeneratorParams.init(d, config.hidden, rng, mean_gap=mean_gap)
    max_events = config.max_events or default_max_events(mean_len)
    loop_rng = np.random.default_rng(loop_ss)
    return TrainState(detector, generator, horizons, max_events, rng_state=loop_rng.bit_generator.state)


def _clip(g, clip_norm):
    if clip_norm is None:
        return g
    n = np.linalg.norm(g)
    return g * (clip_norm / n) if n > clip_norm else g


def _canonical(arrays, reference: dict) -> dict:
    # flat optimizer moments follow the key order of ``reference``; a reloaded dict may be sorted
    if arrays is None:
        return reference
    return {k: arrays[k] for k in reference}


class Trainer:
    """Runs the alternating updates; ``run`` may be called on a resumed state."""

    def __init__(self, dataset, config: TrainConfig, state: TrainState | None = None):
        self.dataset = list(dataset)
        self.config = config
        self.state = state or init_state(self.dataset, config)
        self.d = self.state.detector.d
        st = self.state
        self.theta = ParamVector.from_arrays(_canonical(st.theta_arrays, st.detector.arrays()))
        self.phi = ParamVector.from_arrays(_canonical(st.phi_arrays, st.generator.arrays()))
        c = config
        self.opt_theta = Adam(len(self.theta), c.lr_theta, c.beta1, c.beta2, c.adam_eps)
        self.opt_phi = Adam(len(self.phi), c.lr_phi, c.beta1, c.beta2, c.adam_eps)
        if st.adam_theta:
            self.opt_theta.load(st.adam_theta)
        if st.adam_phi:
            self.opt_phi.load(st.adam_phi)
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = st.rng_state

    # -- minibatches ---------------------------------------------------------

    def draw_real(self):
        n = len(self.dataset)
        idx = self.rng.choice(n, size=min(self.config.n_real, n), replace=False)
        return pack([self.dataset[i] for i in idx], self.d)

    def draw_gen_noise(self):
        horizons = self.rng.choice(self.state.horizon_pool, size=self.config.n_gen)
        noise = self.rng.standard_normal((self.config.n_gen, self.state.max_events, self.d + 1))
        return horizons, noise

    def draw_features(self):
        return draw_noise(self.config.D, self.config.q, self.rng)

    # -- losses ---------------------------------------------------------------

    def gen_loss(self, phi_arrays, theta_arrays, horizons, noise, zetas, phases):
        roll = rollout(phi_arrays, horizons, self.d, noise=noise, max_events=self.state.max_events)
        ll = batch_log_likelihood(theta_arrays, roll.points, roll.mask, roll.horizons, phases, self.d, zetas=zetas)
        return ad.mean(ll)

    def objective_theta(self, theta_arrays, real, gen, zetas, phases):
        r = batch_log_likelihood(theta_arrays, real.points, real.mask, real.horizons, phases, self.d, zetas=zetas)
        g = batch_log_likelihood(theta_arrays, gen.points, gen.mask, gen.horizons, phases, self.d, zetas=zetas)
        return ad.mean(r) - ad.mean(g)

    # -- steps ----------------------------------------------------------------

    def phi_step(self):
        theta_arrays = self.theta.to_arrays()
        real = self.draw_real()
        horizons, noise = self.draw_gen_noise()
        zetas, phases = self.draw_features()
        real_ll = batch_log_likelihood(theta_arrays, real.points, real.mask, real.horizons, phases, self.d, zetas=zetas)
        real_mean = float(np.mean(real_ll))

        def loss(phi_arrays):
            # J = real_mean - gen_mean; only the generated term depends on phi
            return real_mean - self.gen_loss(phi_arrays, theta_arrays, horizons, noise, zetas, phases)

        J, g = ad.value_and_grad(loss, self.phi)
        g = _clip(g.flat, self.config.clip_norm)
        self.phi = self.phi.with_flat(self.opt_phi.step(self.phi.flat, g, ascend=False))
        return J, real_mean, real_mean - J, float(np.linalg.norm(g))

    def theta_step(self):
        real = self.draw_real()
        horizons, noise = self.draw_gen_noise()
        gen_seqs = rollout(self.phi.to_arrays(), horizons, self.d, noise=noise,
                           max_events=self.state.max_events)
        gen = pack(gen_seqs.sequences(), self.d)
        zetas, phases = self.draw_features()
        J, g = ad.value_and_grad(lambda th: self.objective_theta(th, real, gen, zetas, phases), self.theta)
        g = _clip(g.flat, self.config.clip_norm)
        self.theta = self.theta.with_flat(self.opt_theta.step(self.theta.flat, g, ascend=True))
        return J, float(np.linalg.norm(g))

    def run(self, callback=None) -> TrainState:
        st = self.state
        while st.iteration < self.config.M0:
            try:
                J, real_mean, gen_mean, gphi = self.phi_step()
                gtheta = 0.0
                for _ in range(self.config.M1):
                    _, gtheta = self.theta_step()
            except NonFiniteLossError as exc:
                st.aborted = f"non-finite loss at iteration {st.iteration + 1}: {exc}"
                log.error(st.aborted)
                break
            st.iteration += 1
            st.history.append(iteration=st.iteration, J=J, real_mean=real_mean, gen_mean=gen_mean,
                              grad_norm_theta=gtheta, grad_norm_phi=gphi)
            if callback is not None:
                callback(st)
        return self.finish()

    def finish(self) -> TrainState:
        st = self.state
        st.theta_arrays = self.theta.to_arrays()
        st.phi_arrays = self.phi.to_arrays()
        if st.iteration > 0:
            # untouched parameters stay bit-identical to the initialization
            st.detector = st.detector.with_arrays(st.theta_arrays)
            st.generator = GeneratorParams.from_arrays(st.phi_arrays)
        st.adam_theta = self.opt_theta.state()
        st.adam_phi = self.opt_phi.state()
        st.rng_state = self.rng.bit_generator.state
        st.detector.frozen_features = freeze_features(st.detector, self.config)
        return st


def freeze_features(detector: DetectorParams, config: TrainConfig):
    """Features used at detection time, drawn from the seed's dedicated stream."""
    _, _, freeze_ss = _streams(config.seed)
    return sample_features(detector.spectrum, config.D, np.random.default_rng(freeze_ss))


def train(dataset, config: TrainConfig, state: TrainState | None = None, callback=None) -> TrainState:
    """Run (or continue) the alternating minimax training.

    Returns the final ``TrainState``; ``state.aborted`` is set when a
    non-finite loss stopped the run early, in which case the history holds
    every completed iteration.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    return Trainer(dataset, config, state).run(callback)
