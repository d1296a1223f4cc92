"""Deep Fourier kernel: learned spectrum, random features and the empirical kernel.

The spectrum is the pushforward of standard normal noise through a small
tanh network. Given ``D`` sampled frequencies ``omega_k`` and phases ``u_k``
the feature map of a point ``x = [t, m]`` is::

    Phi_k(x) = sqrt(2 / D) * cos(omega_k . (W x) + u_k)

so that ``Phi(x) . Phi(x')`` is the Monte Carlo kernel estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class SpectrumNet:
    """Multilayer perceptron mapping noise in R^q to frequencies in R^r.

    Hidden layers use tanh, the output layer is linear.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer shapes do not chain")

    @property
    def q(self) -> int:
        return self.weights[0].shape[0]

    @property
    def r(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, q=2, r=2, hidden=(32, 32), rng=None) -> "SpectrumNet":
        rng = np.random.default_rng(rng)
        sizes = [q, *hidden, r]
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, (n_in, n_out)))
            biases.append(rng.uniform(-bound, bound, n_out))
        return cls(weights, biases)

    @classmethod
    def identity(cls, dim=2) -> "SpectrumNet":
        return cls([np.eye(dim)], [np.zeros(dim)])

    @classmethod
    def zero(cls, q=2, r=2) -> "SpectrumNet":
        return cls([np.zeros((q, r))], [np.zeros(r)])

    def arrays(self, prefix="spectrum") -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{k}"] = w
            out[f"{prefix}.b{k}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix="spectrum") -> "SpectrumNet":
        weights, biases, k = [], [], 0
        while f"{prefix}.W{k}" in arrays:
            weights.append(np.asarray(arrays[f"{prefix}.W{k}"], dtype=float))
            biases.append(np.asarray(arrays[f"{prefix}.b{k}"], dtype=float))
            k += 1
        return cls(weights, biases)

    def __call__(self, zeta):
        return spectrum_forward(self.weights, self.biases, zeta)


def spectrum_forward(weights, biases, zeta):
    """Apply the network; works on arrays or tape variables."""
    h = zeta
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        h = ad.matmul(h, w) + b
        if k < last:
            h = ad.tanh(h)
    return h


@dataclass
class FourierFeatureSet:
    omegas: np.ndarray  # (D, r)
    phases: np.ndarray  # (D,)
    zetas: np.ndarray  # (D, q) noise the frequencies were computed from

    def __post_init__(self):
        if len(self.omegas) != len(self.phases):
            raise ValueError("omegas and phases must have the same count")

    @property
    def D(self) -> int:
        return len(self.phases)


def draw_noise(D: int, q: int, rng):
    """Standard normal spectrum noise and uniform phases, in that order."""
    if D < 1:
        raise ValueError("need at least one Fourier feature")
    zetas = rng.standard_normal((D, q))
    phases = rng.uniform(0.0, 2.0 * math.pi, D)
    return zetas, phases


def sample_features(net: SpectrumNet, D: int, rng) -> FourierFeatureSet:
    rng = np.random.default_rng(rng)
    zetas, phases = draw_noise(D, net.q, rng)
    return FourierFeatureSet(np.asarray(net(zetas)), phases, zetas)


def features(x, W, omegas, phases):
    """Feature map on the last axis of ``x``; differentiable in every argument."""
    D = np.shape(ad.value(phases))[0]
    proj = ad.matmul(x, ad.swapaxes(W, 0, 1))  # (..., r)
    arg = ad.matmul(proj, ad.swapaxes(omegas, 0, 1)) + phases
    return math.sqrt(2.0 / D) * ad.cos(arg)


def feature_map(x, fs: FourierFeatureSet, W) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"point has dimension {x.shape[-1]}, projection expects {W.shape[1]}")
    if fs.omegas.shape[1] != W.shape[0]:
        raise ValueError(f"frequencies live in R^{fs.omegas.shape[1]}, projection maps to R^{W.shape[0]}")
    return features(np.atleast_2d(x), W, fs.omegas, fs.phases).reshape(*x.shape[:-1], fs.D)


def kernel_estimate(x, x2, fs: FourierFeatureSet, W) -> float:
    return float(feature_map(x, fs, W) @ feature_map(x2, fs, W))


def gram(points, fs: FourierFeatureSet, W) -> np.ndarray:
    phi = feature_map(points, fs, W)
    return phi @ phi.T
