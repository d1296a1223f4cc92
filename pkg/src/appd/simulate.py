"""Synthetic data: exponential-kernel Hawkes anomalies and Poisson normals.

Hawkes sequences are drawn with Ogata's thinning. Between events the
exponential-kernel intensity only decays, so the intensity just after the
current time bounds it until the next acceptance.

A process started with no history has a lower expected count on ``[0, T)``
than the stationary one. Passing ``burn_in`` starts the simulation at
``-burn_in`` and keeps only events in ``[0, T)``, which gives (up to an
``exp(-(beta - alpha) * burn_in)`` residual) a stationary sample.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .events import Sequence, save_jsonl

SINGLETON_SIZE = 1000
STRATUM_SIZE = 200
COMPOSITE_BETAS = (1.0, 2.0, 3.0, 4.0, 5.0)
NORMAL_COUNT = 5000
NORMAL_RATE_RANGE = (5.0, 15.0)
SINGLETON_MEAN_LENGTH = 32.0
COMPOSITE_MEAN_LENGTH = 29.0
KINDS = ("singleton", "composite", "mixed", "mixed-composite")


@dataclass(frozen=True)
class ExpHawkesSpec:
    mu: float
    alpha_kernel: float
    beta: float
    T: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0 <= self.alpha_kernel < self.beta:
            raise ValueError(f"need 0 <= alpha < beta for stationarity, got alpha={self.alpha_kernel}, beta={self.beta}")
        if not self.T > 0:
            raise ValueError("horizon must be positive")

    @property
    def branching_ratio(self) -> float:
        return self.alpha_kernel / self.beta

    @property
    def stationary_rate(self) -> float:
        return self.mu / (1.0 - self.branching_ratio)


def simulate_hawkes(spec: ExpHawkesSpec, rng, trace: list | None = None, label="anomalous",
                    burn_in: float = 0.0) -> Sequence:
    """One sequence on ``[0, T)``.

    If ``trace`` is a list, every accepted point appends
    ``(t, intensity_at_t, bound_in_force)``, burn-in points included.
    """
    rng = np.random.default_rng(rng)
    mu, a, b, T = spec.mu, spec.alpha_kernel, spec.beta, spec.T
    times = []
    t = -float(burn_in)
    excite = 0.0  # sum of a*exp(-b(t - t_i)) just after time t
    while True:
        bound = mu + excite
        gap = rng.exponential(1.0 / bound)
        t += gap
        if t >= T:
            break
        excite *= math.exp(-b * gap)
        lam = mu + excite
        if rng.uniform() * bound <= lam:
            if trace is not None:
                trace.append((t, lam, bound))
            if t >= 0.0:
                times.append(t)
            excite += a
    return Sequence.from_arrays(times, horizon=T, label=label)


def expected_count(spec: ExpHawkesSpec) -> float:
    """Mean number of events on ``[0, T)`` for a process started empty at 0."""
    n, k = spec.branching_ratio, spec.beta - spec.alpha_kernel
    return spec.stationary_rate * spec.T - spec.mu * n / (spec.beta * (1 - n) ** 2) * -math.expm1(-k * spec.T)


def stationary_burn_in(spec: ExpHawkesSpec, residual: float = 1e-9) -> float:
    """Burn-in after which the start-up transient has decayed to ``residual``."""
    return -math.log(residual) / (spec.beta - spec.alpha_kernel)


def simulate_poisson(rate: float, T: float, rng, label="normal") -> Sequence:
    if not rate > 0:
        raise ValueError("rate must be positive")
    rng = np.random.default_rng(rng)
    times = []
    t = rng.exponential(1.0 / rate)
    while t < T:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    return Sequence.from_arrays(times, horizon=T, label=label)


def horizon_for_mean_length(specs_rates, mean_length: float) -> float:
    """Horizon at which the average stationary count over the strata equals ``mean_length``."""
    return mean_length / float(np.mean(specs_rates))


def _seq_rng(seed: int, stream: int, index: int):
    return np.random.default_rng([seed, stream, index])


def singleton_specs():
    T = horizon_for_mean_length([10.0 / (1 - 1 / 3)], SINGLETON_MEAN_LENGTH)
    return [(ExpHawkesSpec(10.0, 1.0, 3.0, T), SINGLETON_SIZE)]


def composite_specs():
    # alpha = beta = 1 is not stationary; that stratum uses alpha = 0.5
    alphas = [0.5 if b <= 1.0 else 1.0 for b in COMPOSITE_BETAS]
    rates = [10.0 / (1 - a / b) for a, b in zip(alphas, COMPOSITE_BETAS)]
    T = horizon_for_mean_length(rates, COMPOSITE_MEAN_LENGTH)
    return [(ExpHawkesSpec(10.0, a, b, T), STRATUM_SIZE) for a, b in zip(alphas, COMPOSITE_BETAS)]


def make_dataset(kind: str, seed: int):
    """Return ``(sequences, manifest)`` for one of ``KINDS``.

    ``mixed`` is the singleton set plus Poisson normals, ``mixed-composite``
    the composite set plus Poisson normals. Each sequence has its own
    generator seeded by ``(seed, stream, index)``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    strata = singleton_specs() if kind in ("singleton", "mixed") else composite_specs()
    seqs = []
    for s, (spec, count) in enumerate(strata):
        burn = stationary_burn_in(spec)
        seqs += [simulate_hawkes(spec, _seq_rng(seed, s, i), burn_in=burn) for i in range(count)]
    T = strata[0][0].T
    deviations = []
    if kind in ("composite", "mixed-composite"):
        deviations.append("beta=1 stratum uses alpha=0.5 (alpha=1, beta=1 has branching ratio 1)")
    manifest = {
        "kind": kind,
        "seed": seed,
        "horizon": T,
        "anomalous": [dict(asdict(spec), count=count, burn_in=stationary_burn_in(spec)) for spec, count in strata],
        "deviations": deviations,
    }
    if kind.startswith("mixed"):
        stream = len(strata)
        rates = _seq_rng(seed, stream, 0).uniform(*NORMAL_RATE_RANGE, NORMAL_COUNT)
        seqs += [simulate_poisson(float(r), T, _seq_rng(seed, stream + 1, i)) for i, r in enumerate(rates)]
        manifest["normal"] = {"count": NORMAL_COUNT, "rate_range": list(NORMAL_RATE_RANGE), "horizon": T}
    manifest["count"] = len(seqs)
    return seqs, manifest


def write_dataset(seqs, manifest: dict, out_dir, name: str | None = None):
    """Write ``<name>.jsonl`` and ``<name>.manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or manifest["kind"]
    data_path = out / f"{name}.jsonl"
    save_jsonl(seqs, data_path)
    manifest = dict(manifest, data_file=data_path.name,
                    sha256=hashlib.sha256(data_path.read_bytes()).hexdigest())
    man_path = out / f"{name}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return data_path, man_path
