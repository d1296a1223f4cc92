"""Versioned JSON checkpoints.

Arrays are stored as base64 of little-endian float64 bytes so every scalar
round-trips bit-exactly while the envelope stays readable.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import ThresholdCurve
from .fourier import FourierFeatureSet, SpectrumNet
from .generator import GeneratorParams
from .hawkes import DetectorParams
from .training import TrainConfig, TrainHistory, TrainState

FORMAT = "appd-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(a) -> dict:
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(rec: dict) -> np.ndarray:
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(float)


def _encode_dict(arrays: dict) -> dict:
    return {k: encode_array(v) for k, v in arrays.items()}


def _decode_dict(rec: dict) -> dict:
    return {k: decode_array(v) for k, v in rec.items()}


def _maybe(a):
    return None if a is None else encode_array(a)


def _maybe_decode(rec):
    return None if rec is None else decode_array(rec)


def encode_detector(p: DetectorParams) -> dict:
    out = {"mu": encode_array(p.mu), "alpha": encode_array(p.alpha), "W": encode_array(p.W),
           "spectrum": _encode_dict(p.spectrum.arrays())}
    fs = p.frozen_features
    out["features"] = None if fs is None else {
        "omegas": encode_array(fs.omegas), "phases": encode_array(fs.phases), "zetas": encode_array(fs.zetas)}
    return out


def decode_detector(rec: dict) -> DetectorParams:
    fs = rec.get("features")
    frozen = None if fs is None else FourierFeatureSet(*(decode_array(fs[k]) for k in ("omegas", "phases", "zetas")))
    return DetectorParams(float(decode_array(rec["mu"])), float(decode_array(rec["alpha"])),
                          decode_array(rec["W"]), SpectrumNet.from_arrays(_decode_dict(rec["spectrum"])), frozen)


def encode_curve(c: ThresholdCurve) -> dict:
    return {"eta": encode_array(c.eta), "c": c.c, "n_gen": c.n_gen, "seed": c.seed,
            "generated_mean": _maybe(c.generated_mean), "generated_std": _maybe(c.generated_std)}


def decode_curve(rec: dict) -> ThresholdCurve:
    return ThresholdCurve(decode_array(rec["eta"]), rec["c"], rec["n_gen"], rec["seed"],
                          _maybe_decode(rec["generated_mean"]), _maybe_decode(rec["generated_std"]))


def _encode_adam(state):
    if state is None:
        return None
    return {"m": encode_array(state["m"]), "v": encode_array(state["v"]), "t": int(state["t"])}


def _decode_adam(rec):
    if rec is None:
        return None
    return {"m": decode_array(rec["m"]), "v": decode_array(rec["v"]), "t": rec["t"]}


@dataclass
class Checkpoint:
    detector: DetectorParams
    generator: GeneratorParams | None
    config: TrainConfig
    curve: ThresholdCurve | None = None
    seeds: dict = field(default_factory=dict)
    dataset_digest: str | None = None
    horizon_pool: np.ndarray | None = None
    max_events: int | None = None
    iteration: int = 0
    adam_theta: dict | None = None
    adam_phi: dict | None = None
    rng_state: dict | None = None
    history: TrainHistory = field(default_factory=TrainHistory)
    aborted: str | None = None
    theta_arrays: dict | None = None
    phi_arrays: dict | None = None

    @property
    def horizon(self) -> float:
        if self.horizon_pool is None or not len(self.horizon_pool):
            raise CheckpointError("checkpoint records no data horizon")
        return float(np.mean(self.horizon_pool))

    @classmethod
    def from_state(cls, st: TrainState, config: TrainConfig, dataset_digest=None) -> "Checkpoint":
        return cls(st.detector, st.generator, config, None, {"train": config.seed}, dataset_digest,
                   np.asarray(st.horizon_pool, dtype=float), st.max_events, st.iteration,
                   st.adam_theta, st.adam_phi, st.rng_state, st.history, st.aborted,
                   st.theta_arrays, st.phi_arrays)

    def train_state(self) -> TrainState:
        if self.generator is None:
            raise CheckpointError("checkpoint has no generator parameters")
        return TrainState(self.detector, self.generator, np.asarray(self.horizon_pool), self.max_events,
                          self.iteration, self.adam_theta, self.adam_phi, self.rng_state,
                          self.history, self.aborted, self.theta_arrays, self.phi_arrays)

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "detector": encode_detector(self.detector),
            "generator": None if self.generator is None else _encode_dict(self.generator.arrays()),
            "curve": None if self.curve is None else encode_curve(self.curve),
            "config": self.config.to_dict(),
            "seeds": self.seeds,
            "dataset_digest": self.dataset_digest,
            "horizon_pool": _maybe(self.horizon_pool),
            "max_events": self.max_events,
            "train": {
                "iteration": self.iteration,
                "adam_theta": _encode_adam(self.adam_theta),
                "adam_phi": _encode_adam(self.adam_phi),
                "rng_state": self.rng_state,
                "history": self.history.to_dict(),
                "aborted": self.aborted,
                "theta": None if self.theta_arrays is None else _encode_dict(self.theta_arrays),
                "phi": None if self.phi_arrays is None else _encode_dict(self.phi_arrays),
            },
        }

    @classmethod
    def from_json(cls, rec: dict) -> "Checkpoint":
        if rec.get("format") != FORMAT:
            raise CheckpointError("not a checkpoint file")
        if rec.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {rec.get('version')!r}; expected {VERSION}")
        tr = rec["train"]
        gen = rec.get("generator")
        return cls(
            decode_detector(rec["detector"]),
            None if gen is None else GeneratorParams.from_arrays(_decode_dict(gen)),
            TrainConfig.from_dict(rec["config"]),
            None if rec.get("curve") is None else decode_curve(rec["curve"]),
            rec.get("seeds", {}),
            rec.get("dataset_digest"),
            _maybe_decode(rec.get("horizon_pool")),
            rec.get("max_events"),
            tr["iteration"],
            _decode_adam(tr["adam_theta"]),
            _decode_adam(tr["adam_phi"]),
            tr["rng_state"],
            TrainHistory.from_dict(tr["history"]),
            tr["aborted"],
            None if tr.get("theta") is None else _decode_dict(tr["theta"]),
            None if tr.get("phi") is None else _decode_dict(tr["phi"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())


def load_checkpoint(path) -> Checkpoint:
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return Checkpoint.from_json(rec)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: missing {exc}") from exc
