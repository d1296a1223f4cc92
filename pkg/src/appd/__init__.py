"""Adversarial sequential anomaly detection for marked event sequences."""
from .events import Event, Sequence, ValidationError, load_jsonl, save_jsonl
from .hawkes import DetectorParams, log_likelihood, prefix_log_likelihood
from .generator import GeneratorParams, generate
from .training import TrainConfig, train
from .detection import ThresholdCurve, detect, estimate_threshold
from .evaluation import stepwise_evaluate

__version__ = "0.1.0"
