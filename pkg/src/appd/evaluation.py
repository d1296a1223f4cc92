"""Step-wise precision / recall / F1 of the online detector on labeled data.

At step ``i`` the detected set ``V_i`` holds every sequence that alarmed at
some step ``<= i``; a sequence shorter than ``i`` keeps its final status.
"""
from __future__ import annotations

import csv
from dataclasses import astuple, dataclass

import numpy as np

from .detection import ThresholdCurve, detect, prefix_matrix


@dataclass
class StepMetrics:
    step: int
    precision: float
    recall: float
    f1: float
    U: int
    V: int
    UiV: int
    degenerate: bool

    FIELDS = ("step", "precision", "recall", "f1", "U", "V", "UiV", "degenerate")


def metrics_from_alarms(is_anomalous, stop_indices, i_max: int) -> list:
    """``stop_indices`` holds the 1-based alarm step per sequence, or None."""
    truth = np.asarray(is_anomalous, dtype=bool)
    U = int(truth.sum())
    if U == 0:
        raise ValueError("no anomalous sequences in the dataset; recall is undefined")
    stops = np.array([np.inf if s is None else s for s in stop_indices], dtype=float)
    rows = []
    for i in range(1, i_max + 1):
        alarmed = stops <= i
        V = int(alarmed.sum())
        UiV = int((alarmed & truth).sum())
        degenerate = V == 0
        P = UiV / V if V else 0.0
        R = UiV / U
        f1 = 2 * P * R / (P + R) if P + R > 0 else 0.0
        rows.append(StepMetrics(i, P, R, f1, U, V, UiV, degenerate))
    return rows


def labels_of(dataset) -> np.ndarray:
    return np.array([s.label == "anomalous" for s in dataset])


def stepwise_evaluate(dataset, detector, curve: ThresholdCurve, i_max: int) -> list:
    stops = [detect(s, detector, curve).stop_index for s in dataset]
    return metrics_from_alarms(labels_of(dataset), stops, i_max)


def stepwise_from_traces(dataset, detector, curve: ThresholdCurve, i_max: int) -> list:
    """Same metrics from precomputed prefix traces instead of streaming detection."""
    stops = []
    for s in dataset:
        n = len(s)
        trace = prefix_matrix([s], detector, max(n, 1))[0, :n]
        eta = np.array([curve.at(i) for i in range(1, n + 1)])
        hits = np.nonzero(trace >= eta)[0]
        stops.append(int(hits[0]) + 1 if len(hits) else None)
    return metrics_from_alarms(labels_of(dataset), stops, i_max)


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(StepMetrics.FIELDS)
        for r in rows:
            step, P, R, f1, U, V, UiV, deg = astuple(r)
            w.writerow([step, repr(P), repr(R), repr(f1), U, V, UiV, int(deg)])


def mean_traces(dataset, detector, curve: ThresholdCurve, i_max: int) -> dict:
    """Mean carry-forward statistic per step for anomalous and normal sequences,
    alongside the generated-sequence mean and the threshold."""
    labels = labels_of(dataset)
    stats = prefix_matrix(list(dataset), detector, i_max)
    nan = np.full(i_max, np.nan)
    gen = curve.generated_mean[:i_max] if curve.generated_mean is not None else nan
    if len(gen) < i_max:
        gen = np.concatenate([gen, np.full(i_max - len(gen), gen[-1])])
    return {
        "step": np.arange(1, i_max + 1),
        "anomalous_mean": stats[labels].mean(axis=0) if labels.any() else nan,
        "normal_mean": stats[~labels].mean(axis=0) if (~labels).any() else nan,
        "generated_mean": gen,
        "threshold": np.array([curve.at(i) for i in range(1, i_max + 1)]),
    }


def write_traces_csv(traces: dict, path):
    cols = list(traces)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(traces["step"])):
            w.writerow([int(traces["step"][k])] + [repr(float(traces[c][k])) for c in cols[1:]])
