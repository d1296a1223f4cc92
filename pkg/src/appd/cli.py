"""Command-line interface: simulate -> train -> threshold -> detect -> evaluate.

Exit codes: 0 ok, 2 usage, 3 data validation, 4 checkpoint state.
The seed comes from ``--seed``, then the config file, then ``APPD_SEED``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .detection import detect, detect_regenerating, estimate_threshold
from .events import ValidationError, check_dataset, load_jsonl
from .evaluation import mean_traces, metrics_from_alarms, labels_of, write_metrics_csv, write_traces_csv
from .simulate import KINDS, make_dataset, write_dataset
from .training import TrainConfig, Trainer

log = logging.getLogger("appd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def env_seed(default=0) -> int:
    raw = os.environ.get("APPD_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"APPD_SEED must be an integer, got {raw!r}", EXIT_USAGE)


def _threads(n) -> int:
    return max(1, n or os.cpu_count() or 1)


def _pmap(fn, items, threads):
    # order-preserving, so outputs do not depend on the thread count
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def load_data(path):
    try:
        seqs = load_jsonl(path)
    except FileNotFoundError:
        raise CliError(f"data file not found: {path}", EXIT_DATA)
    except ValidationError as exc:
        report = "\n".join(f"  {v}" for v in (exc.violations or []))
        raise CliError(f"{path}: {exc}" + (f"\n{report}" if report else ""), EXIT_DATA)
    problems = check_dataset(seqs)
    if problems:
        raise CliError(f"{path}: dataset failed validation\n" + "\n".join(f"  {p}" for p in problems[:50]), EXIT_DATA)
    if not seqs:
        raise CliError(f"{path}: no sequences", EXIT_DATA)
    return seqs


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def open_checkpoint(path) -> Checkpoint:
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_CHECKPOINT)


# -- commands ---------------------------------------------------------------

def cmd_simulate(args):
    seed = args.seed if args.seed is not None else env_seed()
    seqs, manifest = make_dataset(args.kind, seed)
    data_path, man_path = write_dataset(seqs, manifest, args.out, args.name)
    log.info("wrote %d sequences to %s (manifest %s)", len(seqs), data_path, man_path)


CONFIG_FLAGS = {"M0": int, "M1": int, "n_gen": int, "n_real": int, "D": int, "lr_phi": float,
                "lr_theta": float, "clip_norm": float, "max_events": int}


def build_config(args) -> TrainConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_USAGE)
    for key in CONFIG_FLAGS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.seed is not None:
        values["seed"] = args.seed
    elif "seed" not in values:
        values["seed"] = env_seed()
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}", EXIT_USAGE)


def cmd_train(args):
    seqs = load_data(args.data)
    digest = file_digest(args.data)
    if any(s.label is not None for s in seqs):
        seqs = [s for s in seqs if s.label == "anomalous"]
        if not seqs:
            raise CliError(f"{args.data}: no sequences labeled anomalous to train on", EXIT_DATA)
    if args.resume:
        ckpt = open_checkpoint(args.resume)
        if ckpt.dataset_digest and ckpt.dataset_digest != digest:
            raise CliError("--resume checkpoint was trained on a different data file", EXIT_CHECKPOINT)
        config = ckpt.config
        if args.M0 is not None:
            config.M0 = args.M0
        try:
            state = ckpt.train_state()
        except CheckpointError as exc:
            raise CliError(str(exc), EXIT_CHECKPOINT)
    else:
        config = build_config(args)
        state = None

    def progress(st):
        if st.iteration % args.log_every == 0:
            h = st.history
            log.info("iter %d  J=%.4f  real=%.4f  gen=%.4f", st.iteration, h.J[-1], h.real_mean[-1], h.gen_mean[-1])

    try:
        state = Trainer(seqs, config, state).run(progress)
    except ValueError as exc:
        raise CliError(f"cannot train on {args.data}: {exc}", EXIT_DATA)
    ckpt = Checkpoint.from_state(state, config, digest)
    ckpt.save(args.out)
    history_path = args.history or str(Path(args.out).with_suffix(".history.csv"))
    state.history.to_csv(history_path)
    log.info("checkpoint %s, history %s", args.out, history_path)
    if state.aborted:
        log.error("training aborted: %s", state.aborted)


def _curve_seed(args, ckpt) -> int:
    if args.seed is not None:
        return args.seed
    return env_seed(ckpt.seeds.get("train", 0))


def cmd_threshold(args):
    ckpt = open_checkpoint(args.checkpoint)
    if ckpt.generator is None:
        raise CliError("checkpoint has no generator parameters", EXIT_CHECKPOINT)
    if ckpt.detector.frozen_features is None:
        raise CliError("checkpoint has no frozen Fourier features; train it first", EXIT_CHECKPOINT)
    seed = _curve_seed(args, ckpt)
    horizon = args.horizon if args.horizon is not None else ckpt.horizon
    try:
        curve = estimate_threshold(ckpt.detector, ckpt.generator, args.n_gen, args.i_max,
                                   np.random.default_rng(seed), horizon, args.c,
                                   ckpt.max_events or 10_000, seed)
    except ValueError as exc:
        raise CliError(f"cannot estimate threshold: {exc}", EXIT_CHECKPOINT)
    ckpt.curve = curve
    ckpt.seeds["threshold"] = seed
    ckpt.save(args.out or args.checkpoint)
    log.info("threshold curve of length %d written", curve.i_max)


def _need_curve(ckpt):
    if ckpt.curve is None:
        raise CliError("checkpoint has no threshold curve; run `appd threshold` first", EXIT_CHECKPOINT)
    if ckpt.detector.frozen_features is None:
        raise CliError("checkpoint has no frozen Fourier features", EXIT_CHECKPOINT)


def cmd_detect(args):
    ckpt = open_checkpoint(args.checkpoint)
    if args.online_threshold:
        if ckpt.generator is None:
            raise CliError("--online-threshold needs generator parameters", EXIT_CHECKPOINT)
        if ckpt.detector.frozen_features is None:
            raise CliError("checkpoint has no frozen Fourier features", EXIT_CHECKPOINT)
    else:
        _need_curve(ckpt)
    seqs = load_data(args.data)
    if args.online_threshold:
        seed = _curve_seed(args, ckpt)
        n_gen = args.n_gen or (ckpt.curve.n_gen if ckpt.curve else 32)
        c = args.c if args.c is not None else (ckpt.curve.c if ckpt.curve else 1.0)
        max_events = ckpt.max_events or 10_000
        # each sequence gets its own stream so results do not depend on order or threads
        streams = np.random.SeedSequence(seed).spawn(len(seqs))
        jobs = list(zip(seqs, streams))
        results = _pmap(lambda j: detect_regenerating(j[0], ckpt.detector, ckpt.generator, n_gen,
                                                      np.random.default_rng(j[1]), c, max_events),
                        jobs, _threads(args.threads))
    else:
        curve = ckpt.curve if args.c is None else ckpt.curve.scaled(args.c)
        results = _pmap(lambda s: detect(s, ckpt.detector, curve), seqs, _threads(args.threads))
    with open(args.out, "w") as fh:
        for k, res in enumerate(results):
            fh.write(json.dumps(dict(index=k, **res.to_record()), separators=(",", ":")) + "\n")
    log.info("%d of %d sequences alarmed", sum(r.is_anomaly for r in results), len(results))


def cmd_evaluate(args):
    ckpt = open_checkpoint(args.checkpoint)
    _need_curve(ckpt)
    seqs = load_data(args.data)
    if any(s.label is None for s in seqs):
        raise CliError(f"{args.data}: evaluation needs every sequence labeled", EXIT_DATA)
    curve = ckpt.curve if args.c is None else ckpt.curve.scaled(args.c)
    i_max = args.i_max or curve.i_max
    results = _pmap(lambda s: detect(s, ckpt.detector, curve), seqs, _threads(args.threads))
    try:
        rows = metrics_from_alarms(labels_of(seqs), [r.stop_index for r in results], i_max)
    except ValueError as exc:
        raise CliError(f"{args.data}: {exc}", EXIT_DATA)
    write_metrics_csv(rows, args.out)
    traces_path = args.traces or str(Path(args.out).with_suffix(".traces.csv"))
    write_traces_csv(mean_traces(seqs, ckpt.detector, curve, i_max), traces_path)
    at = rows[min(len(rows), 15) - 1]
    log.info("step %d: precision %.3f recall %.3f f1 %.3f", at.step, at.precision, at.recall, at.f1)


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="appd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: available cores)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--name", help="file stem (default: the kind)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="adversarial training")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file of training settings")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", help="history CSV (default: <out>.history.csv)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--seed", type=int)
    t.add_argument("--log-every", type=int, default=50)
    for key, typ in CONFIG_FLAGS.items():
        t.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    t.set_defaults(func=cmd_train)

    h = sub.add_parser("threshold", help="estimate the alarm threshold curve")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--out", help="write here instead of updating the checkpoint in place")
    h.add_argument("--n-gen", type=int, default=64)
    h.add_argument("--i-max", type=int, default=40)
    h.add_argument("--c", type=float, default=1.0)
    h.add_argument("--horizon", type=float)
    h.add_argument("--seed", type=int)
    h.set_defaults(func=cmd_threshold)

    d = sub.add_parser("detect", help="run the online detector")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True, help="JSON-lines results")
    d.add_argument("--c", type=float, help="rescale the stored threshold")
    d.add_argument("--online-threshold", action="store_true",
                   help="regenerate sequences at every step instead of using the stored curve")
    d.add_argument("--n-gen", type=int)
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="step-wise precision, recall and F1")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--traces", help="mean-statistic traces CSV (default: <out>.traces.csv)")
    e.add_argument("--i-max", type=int)
    e.add_argument("--c", type=float)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except CliError as exc:
        print(f"appd: error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
