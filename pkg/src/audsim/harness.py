"""Monte-Carlo driver: seeded trials, threshold calibration, sweeps and result files.

Every trial draws from its own stream derived from ``(master_seed, stream,
trial_index)``, so results do not depend on how trials are split across
workers. Calibration trials use a stream disjoint from evaluation trials.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, omp_kernel
from . import omp as omp_module
from .channel import sample_activity, synthesize_frame
from .config import (CONFIG_FIELDS, ExperimentConfig, Fusion, Stopping, SweepSpec,
                     expand, spec_to_dict, validate)
from .fusion import detect, detection_thresholds, stopping_for
from .metrics import Aggregate, BalancedScore, ConfusionCounts, balanced_accuracy, score
from .pilots import PilotBook, make_pilot_book

log = logging.getLogger(__name__)

PILOT_STREAM = 0
EVAL_STREAM = 1
CALIBRATION_STREAM = 2

CHUNK_SIZE = 250


@dataclass(frozen=True)
class TrialSeed:
    master_seed: int
    trial_index: int
    stream: int = EVAL_STREAM

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream, self.trial_index))
        return np.random.default_rng(ss)

    def pilot_rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed,
                                    spawn_key=(PILOT_STREAM, self.stream, self.trial_index))
        return np.random.default_rng(ss)


def experiment_pilot_book(cfg: ExperimentConfig) -> PilotBook:
    """The pilot book shared by all trials of an experiment."""
    ss = np.random.SeedSequence(cfg.master_seed, spawn_key=(PILOT_STREAM,))
    return make_pilot_book(cfg, np.random.default_rng(ss))


def realize(cfg: ExperimentConfig, book: PilotBook, seed: TrialSeed):
    """Activity and received frame of one trial; returns (book, frame, rng)."""
    rng = seed.rng()
    if cfg.pilot_mode == "trial":
        book = make_pilot_book(cfg, seed.pilot_rng())
    activity = sample_activity(book.num_users, cfg.activation_prob, rng)
    frame = synthesize_frame(book, activity, cfg, rng)
    return book, frame, rng


def _detect(cfg, book, frame, rng, epsilon):
    kw = {}
    if cfg.fusion is Fusion.ITERATIVE and cfg.channel_order == "random":
        kw["order"] = rng.permutation(book.num_channels)
    return detect(frame, book, cfg.fusion, stopping_for(cfg, epsilon), cfg.max_iters, **kw)


def run_trial(cfg: ExperimentConfig, book: PilotBook, seed: TrialSeed,
              epsilon: float | None = None) -> tuple[ConfusionCounts, BalancedScore]:
    """One Monte-Carlo trial: activity, frame, fused detection, score."""
    book, frame, rng = realize(cfg, book, seed)
    outcome = _detect(cfg, book, frame, rng, epsilon)
    return score(outcome, frame.activity)


# --- chunk workers (module level so they pickle) ------------------------------

def _uses_thresholds(cfg) -> bool:
    return cfg.stopping is Stopping.RESIDUAL and not (
        cfg.fusion is Fusion.ITERATIVE and cfg.num_channels > 1)


def _eval_chunk(cfg, book, epsilon, stream, start, stop):
    values = np.empty(stop - start)
    counts = np.zeros(4, dtype=np.int64)
    for i, t in enumerate(range(start, stop)):
        b, frame, rng = realize(cfg, book, TrialSeed(cfg.master_seed, t, stream))
        active = frame.activity.active
        if _uses_thresholds(cfg):
            eps = cfg.epsilon if epsilon is None else epsilon
            det = detection_thresholds(frame, b, cfg.fusion, eps, cfg.max_iters) >= eps
            tp = int(np.count_nonzero(det & active))
            fp = int(np.count_nonzero(det & ~active))
            k = int(np.count_nonzero(active))
            c = (tp, fp, active.size - k - fp, k - tp)
            acc = balanced_accuracy(tp, c[2], k, active.size)
        else:
            cc, sc = score(_detect(cfg, b, frame, rng, epsilon), frame.activity)
            c = cc.as_tuple()[:4]
            acc = sc.balanced_accuracy
        values[i] = 1.0 - acc
        counts += c
    return values, counts


def _grid_chunk(cfg, book, grid, stream, start, stop):
    """Inaccuracy of every grid threshold on the same trials (common random numbers)."""
    grid = np.asarray(grid, dtype=float)
    values = np.empty((grid.size, stop - start))
    counts = np.zeros((grid.size, 4), dtype=np.int64)
    floor = float(grid.min())
    for i, t in enumerate(range(start, stop)):
        b, frame, rng = realize(cfg, book, TrialSeed(cfg.master_seed, t, stream))
        active = frame.activity.active
        n, k = active.size, int(np.count_nonzero(active))
        if _uses_thresholds(cfg):
            thr = detection_thresholds(frame, b, cfg.fusion, floor, cfg.max_iters)
            det = thr[None, :] >= grid[:, None]
            tp = np.count_nonzero(det & active, axis=1)
            fp = np.count_nonzero(det & ~active, axis=1)
        else:
            state = rng.bit_generator.state
            tp = np.empty(grid.size, dtype=np.int64)
            fp = np.empty(grid.size, dtype=np.int64)
            for g, eps in enumerate(grid):
                rng.bit_generator.state = state
                cc, _ = score(_detect(cfg, b, frame, rng, eps), frame.activity)
                tp[g], fp[g] = cc.true_pos, cc.false_pos
        tn = n - k - fp
        values[:, i] = 1.0 - balanced_accuracy(tp, tn, k, n)
        counts += np.stack([tp, fp, tn, k - tp], axis=1)
    return values, counts


def _chunks(n: int, size: int = CHUNK_SIZE):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _map(fn, args, n_trials, workers):
    """Apply ``fn(*args, start, stop)`` over static trial chunks; results in chunk order."""
    spans = _chunks(n_trials)
    if workers <= 1 or len(spans) == 1:
        return [fn(*args, s, e) for s, e in spans]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(fn, *args, s, e) for s, e in spans]
        return [f.result() for f in futures]


def evaluate(cfg: ExperimentConfig, book: PilotBook | None = None, epsilon: float | None = None,
             workers: int = 1, stream: int = EVAL_STREAM) -> Aggregate:
    """Main Monte-Carlo run of ``cfg.num_trials`` trials."""
    book = experiment_pilot_book(cfg) if book is None else book
    parts = _map(_eval_chunk, (cfg, book, epsilon, stream), cfg.num_trials, workers)
    agg = Aggregate()
    for values, counts in parts:
        agg = agg.merge(Aggregate(values, counts))
    return agg


def default_epsilon_grid(cfg: ExperimentConfig, points: int = 40) -> tuple[float, ...]:
    """Geometric grid from below the noise-only correlation level to above a
    single user's expected correlation.

    With unit-norm pilots and unit-variance noise a noise-only correlation
    has squared norm ~ Gamma(M, 1); a lone user contributes about
    T_p * Gamma * M / C.
    """
    M = cfg.num_antennas
    lo = 0.25 * math.sqrt(M)
    hi = 2.0 * math.sqrt(M * (1.0 + cfg.pilot_length * cfg.snr_linear / cfg.num_copies))
    return tuple(float(x) for x in np.geomspace(lo, max(hi, 2 * lo), points))


@dataclass
class Calibration:
    best_epsilon: float
    grid: tuple[float, ...]
    means: np.ndarray
    stderrs: np.ndarray
    trials: int

    def table(self) -> list[dict]:
        return [{"epsilon": e, "mean_inaccuracy": float(m), "stderr": float(s)}
                for e, m, s in zip(self.grid, self.means, self.stderrs)]


def calibrate_epsilon(cfg: ExperimentConfig, book: PilotBook | None = None,
                      grid: Sequence[float] | None = None, trials_per_point: int | None = None,
                      workers: int = 1) -> Calibration:
    """Pick the grid threshold with the lowest mean inaccuracy.

    All grid points see the same calibration trials, drawn from a stream
    disjoint from evaluation.
    """
    book = experiment_pilot_book(cfg) if book is None else book
    grid = tuple(sorted(float(e) for e in (grid or default_epsilon_grid(cfg))))
    n = trials_per_point or cfg.calibration_trials
    cfg = validate(cfg)
    from dataclasses import replace
    cal_cfg = replace(cfg, stopping=Stopping.RESIDUAL, epsilon=None)
    parts = _map(_grid_chunk, (cal_cfg, book, grid, CALIBRATION_STREAM), n, workers)
    values = np.concatenate([p[0] for p in parts], axis=1)
    aggs = [Aggregate(v) for v in values]
    means = np.array([a.mean for a in aggs])
    stderrs = np.array([a.stderr for a in aggs])
    return Calibration(grid[_pick(means)], grid, means, stderrs, n)


def _pick(means: np.ndarray) -> int:
    """Index of the minimum mean; exact ties resolve to the upper median of the tied points.

    Exact ties mostly arise on error-free plateaus, whose edges sit next to
    the first misses or false positives; the plateau centre generalizes to
    fresh trials, while either edge overfits the calibration draws.
    """
    tied = np.flatnonzero(means == means.min())
    return int(tied[len(tied) // 2])


@dataclass
class SweepRecord:
    index: int
    config: ExperimentConfig
    epsilon: float | None
    aggregate: Aggregate
    wall_time: float = 0.0
    calibration: Calibration | None = None
    varied: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return self.aggregate.mean

    @property
    def stderr(self) -> float:
        return self.aggregate.stderr

    @property
    def trials(self) -> int:
        return self.aggregate.count


def run_experiment(cfg: ExperimentConfig, grid: Sequence[float] | None = None,
                   workers: int = 1, index: int = 0) -> SweepRecord:
    """Calibrate if needed, then run the main Monte-Carlo for one config."""
    cfg = validate(cfg)
    t0 = time.perf_counter()
    book = experiment_pilot_book(cfg)
    cal = None
    eps = cfg.epsilon
    if cfg.stopping is Stopping.RESIDUAL and eps is None:
        cal = calibrate_epsilon(cfg, book, grid, workers=workers)
        eps = cal.best_epsilon
    agg = evaluate(cfg, book, eps, workers)
    return SweepRecord(index, cfg, eps, agg, time.perf_counter() - t0, cal)


RESULT_COLUMNS = ("cell", *CONFIG_FIELDS, "epsilon_used", "mean_inaccuracy", "stderr",
                  "trials", "true_pos", "false_pos", "true_neg", "false_neg")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def record_row(rec: SweepRecord) -> list[str]:
    cfg = rec.config.as_dict()
    tot = rec.aggregate.confusion_totals()
    return [_fmt(rec.index), *(_fmt(cfg[k]) for k in CONFIG_FIELDS), _fmt(rec.epsilon),
            _fmt(rec.mean), _fmt(rec.stderr), _fmt(rec.trials),
            *(_fmt(tot[k]) for k in ("true_pos", "false_pos", "true_neg", "false_neg"))]


def read_results(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def run_sweep(spec: SweepSpec, out_dir: str | Path | None = None, workers: int = 1,
              name: str = "sweep") -> list[SweepRecord]:
    """Run every cell of a sweep in expansion order.

    With ``out_dir`` the CSV is written row by row (so a failure leaves the
    completed rows valid) and ``<name>.manifest.json`` records the resolved
    spec, version, seeds, calibration tables and timings.
    """
    configs = expand(spec)
    varied_names = [n for a in spec.axes for n in a.names]
    records: list[SweepRecord] = []
    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / f"{name}.csv", "w", encoding="utf-8", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
    try:
        for i, cfg in enumerate(configs):
            try:
                rec = run_experiment(cfg, spec.epsilon_grid, workers, index=i)
            except Exception as exc:
                raise RuntimeError(f"sweep cell {i} failed: {exc}") from exc
            rec.varied = {k: getattr(cfg, k) for k in varied_names}
            log.info("cell %d %s eps=%s mean=%.4g se=%.2g (%.1fs)", i, rec.varied,
                     rec.epsilon, rec.mean, rec.stderr, rec.wall_time)
            records.append(rec)
            if writer is not None:
                writer.writerow(record_row(rec))
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        write_manifest(out_dir / f"{name}.manifest.json", spec, records, workers,
                       {"sparsity": [sparsity_summary(r) for r in records]})
    return records


def sparsity_summary(rec: SweepRecord) -> dict:
    """Observed mean active users per channel next to the expected p*Q*C."""
    cfg = rec.config
    tot = rec.aggregate.confusion_totals()
    active = tot["true_pos"] + tot["false_neg"]
    observed = active * cfg.num_copies / (cfg.num_channels * max(rec.trials, 1))
    return {"cell": rec.index,
            "expected": cfg.activation_prob * cfg.users_per_channel_base * cfg.num_copies,
            "observed": observed}


def write_manifest(path: Path, spec: SweepSpec, records: list[SweepRecord], workers: int,
                   diagnostics: dict | None = None) -> None:
    doc = {
        "tool": "audsim",
        "version": __version__,
        "master_seed": spec.base.master_seed,
        "workers": workers,
        "omp_backend": "numba" if omp_kernel.AVAILABLE and omp_module.USE_JIT else "numpy",
        "spec": spec_to_dict(spec),
        "cells": [
            {"cell": r.index, "varied": {k: _jsonable(v) for k, v in r.varied.items()},
             "config": r.config.as_dict(), "epsilon_used": r.epsilon,
             "epsilon_grid": list(r.calibration.grid) if r.calibration else None,
             "calibration": r.calibration.table() if r.calibration else None,
             "wall_time_s": r.wall_time}
            for r in records
        ],
    }
    if diagnostics is not None:
        doc["diagnostics"] = diagnostics
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _jsonable(v):
    return v.value if hasattr(v, "value") else v


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
