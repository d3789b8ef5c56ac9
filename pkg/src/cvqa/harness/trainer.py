"""Continual training, evaluation and experiment reports."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import ama
from .. import linalg as la
from ..config import ExperimentConfig
from ..datagen import TASK_NAMES, Sample, TaskSpec, TaskStream
from ..errors import CvqaError, EmptyTestSet, TrainingAborted
from ..io import atomic_write_json, atomic_write_text
from .buffer import RehearsalBuffer
from .metrics import AccuracyMatrix, compute_ap, compute_af
from .model import Dims, ModelState, forward, predict
from .optim import warmup_factor

log = logging.getLogger(__name__)

PARADIGMS = ("standard", "novel")
CSV_COLUMNS = ("config_hash", "seed", "paradigm", "task", "ap", "af", *TASK_NAMES)


def dims_of(stream: TaskStream) -> Dims:
    return Dims(stream.d, stream.n, stream.L, stream.T, stream.vocab)


def train_step(state: ModelState, sample: Sample, cfg: ExperimentConfig, lr_scale: float) -> float:
    """One optimiser step on one sample, then the memory-pool write."""
    tape = la.Tape()
    nodes = tape.watch_all(state.params)
    try:
        res = forward(nodes, state.pool, sample, cfg.model, cfg.ablation, training=True, rng=state.rng)
        loss = float(la.value_of(res.total))
        if not math.isfinite(loss):
            raise TrainingAborted("loss is not finite", state.step)
        grads = tape.backward(res.total)
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise TrainingAborted(f"non-finite gradient for {name}", state.step)
        state.optimizer.step(state.params, grads, lr_scale)
        if cfg.ablation.enable_ama:
            ama.admit_or_update(state.pool, la.value_of(res.h_v), la.value_of(res.h_q),
                                cfg.model.lam, cfg.model.sim_threshold)
    except TrainingAborted:
        raise
    except CvqaError as exc:
        raise TrainingAborted(str(exc), state.step) from exc
    state.step += 1
    state.loss_trace.append(loss)
    return loss


def train_task(state: ModelState, task: TaskSpec, buffer: RehearsalBuffer, cfg: ExperimentConfig) -> ModelState:
    """Epochs over the task's training set, each step followed by one replay step.

    Replay draws come from the buffer before the current sample is offered to
    it; samples enter the buffer (by reservoir sampling) during the first epoch
    only.
    """
    n = len(task.train)
    epochs = cfg.train.epochs
    warmup = math.ceil(cfg.train.warmup_ratio * epochs * n)
    counter = 0
    for epoch in range(epochs):
        for idx in state.rng.permutation(n):
            sample = task.train[int(idx)]
            scale = warmup_factor(counter, warmup)
            train_step(state, sample, cfg, scale)
            for replay in buffer.sample(state.rng, 1):
                train_step(state, replay, cfg, scale)
            if epoch == 0:
                buffer.add(sample, state.rng)
            counter += 1
    return state


def evaluate(state: ModelState, samples: Sequence[Sample], cfg: ExperimentConfig,
             rng: np.random.Generator | None = None) -> float:
    """Fraction of samples decoded exactly at every non-pad answer step."""
    if not samples:
        raise EmptyTestSet("cannot evaluate on an empty test set")
    hits = 0
    for s in samples:
        pred = predict(state.params, state.pool, s, cfg.model, cfg.ablation, rng)
        hits += all(p == t for p, t in zip(pred, s.answer) if t != 0)
    return hits / len(samples)


@dataclass
class SeedResult:
    seed: int
    matrices: dict[str, AccuracyMatrix | None]
    loss_trace: list[float]

    def metrics(self, paradigm: str) -> tuple[float | None, float | None]:
        m = self.matrices[paradigm]
        if m is None:
            return None, None
        ap = compute_ap(m)
        af = compute_af(m) if m.num_tasks >= 2 else None
        return ap, af


def run_seed(cfg: ExperimentConfig, stream: TaskStream, seed: int) -> SeedResult:
    """Sequential training over every task with evaluation after each one."""
    state = ModelState.create(dims_of(stream), cfg.model, cfg.train, seed)
    buffer = RehearsalBuffer(cfg.ablation.buffer_capacity)
    T = len(stream.tasks)
    has_novel = all(t.novel for t in stream.tasks)
    matrices: dict[str, AccuracyMatrix | None] = {
        "standard": AccuracyMatrix(T),
        "novel": AccuracyMatrix(T) if has_novel else None,
    }
    for l, task in enumerate(stream.tasks):
        train_task(state, task, buffer, cfg)
        for j in range(l + 1):
            for p_idx, paradigm in enumerate(PARADIGMS):
                m = matrices[paradigm]
                if m is None:
                    continue
                split = stream.tasks[j].test if paradigm == "standard" else stream.tasks[j].novel
                eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 2, l, j, p_idx]))
                m.set(l, j, evaluate(state, split, cfg, eval_rng))
        log.info("seed %d: finished task %d/%d", seed, l + 1, T)
    return SeedResult(seed, matrices, state.loss_trace)


def _run_seed_job(args):
    cfg, stream, seed = args
    return run_seed(cfg, stream, seed)


def run_seeds(cfg: ExperimentConfig, stream: TaskStream, seeds: Sequence[int], jobs: int = 1) -> list[SeedResult]:
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_seed_job, [(cfg, stream, s) for s in seeds]))
    return [run_seed(cfg, stream, s) for s in seeds]


def _stats(values: list[float | None]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return float(np.mean(vals)), std


def build_report(cfg: ExperimentConfig, results: Sequence[SeedResult]) -> dict:
    per_seed = []
    aggregate = {}
    for r in results:
        entry = {"seed": r.seed}
        for paradigm in PARADIGMS:
            m = r.matrices[paradigm]
            entry[f"accuracy_matrix_{paradigm}"] = m.rows() if m is not None else None
        entry["ap"] = {p: r.metrics(p)[0] for p in PARADIGMS}
        entry["af"] = {p: r.metrics(p)[1] for p in PARADIGMS}
        per_seed.append(entry)
    for paradigm in PARADIGMS:
        ap_mean, ap_std = _stats([r.metrics(paradigm)[0] for r in results])
        af_mean, af_std = _stats([r.metrics(paradigm)[1] for r in results])
        aggregate[paradigm] = {"ap_mean": ap_mean, "ap_std": ap_std, "af_mean": af_mean, "af_std": af_std}
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "per_seed": per_seed,
        "aggregate": aggregate,
    }


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def report_rows(report: dict) -> list[dict[str, str]]:
    """One row per seed and paradigm; ``task`` is the number of tasks trained."""
    rows = []
    for entry in report["per_seed"]:
        for paradigm in PARADIGMS:
            matrix = entry[f"accuracy_matrix_{paradigm}"]
            if matrix is None:
                continue
            final = matrix[-1]
            row = {
                "config_hash": report["config_hash"],
                "seed": str(entry["seed"]),
                "paradigm": paradigm,
                "task": str(len(matrix)),
                "ap": _fmt(entry["ap"][paradigm]),
                "af": _fmt(entry["af"][paradigm]),
            }
            for j, name in enumerate(TASK_NAMES):
                row[name] = _fmt(final[j]) if j < len(final) else ""
            rows.append(row)
    return rows


def rows_to_csv(rows: Sequence[dict[str, str]], extra_columns: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=[*extra_columns, *CSV_COLUMNS], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_report(report: dict, out_dir: str | Path, stem: str = "report", fmt: str = "both") -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    if fmt in ("json", "both"):
        path = out_dir / f"{stem}.json"
        atomic_write_json(path, report)
        written.append(path)
    if fmt in ("csv", "both"):
        path = out_dir / f"{stem}.csv"
        atomic_write_text(path, rows_to_csv(report_rows(report)))
        written.append(path)
    return written


def run_experiment(cfg: ExperimentConfig, stream: TaskStream, seeds: Sequence[int] | None = None,
                   jobs: int = 1, out_dir: str | Path | None = None, stem: str = "report") -> dict:
    """Train every seed over the stream and aggregate AP/AF; optionally write files."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    results = run_seeds(cfg, stream, seeds, jobs)
    report = build_report(cfg, results)
    if out_dir is not None:
        write_report(report, out_dir, stem, cfg.output.format)
    return report
