"""Continual training harness."""

from .buffer import RehearsalBuffer
from .metrics import AccuracyMatrix, compute_af, compute_ap
from .model import Dims, ModelState, forward, predict
from .trainer import evaluate, run_experiment, run_seed, train_task

__all__ = [
    "AccuracyMatrix", "Dims", "ModelState", "RehearsalBuffer", "compute_af", "compute_ap",
    "evaluate", "forward", "predict", "run_experiment", "run_seed", "train_task",
]
