"""Analytic-versus-central-difference gradient checks for every loss."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ama
from . import linalg as la
from .config import AblationConfig, ModelConfig
from .datagen import Sample
from .harness.model import PARAM_GROUPS, Dims, forward, init_params

LOSSES = ("gonf", "ama", "decoder", "total")
ABS_TOL = 1e-4
REL_TOL = 1e-3
FD_STEP = 1e-5


@dataclass
class GroupResult:
    loss: str
    group: str
    max_abs: float
    max_rel: float
    ok: bool


def check_gradients(
    loss_fn: Callable[[Mapping], Sequence],
    params: Mapping[str, np.ndarray],
    loss_names: Sequence[str],
    groups: Mapping[str, Sequence[str]],
    corrupt: str | None = None,
) -> list[GroupResult]:
    """Compare tape gradients of each output of ``loss_fn`` against central differences.

    ``loss_fn`` receives a mapping of parameter name to array or tape node and
    returns one scalar per entry of ``loss_names``.  ``corrupt`` names a group
    whose analytic gradient is deliberately perturbed (fault injection).
    """
    if not params:
        return []
    tape = la.Tape()
    nodes = tape.watch_all(params)
    outputs = loss_fn(nodes)
    numeric = la.central_differences(
        lambda p: np.array([float(la.value_of(x)) for x in loss_fn(p)]), params, eps=FD_STEP
    )
    results = []
    for i, loss_name in enumerate(loss_names):
        out = outputs[i]
        if isinstance(out, la.Node):
            analytic = tape.backward(out)
        else:
            analytic = {k: np.zeros_like(v) for k, v in params.items()}
        for group, names in groups.items():
            names = [n for n in names if n in params]
            if not names:
                continue
            a = np.concatenate([analytic[n].ravel() for n in names])
            f = np.concatenate([numeric[n][i].ravel() for n in names])
            if corrupt == group:
                a = a + 1e-2
            max_abs, max_rel = la.gradient_deviation(a, f)
            results.append(GroupResult(loss_name, group, max_abs, max_rel,
                                       la.gradients_agree(a, f, ABS_TOL, REL_TOL)))
    return results


def random_instance(seed: int, d: int = 8, n: int = 4, L: int = 3, T: int = 2, vocab: int = 5, k: int = 2,
                    pool_size: int = 6, base: ModelConfig | None = None):
    """Parameters, a filled prototype pool and one sample, all drawn from ``seed``.

    ``base`` supplies loss weights and coefficients; widths are shrunk to ``d``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    if base is None:
        base = ModelConfig(theta2=0.5, theta3=0.5)
    mcfg = dataclasses.replace(base, d_e=d, d_att=d, dae_hidden=None, k=k, pool_capacity=2 * pool_size)
    dims = Dims(d, n, L, T, vocab)
    params = init_params(dims, mcfg, rng)
    for name in params:  # move off the zero-initialised biases
        params[name] = params[name] + rng.normal(0.0, 0.1, size=params[name].shape)
    pool = ama.MemoryPool(capacity=mcfg.pool_capacity, lam=mcfg.lam)
    for _ in range(pool_size):
        ama.admit_or_update(pool, rng.normal(size=d), rng.normal(size=d), mcfg.lam, 0.999)
    answer = tuple(int(x) for x in rng.integers(1, vocab, size=T))
    sample = Sample(rng.normal(size=(n, d)), rng.normal(size=(L, d)), answer, 0, (0, 0))
    noise = rng.normal(0.0, mcfg.dae_noise, size=(n, d))
    return params, pool, sample, noise, mcfg


def model_loss_fn(pool, sample, noise, mcfg: ModelConfig, ablation: AblationConfig | None = None):
    """Loss function over the full pipeline with retrieval pinned at the base point."""
    ablation = ablation or AblationConfig()
    pinned: dict[str, ama.RetrievalResult | None] = {}

    def fn(p):
        if "r" not in pinned:
            values = {k: la.value_of(v) for k, v in p.items()}
            res = forward(values, pool, sample, mcfg, ablation, training=True, noise=noise, with_loss=False)
            pinned["r"] = res.retrieval
        res = forward(p, pool, sample, mcfg, ablation, training=True, noise=noise, retrieval=pinned["r"])
        return [res.gonf_loss, res.ama_loss, res.dec_loss, res.total]

    return fn


def check_seed(seed: int, corrupt: str | None = None, base: ModelConfig | None = None,
               **dims) -> list[GroupResult]:
    params, pool, sample, noise, mcfg = random_instance(seed, base=base, **dims)
    fn = model_loss_fn(pool, sample, noise, mcfg)
    return check_gradients(fn, params, LOSSES, PARAM_GROUPS, corrupt=corrupt)


def summarize(results: Sequence[GroupResult]) -> list[GroupResult]:
    """Worst case per (loss, group) over many instances."""
    merged: dict[tuple[str, str], GroupResult] = {}
    for r in results:
        key = (r.loss, r.group)
        prev = merged.get(key)
        if prev is None:
            merged[key] = GroupResult(r.loss, r.group, r.max_abs, r.max_rel, r.ok)
        else:
            prev.max_abs = max(prev.max_abs, r.max_abs)
            prev.max_rel = max(prev.max_rel, r.max_rel)
            prev.ok = prev.ok and r.ok
    return list(merged.values())
