"""Adaptive memory allocation: prototype pool, retrieval, gated fusion.

The pool keeps two prototype sets (visual and textual) in the projected
feature spaces.  Prototypes are written only through the temporal
interpolation rule ``P <- lam * P + (1 - lam) * h``; they never receive
gradients.  Retrieval, gating and fusion accept tape nodes for the hidden
state and weights, while prototypes are always plain constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .errors import (
    DimensionMismatch,
    EmptyPool,
    IndexOutOfRange,
    KTooLarge,
    LambdaOutOfRange,
    ParseError,
    ZeroVector,
)

MODALITIES = ("visual", "textual")
STRATEGIES = ("max_similarity", "random")
POOL_FORMAT_VERSION = 1


def init_ama_params(rng: np.random.Generator, d: int) -> dict[str, np.ndarray]:
    return {
        "ama_wv": la.uniform_init(rng, (d, d), d),
        "ama_wq": la.uniform_init(rng, (d, d), d),
        "ama_wg": la.uniform_init(rng, (2, 3 * d), 3 * d),
        "ama_walpha": la.uniform_init(rng, (d, d), d),
        "ama_wbeta": la.uniform_init(rng, (d, d), d),
    }


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRange(f"lambda must lie in [0, 1], got {lam}")


def _norm(x: np.ndarray) -> float:
    return float(np.sqrt(x @ x))


@dataclass
class MemoryPool:
    """Capacity-bounded visual and textual prototype sets.

    ``steps`` records, per prototype, the value of ``clock`` at its last write;
    eviction removes the prototype with the smallest step.
    """

    capacity: int
    lam: float = 0.9
    prototypes: dict[str, list[np.ndarray]] = field(default_factory=lambda: {m: [] for m in MODALITIES})
    steps: dict[str, list[int]] = field(default_factory=lambda: {m: [] for m in MODALITIES})
    clock: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("pool capacity must be at least 1")
        _check_lambda(self.lam)

    def size(self, modality: str) -> int:
        return len(self.prototypes[modality])

    def matrix(self, modality: str) -> np.ndarray:
        protos = self.prototypes[modality]
        if not protos:
            return np.zeros((0, 0))
        return np.stack(protos)

    def is_empty(self) -> bool:
        return any(not self.prototypes[m] for m in MODALITIES)

    def copy(self) -> "MemoryPool":
        return MemoryPool(
            capacity=self.capacity,
            lam=self.lam,
            prototypes={m: [p.copy() for p in self.prototypes[m]] for m in MODALITIES},
            steps={m: list(self.steps[m]) for m in MODALITIES},
            clock=self.clock,
        )

    def to_dict(self) -> dict:
        return {
            "version": POOL_FORMAT_VERSION,
            "capacity": self.capacity,
            "lam": self.lam,
            "clock": self.clock,
            **{
                m: [
                    {"vector": [float(x) for x in p], "step": s}
                    for p, s in zip(self.prototypes[m], self.steps[m])
                ]
                for m in MODALITIES
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MemoryPool":
        if data.get("version") != POOL_FORMAT_VERSION:
            raise ParseError(f"unsupported pool format version {data.get('version')!r}")
        try:
            pool = cls(capacity=int(data["capacity"]), lam=float(data["lam"]), clock=int(data["clock"]))
            for m in MODALITIES:
                for entry in data[m]:
                    pool.prototypes[m].append(np.array(entry["vector"], dtype=np.float64))
                    pool.steps[m].append(int(entry["step"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed pool record: {exc}") from exc
        return pool

    def to_json(self) -> str:
        # json emits floats via repr(), the shortest decimal that round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MemoryPool":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from exc
        return cls.from_dict(data)


@dataclass
class RetrievalResult:
    visual_indices: np.ndarray
    visual_scores: np.ndarray
    textual_indices: np.ndarray
    textual_scores: np.ndarray
    visual_selected: np.ndarray  # k x d, rows in score order
    textual_selected: np.ndarray
    v_p: np.ndarray
    q_p: np.ndarray

    @property
    def k(self) -> int:
        return len(self.visual_indices)


@dataclass
class GateState:
    g_v: object
    g_q: object
    g: object = None


def project(h, w_v, w_q):
    """Modality-specific views h_v = W_v h and h_q = W_q h."""
    hv = la.value_of(h)
    if hv.ndim != 1:
        raise DimensionMismatch("hidden state must be a vector")
    return la.matmul(w_v, h), la.matmul(w_q, h)


def similarities(h: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``h`` against every row of ``protos``."""
    nh = _norm(h)
    if nh < la.NORM_EPS:
        raise ZeroVector("query feature has zero norm")
    norms = np.sqrt(np.einsum("ij,ij->i", protos, protos))
    return (protos @ h) / (norms * nh)


def _select(h, protos, k, strategy, rng):
    sims = similarities(h, protos)
    if strategy == "max_similarity":
        order = np.argsort(-sims, kind="stable")[:k]
    elif strategy == "random":
        if rng is None:
            raise ValueError("random retrieval needs an rng")
        chosen = np.sort(rng.choice(len(protos), size=k, replace=False))
        order = chosen[np.argsort(-sims[chosen], kind="stable")]
    else:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return order, sims[order]


def retrieve_top_k(h_v, h_q, pool: MemoryPool, k: int, strategy: str = "max_similarity",
                   rng: np.random.Generator | None = None) -> RetrievalResult:
    """Pick k prototypes per modality and average them into V_p and Q_p."""
    if k < 1:
        raise KTooLarge("k must be at least 1")
    if pool.is_empty():
        raise EmptyPool("both prototype sets must be non-empty")
    hv, hq = la.value_of(h_v), la.value_of(h_q)
    for name, h in (("visual", hv), ("textual", hq)):
        if k > pool.size(name):
            raise KTooLarge(f"k={k} exceeds {name} pool size {pool.size(name)}")
        if _norm(h) < la.NORM_EPS:
            raise ZeroVector(f"{name} query feature has zero norm")
    vis = pool.matrix("visual")
    txt = pool.matrix("textual")
    if vis.shape[1] != hv.shape[0] or txt.shape[1] != hq.shape[0]:
        raise DimensionMismatch("prototype width differs from the projected feature width")
    vi, vs = _select(hv, vis, k, strategy, rng)
    ti, ts = _select(hq, txt, k, strategy, rng)
    vsel, tsel = vis[vi], txt[ti]
    return RetrievalResult(vi, vs, ti, ts, vsel, tsel, vsel.mean(axis=0), tsel.mean(axis=0))


def gate(h, q_p, v_p, w_g) -> GateState:
    """g = sigmoid(W_g [h; q_p; v_p]); g_v = g[0], g_q = g[1]."""
    width = sum(la.value_of(x).shape[0] for x in (h, q_p, v_p))
    wg = la.value_of(w_g)
    if wg.shape != (2, width):
        raise DimensionMismatch(f"W_g must be 2 x {width}, got {wg.shape}")
    g = la.sigmoid(la.matmul(w_g, la.concat([h, q_p, v_p])))
    return GateState(g_v=la.take(g, 0), g_q=la.take(g, 1), g=g)


def fixed_gate(alpha: float, beta: float) -> GateState:
    """Gate pinned to constant portions, used by the sensitivity sweep."""
    return GateState(g_v=np.asarray(float(alpha)), g_q=np.asarray(float(beta)))


def fusion_weights(q_p, v_p, state: GateState, w_alpha, w_beta):
    """alpha = g_v softmax(W_alpha v_p), beta = g_q softmax(W_beta q_p)."""
    alpha = la.mul(state.g_v, la.softmax(la.matmul(w_alpha, v_p)))
    beta = la.mul(state.g_q, la.softmax(la.matmul(w_beta, q_p)))
    return alpha, beta


def fuse(h, q_p, v_p, state: GateState, w_alpha, w_beta):
    """H' = H + alpha * Q_p + beta * V_p (elementwise)."""
    dims = {la.value_of(x).shape for x in (h, q_p, v_p)}
    if len(dims) != 1:
        raise DimensionMismatch(f"h, q_p and v_p must share one dimension, got {dims}")
    alpha, beta = fusion_weights(q_p, v_p, state, w_alpha, w_beta)
    return la.add(h, la.add(la.mul(alpha, q_p), la.mul(beta, v_p)))


def memory_update(pool: MemoryPool, h, lam: float, modality: str, index: int) -> MemoryPool:
    """P <- lam * P + (1 - lam) * h for one prototype, refreshing its step."""
    _check_lambda(lam)
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    protos = pool.prototypes[modality]
    if not 0 <= index < len(protos):
        raise IndexOutOfRange(f"{modality} prototype {index} does not exist ({len(protos)} stored)")
    h = np.asarray(la.value_of(h), dtype=np.float64)
    updated = lam * protos[index] + (1.0 - lam) * h
    if _norm(updated) <= la.NORM_EPS:
        raise ZeroVector("interpolated prototype collapsed to zero")
    protos[index] = updated
    pool.steps[modality][index] = pool.clock
    return pool


def _admit_one(pool: MemoryPool, modality: str, h: np.ndarray, lam: float, threshold: float) -> None:
    protos = pool.prototypes[modality]
    if protos:
        sims = similarities(h, np.stack(protos))
        best = int(np.argmax(sims))  # argmax returns the lowest index among ties
        if sims[best] >= threshold:
            memory_update(pool, h, lam, modality, best)
            return
    protos.append(h.copy())
    pool.steps[modality].append(pool.clock)
    if len(protos) > pool.capacity:
        oldest = int(np.argmin(pool.steps[modality]))
        del protos[oldest]
        del pool.steps[modality][oldest]


def admit_or_update(pool: MemoryPool, h_v, h_q, lam: float | None = None,
                    sim_threshold: float = 0.7) -> MemoryPool:
    """Merge a (visual, textual) feature pair into the pool.

    Per modality: interpolate into the most similar prototype when its cosine
    similarity reaches ``sim_threshold``, otherwise store the feature as a new
    prototype and evict the least recently written one if over capacity.
    """
    lam = pool.lam if lam is None else lam
    _check_lambda(lam)
    feats = {
        "visual": np.array(la.value_of(h_v), dtype=np.float64),
        "textual": np.array(la.value_of(h_q), dtype=np.float64),
    }
    for m, h in feats.items():
        if _norm(h) < la.NORM_EPS:
            raise ZeroVector(f"{m} feature has zero norm")
    pool.clock += 1
    for m, h in feats.items():
        _admit_one(pool, m, h, lam, sim_threshold)
    return pool


def ama_loss(retrieval: RetrievalResult, state: GateState, h, h_fused, theta2: float, theta3: float,
             h_v=None, h_q=None):
    """-sum sim(h_v, V_pm) - sum sim(h_q, Q_pn) + theta2 (g_q + g_v - 1)^2 + theta3 ||H' - H||^2.

    When ``h_v``/``h_q`` are given the similarity terms are recomputed from
    them (and so carry gradients into the projections); otherwise the scores
    stored in ``retrieval`` are used as constants.
    """
    if h_v is None:
        sim_v = float(np.sum(retrieval.visual_scores))
    else:
        sim_v = 0.0
        for proto in retrieval.visual_selected:
            sim_v = la.add(sim_v, la.cosine_sim(h_v, proto))
    if h_q is None:
        sim_q = float(np.sum(retrieval.textual_scores))
    else:
        sim_q = 0.0
        for proto in retrieval.textual_selected:
            sim_q = la.add(sim_q, la.cosine_sim(h_q, proto))
    balance = la.square(la.sub(la.add(state.g_q, state.g_v), 1.0))
    drift = la.total(la.square(la.sub(h_fused, h)))
    loss = la.add(la.mul(balance, theta2), la.mul(drift, theta3))
    return la.sub(la.sub(loss, sim_v), sim_q)
