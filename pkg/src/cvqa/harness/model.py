"""Model parameters, the per-sample forward pass and the training state."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .. import ama, decoder, gonf
from .. import linalg as la
from ..config import AblationConfig, ModelConfig, TrainConfig
from ..datagen import Sample
from ..errors import ParseError
from .optim import Adam

CHECKPOINT_VERSION = 1

PARAM_GROUPS = {
    "gonf": ("scorer_w", "scorer_b", "dae_enc_w", "dae_enc_b", "dae_dec_w", "dae_dec_b"),
    "encoder": ("enc_wq", "enc_wk", "enc_wv"),
    "ama": ("ama_wv", "ama_wq", "ama_wg", "ama_walpha", "ama_wbeta"),
    "decoder": ("dec_wv", "dec_wq", "tok_emb", "pos_emb", "att_wq", "att_wk", "att_wv", "out_w", "out_b"),
}


@dataclass(frozen=True)
class Dims:
    d: int
    n: int
    L: int
    T: int
    vocab: int


def init_params(dims: Dims, mcfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    params.update(gonf.init_gonf_params(rng, dims.d, mcfg.dae_hidden))
    params.update(gonf.init_encoder_params(rng, dims.d))
    params.update(ama.init_ama_params(rng, dims.d))
    params.update(decoder.init_decoder_params(rng, dims.d, mcfg.d_e, mcfg.d_att, dims.vocab, dims.T))
    return params


def effective_phi(mcfg: ModelConfig, ablation: AblationConfig) -> tuple[float, float, float]:
    """Loss weights with disabled modules zeroed and the rest renormalised."""
    mask = (ablation.enable_gonf, ablation.enable_ama, True)
    kept = [p if on else 0.0 for p, on in zip(mcfg.phi, mask)]
    s = sum(kept)
    if s <= 0:
        return (0.0, 0.0, 1.0)
    return tuple(p / s for p in kept)


@dataclass
class ForwardResult:
    total: object
    gonf_loss: object
    ama_loss: object
    dec_loss: object
    hidden: object
    fused: object
    embedding: object
    h_v: object = None
    h_q: object = None
    retrieval: ama.RetrievalResult | None = None
    weights: object = None


def forward(params, pool: ama.MemoryPool, sample: Sample, mcfg: ModelConfig, ablation: AblationConfig,
            *, training: bool, rng: np.random.Generator | None = None,
            retrieval: ama.RetrievalResult | None = None, noise: np.ndarray | None = None,
            with_loss: bool = True) -> ForwardResult:
    """One sample through filtering, encoding, memory fusion and decoding.

    ``retrieval`` pins the prototype selection (used by gradient checks, where
    a discrete re-selection under perturbation would break differentiability).
    """
    l_gonf = 0.0
    weights = None
    if ablation.enable_gonf:
        out = gonf.gonf_forward(sample.regions, params, training=training, rng=rng,
                                noise_std=mcfg.dae_noise, noise=noise)
        enhanced, weights = out.enhanced, out.weights
        if with_loss:
            l_gonf = gonf.gonf_loss(sample.regions, out.denoised, out.weights, mcfg.theta1, mcfg.entropy_sign)
    else:
        enhanced = sample.regions
    h = gonf.encode_multimodal(enhanced, sample.query, params)

    fused, l_ama, h_v, h_q = h, 0.0, None, None
    if ablation.enable_ama:
        h_v, h_q = ama.project(h, params["ama_wv"], params["ama_wq"])
        if retrieval is None and not pool.is_empty():
            k = min(mcfg.k, pool.size("visual"), pool.size("textual"))
            retrieval = ama.retrieve_top_k(la.value_of(h_v), la.value_of(h_q), pool, k,
                                           ablation.strategy, rng)
        if retrieval is not None:
            if ablation.alpha_beta is not None:
                state = ama.fixed_gate(*ablation.alpha_beta)
            else:
                state = ama.gate(h, retrieval.q_p, retrieval.v_p, params["ama_wg"])
            fused = ama.fuse(h, retrieval.q_p, retrieval.v_p, state, params["ama_walpha"], params["ama_wbeta"])
            if with_loss:
                l_ama = ama.ama_loss(retrieval, state, h, fused, mcfg.theta2, mcfg.theta3, h_v, h_q)
    else:
        retrieval = None

    e = decoder.project_and_concat(fused, params)
    l_dec = decoder.decode_loss(e, sample.answer, params) if with_loss else 0.0
    total = decoder.total_loss(l_gonf, l_ama, l_dec, effective_phi(mcfg, ablation)) if with_loss else 0.0
    return ForwardResult(total, l_gonf, l_ama, l_dec, h, fused, e, h_v, h_q, retrieval, weights)


def predict(params, pool, sample: Sample, mcfg: ModelConfig, ablation: AblationConfig,
            rng: np.random.Generator | None = None) -> list[int]:
    res = forward(params, pool, sample, mcfg, ablation, training=False, rng=rng, with_loss=False)
    return decoder.greedy_decode(res.embedding, params)


@dataclass
class ModelState:
    dims: Dims
    params: dict[str, np.ndarray]
    pool: ama.MemoryPool
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    loss_trace: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, dims: Dims, mcfg: ModelConfig, tcfg: TrainConfig, seed: int) -> "ModelState":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        params = init_params(dims, mcfg, rng)
        pool = ama.MemoryPool(capacity=mcfg.pool_capacity, lam=mcfg.lam)
        opt = Adam(tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps, tcfg.clip_norm)
        return cls(dims, params, pool, opt, rng)

    def to_json(self) -> str:
        payload = {
            "version": CHECKPOINT_VERSION,
            "dims": [self.dims.d, self.dims.n, self.dims.L, self.dims.T, self.dims.vocab],
            "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in self.params.items()},
            "pool": self.pool.to_dict(),
            "optimizer": {"lr": self.optimizer.lr, "beta1": self.optimizer.beta1, "beta2": self.optimizer.beta2,
                          "eps": self.optimizer.eps, "clip_norm": self.optimizer.clip_norm,
                          **self.optimizer.state_dict()},
            "rng": self.rng.bit_generator.state,
            "step": self.step,
            "loss_trace": self.loss_trace,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelState":
        try:
            data = json.loads(text)
            if data.get("version") != CHECKPOINT_VERSION:
                raise ParseError(f"unsupported checkpoint version {data.get('version')!r}")
            params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                      for k, v in data["params"].items()}
            o = data["optimizer"]
            opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"], o["clip_norm"])
            opt.load_state_dict(o)
            rng = np.random.default_rng()
            rng.bit_generator.state = data["rng"]
            return cls(Dims(*data["dims"]), params, ama.MemoryPool.from_dict(data["pool"]), opt, rng,
                       int(data["step"]), [float(x) for x in data["loss_trace"]])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed checkpoint: {exc}") from exc
