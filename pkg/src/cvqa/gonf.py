"""Global noise filtering over region features, plus the multimodal encoder.

Regions are scored by a linear map and softmax-normalised, pooled into a
global feature, denoised by a one-hidden-layer autoencoder and enhanced by
adding the global feature back to every denoised row.  The encoder then
fuses the enhanced regions with the query tokens into one hidden state.

All functions accept plain arrays or tape nodes (see :mod:`cvqa.linalg`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .errors import DimensionMismatch, SimplexViolation

ENTROPY_SIGNS = ("as_printed", "smoothing")
SIMPLEX_TOL = 1e-9


def dae_hidden_width(d: int) -> int:
    return max(1, math.ceil(d / 2))


def init_gonf_params(rng: np.random.Generator, d: int, hidden: int | None = None) -> dict[str, np.ndarray]:
    h = hidden or dae_hidden_width(d)
    return {
        "scorer_w": la.uniform_init(rng, (d,), d),
        "scorer_b": np.zeros(1),
        "dae_enc_w": la.uniform_init(rng, (d, h), d),
        "dae_enc_b": np.zeros(h),
        "dae_dec_w": la.uniform_init(rng, (h, d), h),
        "dae_dec_b": np.zeros(d),
    }


def init_encoder_params(rng: np.random.Generator, d: int) -> dict[str, np.ndarray]:
    return {
        "enc_wq": la.uniform_init(rng, (d, d), d),
        "enc_wk": la.uniform_init(rng, (d, d), d),
        "enc_wv": la.uniform_init(rng, (d, d), d),
    }


@dataclass
class GonfOutput:
    weights: object
    global_feature: object
    denoised: object
    enhanced: object


def score_regions(v, scorer_w, scorer_b=0.0):
    """Attention weights over the rows of ``v`` from a linear scorer d -> 1."""
    vv = la.value_of(v)
    if vv.ndim != 2 or vv.shape[0] < 1:
        raise DimensionMismatch(f"region features must be n x d with n >= 1, got {vv.shape}")
    if la.value_of(scorer_w).shape != (vv.shape[1],):
        raise DimensionMismatch("scorer weight length must equal the region dimension")
    scores = la.matmul(v, scorer_w) + scorer_b
    return la.softmax(scores)


def global_fuse(v, w):
    """G = sum_m w_m V_m."""
    vv, wv = la.value_of(v), la.value_of(w)
    if wv.ndim != 1 or vv.ndim != 2 or wv.shape[0] != vv.shape[0]:
        raise DimensionMismatch(f"weights {wv.shape} do not match regions {vv.shape}")
    return la.matmul(w, v)


def dae_forward(v, params, training: bool = False, rng: np.random.Generator | None = None,
                noise_std: float = 0.0, noise: np.ndarray | None = None):
    """Map each row through encoder -> ReLU -> decoder.

    In training mode additive Gaussian noise of std ``noise_std`` corrupts the
    input first.  ``noise`` may be supplied directly to pin the corruption.
    """
    vv = la.value_of(v)
    enc_w = params["dae_enc_w"]
    if vv.ndim != 2 or la.value_of(enc_w).shape[0] != vv.shape[1]:
        raise DimensionMismatch(f"DAE encoder expects dim {la.value_of(enc_w).shape[0]}, got {vv.shape}")
    x = v
    if training:
        if noise is None and noise_std > 0:
            if rng is None:
                raise ValueError("training-mode DAE corruption needs an rng")
            noise = rng.normal(0.0, noise_std, size=vv.shape)
        if noise is not None:
            x = la.add(v, noise)
    hidden = la.relu(la.matmul(x, enc_w) + params["dae_enc_b"])
    return la.matmul(hidden, params["dae_dec_w"]) + params["dae_dec_b"]


def enhance(denoised, global_feature):
    """V''_m = V'_m + G for every row m."""
    return la.add_to_rows(denoised, global_feature)


def _check_simplex(w: np.ndarray) -> None:
    if w.ndim != 1 or (w < -SIMPLEX_TOL).any() or abs(float(w.sum()) - 1.0) > SIMPLEX_TOL:
        raise SimplexViolation("attention weights are not a probability vector")


def gonf_loss(v, denoised, w, theta1: float, entropy_sign: str = "as_printed"):
    """(1/n) sum_m ( ||V_m - V'_m||^2 - theta1 * w_m log w_m ).

    ``entropy_sign="smoothing"`` flips the sign of the entropy term so that
    minimisation spreads attention instead of sharpening it.
    """
    vv, dv = la.value_of(v), la.value_of(denoised)
    if vv.shape != dv.shape:
        raise DimensionMismatch(f"denoised shape {dv.shape} != input shape {vv.shape}")
    if entropy_sign not in ENTROPY_SIGNS:
        raise ValueError(f"entropy_sign must be one of {ENTROPY_SIGNS}")
    wv = la.value_of(w)
    _check_simplex(wv)
    if wv.shape[0] != vv.shape[0]:
        raise DimensionMismatch("one attention weight per region required")
    n = vv.shape[0]
    recon = la.total(la.square(la.sub(v, denoised)))
    plogp = la.total(la.xlogx(w))
    sign = -1.0 if entropy_sign == "as_printed" else 1.0
    return (recon + plogp * (sign * theta1)) * (1.0 / n)


def gonf_forward(v, params, training: bool = False, rng: np.random.Generator | None = None,
                 noise_std: float = 0.0, noise: np.ndarray | None = None) -> GonfOutput:
    w = score_regions(v, params["scorer_w"], params["scorer_b"])
    g = global_fuse(v, w)
    denoised = dae_forward(v, params, training=training, rng=rng, noise_std=noise_std, noise=noise)
    return GonfOutput(weights=w, global_feature=g, denoised=denoised, enhanced=enhance(denoised, g))


def encode_multimodal(enhanced, q, params):
    """Hidden state H from one self-attention layer over [V''; Q], mean pooled."""
    ev, qv = la.value_of(enhanced), la.value_of(q)
    if ev.ndim != 2 or qv.ndim != 2 or ev.shape[1] != qv.shape[1]:
        raise DimensionMismatch(f"regions {ev.shape} and query {qv.shape} must share their width")
    x = la.concat([enhanced, q], axis=0)
    queries = la.matmul(x, params["enc_wq"])
    keys = la.matmul(x, params["enc_wk"])
    values = la.matmul(x, params["enc_wv"])
    attended = la.scaled_dot_attention(queries, keys, values)
    return la.mean(attended, axis=0)

