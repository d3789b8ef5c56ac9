"""Answer decoder: projections, cross-attention and the answer NLL.

The fused hidden state is projected into a visual and a question embedding
(concatenated into E).  Each decoding step builds a query from the answer
prefix (bag of token embeddings plus a step embedding) and attends over two
memory tokens: ``[E_v; 0]`` and ``[0; E_q]``.  A linear classifier maps the
attended vector to answer-token logits.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import linalg as la
from .errors import DimensionMismatch, SimplexViolation, TokenOutOfRange

PAD = 0
PHI_TOL = 1e-9


def init_decoder_params(rng: np.random.Generator, d: int, d_e: int, d_att: int, vocab: int,
                        max_len: int) -> dict[str, np.ndarray]:
    if vocab < 2:
        raise ValueError("answer vocabulary needs at least two tokens")
    if max_len < 1:
        raise ValueError("answers need at least one step")
    two = 2 * d_e
    return {
        "dec_wv": la.uniform_init(rng, (d_e, d), d),
        "dec_wq": la.uniform_init(rng, (d_e, d), d),
        "tok_emb": rng.normal(0.0, 0.1, size=(vocab, two)),
        "pos_emb": rng.normal(0.0, 0.1, size=(max_len, two)),
        "att_wq": la.uniform_init(rng, (d_att, two), two),
        "att_wk": la.uniform_init(rng, (d_att, two), two),
        "att_wv": la.uniform_init(rng, (d_att, two), two),
        "out_w": la.uniform_init(rng, (vocab, d_att), d_att),
        "out_b": np.zeros(vocab),
    }


def project_and_concat(h_fused, params):
    """E = [W_v h'; W_q h']."""
    hv = la.value_of(h_fused)
    if hv.ndim != 1 or la.value_of(params["dec_wv"]).shape[1] != hv.shape[0]:
        raise DimensionMismatch(f"decoder projections do not accept a vector of shape {hv.shape}")
    return la.concat([la.matmul(params["dec_wv"], h_fused), la.matmul(params["dec_wq"], h_fused)])


def cross_attention(q, k, v):
    """softmax(Q K^T / sqrt(d_k)) V, softmax taken row-wise."""
    return la.scaled_dot_attention(q, k, v)


def _memory_tokens(e):
    half = la.value_of(e).shape[0] // 2
    visual_mask = np.concatenate([np.ones(half), np.zeros(half)])
    return la.stack([la.mul(e, visual_mask), la.mul(e, 1.0 - visual_mask)])


def step_log_probs(e, prefix: Sequence[int], params):
    """Log-probabilities over the vocabulary for the step after ``prefix``."""
    t = len(prefix)
    tokens = [PAD, *prefix]
    query_in = la.add(la.total(la.take(params["tok_emb"], tokens), axis=0), la.take(params["pos_emb"], t))
    query = la.reshape(la.matmul(params["att_wq"], query_in), (1, -1))
    memory = _memory_tokens(e)
    keys = la.matmul(memory, la.transpose(params["att_wk"]))
    values = la.matmul(memory, la.transpose(params["att_wv"]))
    attended = la.reshape(cross_attention(query, keys, values), (-1,))
    logits = la.add(la.matmul(params["out_w"], attended), params["out_b"])
    return la.log_softmax(logits)


def _validate_truth(truth: Sequence[int], params) -> None:
    vocab, max_len = la.value_of(params["tok_emb"]).shape[0], la.value_of(params["pos_emb"]).shape[0]
    if len(truth) != max_len:
        raise DimensionMismatch(f"answer must have exactly {max_len} steps, got {len(truth)}")
    for tok in truth:
        if not 0 <= int(tok) < vocab:
            raise TokenOutOfRange(f"token {tok} outside vocabulary of size {vocab}")


def decode_loss(e, truth: Sequence[int], params):
    """Teacher-forced -sum_t log P(A_t | A_<t, E), skipping pad steps."""
    _validate_truth(truth, params)
    truth = [int(t) for t in truth]
    loss = 0.0
    for t, tok in enumerate(truth):
        if tok == PAD:
            continue
        logp = step_log_probs(e, truth[:t], params)
        loss = la.sub(loss, la.take(logp, tok))
    return loss


def greedy_decode(e, params) -> list[int]:
    max_len = la.value_of(params["pos_emb"]).shape[0]
    out: list[int] = []
    for _ in range(max_len):
        out.append(int(np.argmax(la.value_of(step_log_probs(e, out, params)))))
    return out


def check_phi(phi: Sequence[float]) -> None:
    if len(phi) != 3:
        raise SimplexViolation(f"phi needs three weights, got {len(phi)}")
    if any(p < 0 for p in phi) or abs(sum(phi) - 1.0) > PHI_TOL:
        raise SimplexViolation(f"phi={tuple(phi)} must be non-negative and sum to 1")


def total_loss(l_gonf, l_ama, l_dec, phi: Sequence[float]):
    """phi1 * L_gonf + phi2 * L_ama + phi3 * L_dec with phi on the simplex."""
    check_phi(phi)
    return la.add(la.add(la.mul(l_gonf, phi[0]), la.mul(l_ama, phi[1])), la.mul(l_dec, phi[2]))
