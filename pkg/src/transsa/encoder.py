"""Transformer-block sentence encoder.

Pipeline for a padded batch of N sentences of length m:

    [word; pos1; pos2] lookup -> tanh -> (projection to d_model) -> dropout
    -> X = LayerNorm(S' + MultiHead(S'))
    -> O = LayerNorm(X + FFN(X))
    -> masked max over real tokens -> dropout -> P (N x d_model)

PAD key positions get zero attention weight and PAD rows never win the max,
so P does not depend on how much padding a sentence carries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .corpus import PAD, EncodedSentence
from .tensor import Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_encoder_params(
    cfg: TrainConfig,
    vocab_size: int,
    rng: np.random.Generator,
    word_vectors: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Arrays for every encoder parameter, drawn in a fixed order."""
    if word_vectors is not None:
        if word_vectors.shape != (vocab_size, cfg.d_w):
            raise ValueError(
                f"pretrained matrix shape {word_vectors.shape} != ({vocab_size}, {cfg.d_w})"
            )
        word = np.array(word_vectors, dtype=np.float64)
    else:
        word = rng.uniform(-0.25, 0.25, size=(vocab_size, cfg.d_w))
    word[PAD] = 0.0
    n_pos = 2 * cfg.radius + 2
    params = {"word_embedding": word}
    for name in ("pos1_embedding", "pos2_embedding"):
        table = rng.uniform(-1.0, 1.0, size=(n_pos, cfg.d_p))
        table[0] = 0.0
        params[name] = table
    dm, h = cfg.d_model, cfg.h
    dh = dm // h
    if cfg.use_projection:
        params["input_projection"] = glorot(rng, (cfg.d_in, dm), cfg.d_in, dm)
    for b in range(cfg.n_blocks):
        p = f"block{b}."
        for w in ("w_q", "w_k", "w_v"):
            params[p + w] = glorot(rng, (h, dm, dh), dm, dh)
        params[p + "w_h"] = glorot(rng, (dm, dm), dm, dm)
        params[p + "ln1_gain"] = np.ones(dm)
        params[p + "ln1_bias"] = np.zeros(dm)
        params[p + "ffn_w1"] = glorot(rng, (dm, cfg.d_ff), dm, cfg.d_ff)
        params[p + "ffn_b1"] = np.zeros(cfg.d_ff)
        params[p + "ffn_w2"] = glorot(rng, (cfg.d_ff, dm), cfg.d_ff, dm)
        params[p + "ffn_b2"] = np.zeros(dm)
        params[p + "ln2_gain"] = np.ones(dm)
        params[p + "ln2_bias"] = np.zeros(dm)
    return params


@dataclass
class SentenceBatch:
    word_ids: np.ndarray  # N x m
    pos1_ids: np.ndarray
    pos2_ids: np.ndarray
    mask: np.ndarray  # N x m, True on real tokens

    @classmethod
    def from_sentences(cls, sents: Sequence[EncodedSentence], pad_to: int | None = None):
        m = max(s.true_len for s in sents) if pad_to is None else pad_to
        n = len(sents)
        w = np.zeros((n, m), dtype=np.int64)
        p1 = np.zeros_like(w)
        p2 = np.zeros_like(w)
        mask = np.zeros((n, m), dtype=bool)
        for i, s in enumerate(sents):
            k = s.true_len
            if k < 1:
                raise ValueError("sentence with true_len 0")
            if k > m:
                raise ValueError(f"sentence of length {k} does not fit pad length {m}")
            w[i, :k] = s.word_ids[:k]
            p1[i, :k] = s.pos1_ids[:k]
            p2[i, :k] = s.pos2_ids[:k]
            mask[i, :k] = True
        return cls(w, p1, p2, mask)


@dataclass
class SentenceFeature:
    vector: np.ndarray
    mask: np.ndarray


def embed_input(batch: SentenceBatch, params: dict[str, Tensor]) -> Tensor:
    """tanh of the concatenated word and two position vectors (N x m x d)."""
    parts = [
        T.embedding(params["word_embedding"], batch.word_ids, padding_idx=PAD),
        T.embedding(params["pos1_embedding"], batch.pos1_ids, padding_idx=0),
        T.embedding(params["pos2_embedding"], batch.pos2_ids, padding_idx=0),
    ]
    return T.tanh(T.concat(parts, axis=-1))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None):
    """softmax(q k^T / sqrt(d_h)) v over the last two axes.

    ``key_mask`` (broadcastable to ... x 1 x m) marks keys that may be
    attended to. Returns the output and the weight matrix.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise T.DimensionError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    scores = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(q.shape[-1]))
    weights = T.softmax(scores, axis=-1, mask=key_mask)
    return T.matmul(weights, v), weights


def multi_head_self_attention(x: Tensor, params: dict[str, Tensor], prefix: str,
                              mask: np.ndarray):
    """Self-attention with per-head projections, heads concatenated then mixed by W^H.

    x: N x m x d_model, mask: N x m. Returns (N x m x d_model, N x h x m x m weights).
    """
    n, m, dm = x.shape
    x4 = T.reshape(x, (n, 1, m, dm))
    q = T.matmul(x4, params[prefix + "w_q"])  # N x h x m x d_h
    k = T.matmul(x4, params[prefix + "w_k"])
    v = T.matmul(x4, params[prefix + "w_v"])
    heads, weights = scaled_dot_attention(q, k, v, mask[:, None, None, :])
    h = heads.shape[1]
    cat = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (n, m, h * heads.shape[-1]))
    return T.matmul(cat, params[prefix + "w_h"]), weights


def feed_forward(a: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = T.relu(T.matmul(a, params[prefix + "ffn_w1"]) + params[prefix + "ffn_b1"])
    return T.matmul(hidden, params[prefix + "ffn_w2"]) + params[prefix + "ffn_b2"]


def transformer_block(x: Tensor, params, prefix: str, mask: np.ndarray, eps: float):
    a, weights = multi_head_self_attention(x, params, prefix, mask)
    x = T.layer_norm(x + a, params[prefix + "ln1_gain"], params[prefix + "ln1_bias"], eps)
    f = feed_forward(x, params, prefix)
    o = T.layer_norm(x + f, params[prefix + "ln2_gain"], params[prefix + "ln2_bias"], eps)
    return o, weights


def encode_batch(
    batch: SentenceBatch,
    params: dict[str, Tensor],
    cfg: TrainConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
):
    """Encode a padded batch into N x d_model sentence features."""
    s = embed_input(batch, params)
    if "input_projection" in params:
        s = T.matmul(s, params["input_projection"])
    s = T.dropout(s, cfg.dropout_p, training, rng)
    attention = []
    for b in range(cfg.n_blocks):
        s, w = transformer_block(s, params, f"block{b}.", batch.mask, cfg.ln_eps)
        attention.append(w)
    p = T.masked_max(s, batch.mask, axis=1)
    p = T.dropout(p, cfg.dropout_p, training, rng)
    if return_attention:
        return p, attention
    return p


def encode(
    enc: EncodedSentence,
    params: dict[str, Tensor],
    cfg: TrainConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> SentenceFeature:
    if enc.true_len < 1:
        raise ValueError("cannot encode an empty sentence")
    batch = SentenceBatch.from_sentences([enc], pad_to=len(enc))
    with T.no_grad():
        p = encode_batch(batch, params, cfg, training, rng)
    return SentenceFeature(p.data[0].copy(), batch.mask[0].copy())
