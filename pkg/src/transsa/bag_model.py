"""Sentence-level attention over a bag, relation classifier and bag loss.

For sentence features P_i and relation scores u_ik = W3[k] . P_i + b3[k],
the attention alpha_ik is a softmax over the sentences i for each fixed
relation k. The bag vector for relation k is v_k = sum_i alpha_ik P_i, and
its scalar score reuses row k of the same linear layer:
b_k = W3[k] . v_k + b3[k]. Because the alphas sum to one, this equals
sum_i alpha_ik u_ik, which the ``direct`` mode computes without the
d-dimensional intermediate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .corpus import Bag
from .encoder import SentenceBatch, encode_batch, glorot, init_encoder_params
from .tensor import ParamGroup, Tensor


def init_bag_params(cfg: TrainConfig, n_labels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "w3": glorot(rng, (n_labels, cfg.d_model), cfg.d_model, n_labels),
        "b3": np.zeros(n_labels),
    }


def sentence_scores(p: Tensor, w3: Tensor, b3: Tensor) -> Tensor:
    """U = P W3^T + b3 for P of shape (..., d_model)."""
    if p.shape[-1] != w3.shape[1]:
        raise T.DimensionError(f"sentence feature size {p.shape[-1]} != W3 columns {w3.shape[1]}")
    return T.matmul(p, T.transpose(w3)) + b3


def bag_attention(
    p: Tensor,
    u: Tensor,
    w3: Tensor,
    b3: Tensor,
    bag_mask: np.ndarray | None = None,
    mode: str = "vector",
):
    """Per-relation attention pooling.

    Accepts one bag (P: n x d, U: n x l) or a padded batch (B x n x d,
    B x n x l, ``bag_mask`` B x n). Returns (scores, alpha) with scores of
    shape (l,) or (B, l) and alpha of shape (n, l) or (B, n, l).
    """
    single = p.ndim == 2
    if single:
        p = T.reshape(p, (1,) + p.shape)
        u = T.reshape(u, (1,) + u.shape)
    if p.shape[1] == 0:
        raise ValueError("bag_attention on an empty bag")
    if bag_mask is None:
        bag_mask = np.ones(p.shape[:2], dtype=bool)
    alpha = T.softmax(u, axis=1, mask=bag_mask[:, :, None])
    if mode == "vector":
        v = T.matmul(T.transpose(alpha, (0, 2, 1)), p)  # B x l x d
        scores = T.sum(v * w3, axis=-1) + b3
    elif mode == "direct":
        scores = T.sum(alpha * u, axis=1)
    else:
        raise ValueError(f"unknown bag score mode {mode!r}")
    if single:
        return T.reshape(scores, scores.shape[1:]), T.reshape(alpha, alpha.shape[1:])
    return scores, alpha


def classify(scores) -> np.ndarray:
    """p(r_k | B) as a stabilized softmax over relation scores."""
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class BagOutput:
    scores: Tensor  # B x l
    alpha: Tensor  # B x n_max x l
    sentence_scores: Tensor  # N x l
    bag_index: np.ndarray  # B x n_max indices into the sentence axis
    bag_mask: np.ndarray
    attention: list | None = None

    @property
    def probs(self) -> np.ndarray:
        return classify(self.scores)


class TransSA:
    """Encoder plus bag model; holds every learnable tensor by name."""

    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        self.n_labels = self.params["b3"].shape[0]

    @classmethod
    def initialize(cls, cfg: TrainConfig, vocab_size: int, n_labels: int,
                   rng: np.random.Generator, word_vectors: np.ndarray | None = None) -> "TransSA":
        cfg.validate()
        arrays = init_encoder_params(cfg, vocab_size, rng, word_vectors)
        arrays.update(init_bag_params(cfg, n_labels, rng))
        return cls(cfg, arrays)

    def param_groups(self) -> list[ParamGroup]:
        return [ParamGroup(k, v) for k, v in self.params.items()]

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def forward(self, bags: Sequence[Bag], training: bool = False,
                rng: np.random.Generator | None = None, return_attention: bool = False) -> BagOutput:
        sents = [s for b in bags for s in b.sentences]
        batch = SentenceBatch.from_sentences(sents)
        enc = encode_batch(batch, self.params, self.cfg, training, rng, return_attention)
        p, attn = enc if return_attention else (enc, None)

        n_max = max(b.n for b in bags)
        index = np.zeros((len(bags), n_max), dtype=np.int64)
        mask = np.zeros((len(bags), n_max), dtype=bool)
        start = 0
        for i, b in enumerate(bags):
            index[i, :b.n] = np.arange(start, start + b.n)
            index[i, b.n:] = start  # masked slots repeat a real row
            mask[i, :b.n] = True
            start += b.n

        w3, b3 = self.params["w3"], self.params["b3"]
        u = sentence_scores(p, w3, b3)
        scores, alpha = bag_attention(T.take(p, index), T.take(u, index), w3, b3, mask,
                                      self.cfg.bag_score)
        return BagOutput(scores, alpha, u, index, mask, attn)

    def predict_proba(self, bags: Sequence[Bag], chunk: int = 256) -> np.ndarray:
        out = []
        with T.no_grad():
            for i in range(0, len(bags), chunk):
                out.append(self.forward(bags[i:i + chunk]).probs)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.n_labels))


def bag_loss(model: TransSA, bags: Sequence[Bag], labels: Sequence[int] | None = None,
             training: bool = False, rng: np.random.Generator | None = None,
             reduction: str | None = None) -> Tensor:
    """Bag-level cross-entropy, averaged over the batch by default."""
    if labels is None:
        labels = [b.label for b in bags]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= model.n_labels:
        raise ValueError(f"labels must lie in [0, {model.n_labels})")
    out = model.forward(bags, training, rng)
    return T.cross_entropy(out.scores, labels, reduction or model.cfg.loss_reduction)
