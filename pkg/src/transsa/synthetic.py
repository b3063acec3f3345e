"""Desk-scale stand-in for distantly supervised bags with wrong-label noise.

Every bag gets a relation label. Its *signal* sentences place a marker
token of that relation between the two entity mentions (NA signal
sentences carry no marker). The ``floor(noise_rate * n)`` *noise*
sentences carry a marker of some other label instead. By default that
marker sits outside the entity span, so the sentence mentions the pair
without expressing the bag's relation, yet a bag-of-words view still sees
a misleading cue. ``noise_placement="between"`` puts it inside the span,
which makes the noise sentence express a different relation outright.

Entity surface names come from a small shared pool; entity ids are unique
per bag, so every bag is its own entity pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SynthConfig
from .corpus import (
    NA,
    Bag,
    RelationLabels,
    SentenceRecord,
    Vocab,
    build_vocab,
    pack_bags,
)


@dataclass
class SyntheticData:
    train_records: list[SentenceRecord]
    test_records: list[SentenceRecord]
    train_signal: list[bool]  # per record id
    test_signal: list[bool]
    labels: RelationLabels
    vocab: Vocab
    train_bags: list[Bag]
    test_bags: list[Bag]

    def signal_mask(self, bag: Bag, role: str) -> list[bool]:
        sig = self.train_signal if role == "train" else self.test_signal
        return [sig[i] for i in bag.record_ids]


def relation_names(n_labels: int) -> list[str]:
    return [NA] + [f"/synth/rel{k}" for k in range(1, n_labels)]


def _marker(rel: int, cfg: SynthConfig, rng: np.random.Generator) -> str:
    return f"m{rel}_{int(rng.integers(0, cfg.markers_per_relation))}"


def _sentence(rel: int, e1: str, e2: str, cfg: SynthConfig, rng: np.random.Generator,
              between: bool) -> list[str]:
    """Filler sentence mentioning e1 then e2, with one marker of ``rel``.

    ``between`` puts the marker in the gap between the mentions (the pair
    expresses ``rel``); otherwise it goes before e1 or after e2.
    """
    length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
    gap = int(rng.integers(2, 4))  # tokens strictly between the entities
    a = int(rng.integers(1, length - gap - 1))  # leaves >= 1 slot outside the span
    b = a + gap + 1
    toks = [f"w{int(j)}" for j in rng.integers(0, cfg.n_filler, size=length)]
    toks[a], toks[b] = e1, e2
    if rel != 0:
        if between:
            slot = a + 1 + int(rng.integers(0, gap))
        else:
            outside = list(range(0, a)) + list(range(b + 1, length))
            slot = outside[int(rng.integers(0, len(outside)))]
        toks[slot] = _marker(rel, cfg, rng)
    return toks


def _make_split(n_bags, split, cfg, names, rng):
    records, signal = [], []
    n_labels = len(names)
    for bag_idx in range(n_bags):
        i, j = rng.choice(cfg.n_entities, size=2, replace=False)
        e1, e2 = f"ent{int(i)}", f"ent{int(j)}"
        id1, id2 = f"/m/{split}{bag_idx}.1", f"/m/{split}{bag_idx}.2"
        gold = int(rng.integers(0, n_labels))
        n = int(rng.integers(cfg.bag_size_min, cfg.bag_size_max + 1))
        n_noise = int(np.floor(cfg.noise_rate * n))
        kinds = [True] * (n - n_noise) + [False] * n_noise
        rng.shuffle(kinds)
        for is_signal in kinds:
            rel = gold
            if not is_signal:
                rel = int(rng.choice([k for k in range(n_labels) if k != gold]))
            between = is_signal or cfg.noise_placement == "between"
            toks = _sentence(rel, e1, e2, cfg, rng, between)
            records.append(SentenceRecord(id1, id2, e1, e2, names[gold], tuple(toks)))
            signal.append(is_signal)
    return records, signal


def generate_synthetic(cfg: SynthConfig, rng: np.random.Generator, max_len: int = 100,
                       radius: int | None = None, key_mode: str = "pair_relation") -> SyntheticData:
    if not 0.0 <= cfg.noise_rate < 1.0:
        raise ValueError(f"noise_rate must be in [0, 1), got {cfg.noise_rate}")
    if cfg.n_labels < 2:
        raise ValueError("need at least NA plus one relation")
    if cfg.len_min < 6 or cfg.len_max < cfg.len_min:
        raise ValueError("sentence length range must satisfy 6 <= len_min <= len_max")
    if cfg.n_entities < 2:
        raise ValueError("need at least two entity names")
    if cfg.noise_placement not in ("outside", "between"):
        raise ValueError(f"noise_placement must be 'outside' or 'between', got {cfg.noise_placement!r}")
    if cfg.bag_size_min < 1 or cfg.bag_size_max < cfg.bag_size_min:
        raise ValueError("bag size range must satisfy 1 <= min <= max")
    names = relation_names(cfg.n_labels)
    train_records, train_signal = _make_split(cfg.n_train_bags, "train", cfg, names, rng)
    test_records, test_signal = _make_split(cfg.n_test_bags, "test", cfg, names, rng)

    labels = RelationLabels(list(names))
    vocab = build_vocab(train_records, min_count=1)
    train_bags = pack_bags(train_records, vocab, labels, "train", max_len, radius, key_mode)
    test_bags = pack_bags(test_records, vocab, labels, "test", max_len, radius)
    return SyntheticData(train_records, test_records, train_signal, test_signal, labels, vocab,
                         train_bags, test_bags)
