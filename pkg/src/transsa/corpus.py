"""Riedel-format NYT reader, vocabulary, position features and bag packing."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
NA = "NA"
END_SENTINEL = "###END###"


class CorpusFormatError(ValueError):
    pass


class EntityTruncated(ValueError):
    """An entity span fell outside the ``max_len`` window."""


@dataclass(frozen=True)
class SentenceRecord:
    entity1_id: str
    entity2_id: str
    entity1_name: str
    entity2_name: str
    relation: str
    tokens: tuple[str, ...]

    @property
    def pair(self) -> tuple[str, str]:
        return (self.entity1_id, self.entity2_id)


def find_span(tokens: Sequence[str], name: str) -> tuple[int, int] | None:
    """Inclusive (begin, end) of the first occurrence of ``name`` in ``tokens``."""
    parts = name.split()
    if not parts:
        return None
    k = len(parts)
    for i in range(len(tokens) - k + 1):
        if list(tokens[i:i + k]) == parts:
            return i, i + k - 1
    return None


def parse_riedel_line(line: str) -> SentenceRecord | None:
    fields = line.rstrip("\n").split("\t")
    fields = [f for f in fields if f.strip() != END_SENTINEL]
    if len(fields) < 6:
        return None
    e1_id, e2_id, e1, e2, rel = (f.strip() for f in fields[:5])
    tokens = " ".join(fields[5:]).split()
    if tokens and tokens[-1] == END_SENTINEL:
        tokens.pop()
    if not (e1_id and e2_id and e1 and e2 and rel and tokens):
        return None
    if find_span(tokens, e1) is None or find_span(tokens, e2) is None:
        return None
    return SentenceRecord(e1_id, e2_id, e1, e2, rel, tuple(tokens))


def load_riedel_file(path: str | Path, stats: dict | None = None) -> list[SentenceRecord]:
    """Read one sentence per line; malformed lines are skipped and counted.

    Raises ``CorpusFormatError`` if no line is well formed.
    """
    records = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = parse_riedel_line(line)
            if rec is None:
                skipped += 1
            else:
                records.append(rec)
    if skipped:
        logger.warning("%s: skipped %d malformed line(s)", path, skipped)
    if stats is not None:
        stats["skipped"] = skipped
        stats["records"] = len(records)
    if not records:
        raise CorpusFormatError(f"{path}: no well-formed lines")
    return records


def write_riedel_file(path: str | Path, records: Iterable[SentenceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write("\t".join([r.entity1_id, r.entity2_id, r.entity1_name, r.entity2_name,
                                r.relation, " ".join(r.tokens), END_SENTINEL]) + "\n")


# ---------------------------------------------------------------- vocabulary


@dataclass
class Vocab:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.itos[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocab must start with PAD, UNK")
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)


def build_vocab(records: Sequence[SentenceRecord], min_count: int = 101) -> Vocab:
    """Keep tokens seen at least ``min_count`` times.

    Order is frequency descending, then lexicographic, so the result does not
    depend on record order.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    if not records:
        raise ValueError("cannot build a vocabulary from zero records")
    counts = Counter(t for r in records for t in r.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    kept = [t for t in kept if t not in (PAD_TOKEN, UNK_TOKEN)]
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def load_pretrained_embeddings(
    path: str | Path, vocab: Vocab, d_w: int, rng: np.random.Generator
) -> np.ndarray:
    """|V| x d_w matrix: file rows copied, others uniform[-0.25, 0.25], PAD row zero."""
    out = rng.uniform(-0.25, 0.25, size=(len(vocab), d_w))
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise CorpusFormatError(f"{path}: first line must be 'count dim'")
        dim = int(header[1])
        if dim != d_w:
            raise ValueError(f"{path}: embedding dimension mismatch, expected {d_w}, found {dim}")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) != d_w + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {d_w} values, found {len(parts) - 1}"
                )
            idx = vocab.stoi.get(parts[0])
            if idx is not None and idx != PAD:
                out[idx] = np.array(parts[1:], dtype=np.float64)
    out[PAD] = 0.0
    return out


# ---------------------------------------------------------------- labels


@dataclass
class RelationLabels:
    names: list[str]
    frozen: bool = True

    def __post_init__(self):
        if not self.names or self.names[0] != NA:
            raise ValueError("relation labels must have NA at index 0")
        self.index = {n: i for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            if self.frozen:
                raise KeyError(f"unknown relation {name!r} (label set is frozen)") from None
            self.index[name] = len(self.names)
            self.names.append(name)
            return self.index[name]

    @classmethod
    def discover(cls, records: Iterable[SentenceRecord]) -> "RelationLabels":
        names = sorted({r.relation for r in records} - {NA})
        return cls([NA] + names)

    @classmethod
    def from_file(cls, path: str | Path) -> "RelationLabels":
        names = [l.strip() for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
        if NA in names:
            names.remove(NA)
        return cls([NA] + names)


# ---------------------------------------------------------------- encoding


def relative_position(i: int, b: int, e: int) -> int:
    """Signed distance of token ``i`` to the inclusive span [b, e]; 0 inside it."""
    if i < b:
        return i - b
    if i > e:
        return i - e
    return 0


def position_id(dist: int, radius: int) -> int:
    """Clip to [-radius, radius] and shift into [1, 2*radius + 1]; 0 is PAD."""
    return max(-radius, min(radius, dist)) + radius + 1


@dataclass
class EncodedSentence:
    word_ids: np.ndarray
    pos1_ids: np.ndarray
    pos2_ids: np.ndarray
    true_len: int
    spans: tuple[int, int, int, int]

    def __len__(self):
        return len(self.word_ids)

    def padded(self, length: int) -> "EncodedSentence":
        n = len(self.word_ids)
        if length < self.true_len:
            raise ValueError(f"cannot pad a length-{self.true_len} sentence to {length}")
        if length == n:
            return self
        if length < n:
            return EncodedSentence(self.word_ids[:length], self.pos1_ids[:length],
                                   self.pos2_ids[:length], self.true_len, self.spans)
        extra = np.zeros(length - n, dtype=self.word_ids.dtype)
        return EncodedSentence(
            np.concatenate([self.word_ids, extra]),
            np.concatenate([self.pos1_ids, extra]),
            np.concatenate([self.pos2_ids, extra]),
            self.true_len,
            self.spans,
        )


def encode_sentence(
    record: SentenceRecord,
    vocab: Vocab,
    max_len: int = 100,
    radius: int | None = None,
    pad: bool = True,
) -> EncodedSentence:
    """Index tokens and compute both position-id sequences.

    Sentences longer than ``max_len`` lose their tail; if that cuts into an
    entity span ``EntityTruncated`` is raised. With ``pad`` the id arrays
    have length ``max_len``, otherwise ``true_len``.
    """
    radius = max_len if radius is None else radius
    s1 = find_span(record.tokens, record.entity1_name)
    s2 = find_span(record.tokens, record.entity2_name)
    if s1 is None or s2 is None:
        raise CorpusFormatError("entity name is not a token span of the sentence")
    if max(s1[1], s2[1]) >= max_len:
        raise EntityTruncated(f"entity span beyond max_len={max_len}")
    tokens = record.tokens[:max_len]
    m = len(tokens)
    words = np.fromiter((vocab.index(t) for t in tokens), dtype=np.int64, count=m)
    idx = range(m)
    p1 = np.fromiter((position_id(relative_position(i, *s1), radius) for i in idx), np.int64, m)
    p2 = np.fromiter((position_id(relative_position(i, *s2), radius) for i in idx), np.int64, m)
    enc = EncodedSentence(words, p1, p2, m, (s1[0], s1[1], s2[0], s2[1]))
    return enc.padded(max_len) if pad else enc


# ---------------------------------------------------------------- bags


@dataclass
class Bag:
    key: tuple
    label: int
    sentences: list[EncodedSentence]
    labels: frozenset[int] = frozenset()
    record_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.sentences:
            raise ValueError("a bag needs at least one sentence")
        if not self.labels:
            self.labels = frozenset([self.label])

    @property
    def n(self) -> int:
        return len(self.sentences)

    @property
    def pair(self) -> tuple[str, str]:
        return self.key[0], self.key[1]


@dataclass
class PackStats:
    encoded: int = 0
    dropped: int = 0


def pack_bags(
    records: Sequence[SentenceRecord],
    vocab: Vocab,
    labels: RelationLabels,
    role: str = "train",
    max_len: int = 100,
    radius: int | None = None,
    key_mode: str = "pair_relation",
    stats: PackStats | None = None,
) -> list[Bag]:
    """Group encoded sentences into bags, in order of first appearance.

    Train bags key on (pair, relation) under ``key_mode='pair_relation'``;
    test bags always key on the pair and carry every label seen for it.
    """
    if role not in ("train", "test"):
        raise ValueError(f"role must be 'train' or 'test', got {role!r}")
    by_pair = role == "test" or key_mode == "pair"
    groups: dict[tuple, Bag] = {}
    st = stats if stats is not None else PackStats()
    for rid, rec in enumerate(records):
        rel = labels.id(rec.relation)
        try:
            enc = encode_sentence(rec, vocab, max_len, radius, pad=False)
        except EntityTruncated:
            st.dropped += 1
            continue
        st.encoded += 1
        key = rec.pair if by_pair else (rec.entity1_id, rec.entity2_id, rec.relation)
        bag = groups.get(key)
        if bag is None:
            groups[key] = Bag(key, rel, [enc], frozenset([rel]), [rid])
        else:
            bag.sentences.append(enc)
            bag.record_ids.append(rid)
            if rel not in bag.labels:
                bag.labels = bag.labels | {rel}
                if bag.label == 0:
                    bag.label = rel
    if st.dropped:
        logger.info("dropped %d sentence(s) whose entities fall beyond max_len", st.dropped)
    return list(groups.values())


def gold_facts(bags: Iterable[Bag]) -> set[tuple[tuple, int]]:
    """Non-NA (pair, relation) facts present in a list of bags."""
    return {(b.pair, r) for b in bags for r in b.labels if r != 0}


def subsample_bag(bag: Bag, setting: str, rng: np.random.Generator) -> Bag:
    """One/Two keep 1 or 2 distinct uniformly chosen sentences; All is the identity."""
    setting = setting.lower()
    if setting == "all":
        return bag
    k = {"one": 1, "two": 2}.get(setting)
    if k is None:
        raise ValueError(f"unknown setting {setting!r}")
    if bag.n < k:
        raise ValueError(f"setting {setting!r} needs >= {k} sentences, bag has {bag.n}")
    pick = np.sort(rng.choice(bag.n, size=k, replace=False))
    rids = [bag.record_ids[i] for i in pick] if bag.record_ids else []
    return Bag(bag.key, bag.label, [bag.sentences[i] for i in pick], bag.labels, rids)
