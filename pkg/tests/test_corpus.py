import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transsa.corpus import (
    PAD,
    PAD_TOKEN,
    UNK,
    UNK_TOKEN,
    CorpusFormatError,
    EntityTruncated,
    RelationLabels,
    SentenceRecord,
    build_vocab,
    encode_sentence,
    gold_facts,
    load_pretrained_embeddings,
    load_riedel_file,
    pack_bags,
    position_id,
    relative_position,
    subsample_bag,
    write_riedel_file,
)


def rec(tokens, e1="a", e2="b", rel="NA", id1="/m/1", id2="/m/2"):
    return SentenceRecord(id1, id2, e1, e2, rel, tuple(tokens.split()))


# ---------------------------------------------------------------- file loading


def riedel_line(id1, id2, e1, e2, rel, sent):
    return f"{id1}\t{id2}\t{e1}\t{e2}\t{rel}\t{sent} ###END###\n"


def test_load_well_formed_file(tmp_path):
    p = tmp_path / "train.txt"
    p.write_text(
        riedel_line("/m/1", "/m/2", "paris", "france", "/loc/contains", "paris is in france")
        + riedel_line("/m/1", "/m/2", "paris", "france", "NA", "france loves paris")
        + riedel_line("/m/3", "/m/4", "new york", "usa", "NA", "new york , usa")
    )
    records = load_riedel_file(p)
    assert len(records) == 3
    assert records[2].entity1_name == "new york"
    assert records[0].tokens == ("paris", "is", "in", "france")


def test_malformed_line_is_skipped_and_counted(tmp_path):
    p = tmp_path / "train.txt"
    p.write_text(
        riedel_line("/m/1", "/m/2", "paris", "france", "NA", "paris is in france")
        + riedel_line("/m/1", "/m/2", "berlin", "france", "NA", "paris is in france")
        + "garbage line\n"
    )
    stats = {}
    assert len(load_riedel_file(p, stats)) == 1
    assert stats["skipped"] == 2


def test_zero_records_and_missing_file(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("nothing here\n")
    with pytest.raises(CorpusFormatError):
        load_riedel_file(p)
    with pytest.raises(OSError):
        load_riedel_file(tmp_path / "absent.txt")


def test_write_then_load_round_trip(tmp_path):
    rs = [rec("x a y b z", rel="/r/1"), rec("b then a", id1="/m/9")]
    write_riedel_file(tmp_path / "f.txt", rs)
    assert load_riedel_file(tmp_path / "f.txt") == rs


# ---------------------------------------------------------------- vocab


def test_vocab_threshold():
    rs = [rec("a a a b")]
    v = build_vocab(rs, min_count=2)
    assert v.itos == [PAD_TOKEN, UNK_TOKEN, "a"]
    assert v.index("b") == UNK and v.index(PAD_TOKEN) == PAD
    assert set(build_vocab(rs, min_count=1).itos[2:]) == {"a", "b"}


def test_vocab_empty_errors():
    with pytest.raises(ValueError):
        build_vocab([], 1)


@settings(max_examples=40)
@given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=8), min_size=1, max_size=12),
       st.integers(1, 3), st.randoms(use_true_random=False))
def test_vocab_order_independent(sents, k, rnd):
    rs = [rec(" ".join(s)) for s in sents]
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    assert build_vocab(rs, k).itos == build_vocab(shuffled, k).itos


# ---------------------------------------------------------------- embeddings


def test_pretrained_embeddings(tmp_path):
    v = build_vocab([rec("a b c")], 1)
    p = tmp_path / "vec.txt"
    p.write_text("2 3\na 0.1 0.2 0.3\nc -1 0 1.5\n")
    m = load_pretrained_embeddings(p, v, 3, np.random.default_rng(0))
    assert m.shape == (len(v), 3)
    assert m[v.index("a")].tolist() == [0.1, 0.2, 0.3]
    assert m[v.index("c")].tolist() == [-1.0, 0.0, 1.5]
    assert np.all(np.abs(m[v.index("b")]) <= 0.25)
    assert not np.any(m[PAD])


def test_pretrained_embeddings_dim_mismatch(tmp_path):
    v = build_vocab([rec("a b")], 1)
    p = tmp_path / "vec.txt"
    p.write_text("1 4\na 1 2 3 4\n")
    with pytest.raises(ValueError, match="expected 3, found 4"):
        load_pretrained_embeddings(p, v, 3, np.random.default_rng(0))


# ---------------------------------------------------------------- positions


@pytest.mark.parametrize("i, want", [(2, -3), (5, 0), (6, 0), (9, 3)])
def test_relative_position(i, want):
    assert relative_position(i, 5, 6) == want


def test_position_clip_boundary():
    assert position_id(-250, 100) == 1
    assert position_id(250, 100) == 201
    assert position_id(0, 100) == 101


def test_encode_pads_with_zero_ids():
    v = build_vocab([rec("a x b y")], 1)
    enc = encode_sentence(rec("a x b y"), v, max_len=6)
    assert len(enc) == 6 and enc.true_len == 4
    assert enc.word_ids[4:].tolist() == [PAD, PAD]
    assert enc.pos1_ids[4:].tolist() == [0, 0] and enc.pos2_ids[4:].tolist() == [0, 0]


def test_encode_hand_sentence():
    # "in" sits between the head span (tokens 0-1) and the tail (token 3)
    r = SentenceRecord("/m/1", "/m/2", "bill gates", "seattle", "NA",
                       tuple("bill gates in seattle today".split()))
    v = build_vocab([r], 1)
    enc = encode_sentence(r, v, max_len=10, radius=10)
    d1 = [int(p) - 11 for p in enc.pos1_ids[:5]]
    d2 = [int(p) - 11 for p in enc.pos2_ids[:5]]
    assert d1 == [0, 0, 1, 2, 3]
    assert d2 == [-3, -2, -1, 0, 1]


def test_encode_truncated_entity():
    v = build_vocab([rec("a x x x x b")], 1)
    with pytest.raises(EntityTruncated):
        encode_sentence(rec("a x x x x b"), v, max_len=4)


@settings(max_examples=60)
@given(st.integers(4, 30), st.data())
def test_position_ids_round_trip(n, data):
    b1 = data.draw(st.integers(0, n - 1))
    b2 = data.draw(st.integers(0, n - 1).filter(lambda x: x != b1))
    toks = [f"w{i}" for i in range(n)]
    toks[b1], toks[b2] = "HEAD", "TAIL"
    r = SentenceRecord("/m/1", "/m/2", "HEAD", "TAIL", "NA", tuple(toks))
    v = build_vocab([r], 1)
    radius = data.draw(st.integers(1, 12))
    enc = encode_sentence(r, v, max_len=n + 3, radius=radius)
    assert encode_sentence(r, v, max_len=n + 3, radius=radius).pos1_ids.tolist() == enc.pos1_ids.tolist()
    for i in range(n):
        want = max(-radius, min(radius, i - b1))
        assert int(enc.pos1_ids[i]) - radius - 1 == want
    assert all(int(p) == 0 for p in enc.pos1_ids[n:])


# ---------------------------------------------------------------- bags


def test_pack_same_pair_same_relation():
    v = build_vocab([rec("a b")], 1)
    labels = RelationLabels(["NA", "/r/1"])
    bags = pack_bags([rec("a b", rel="/r/1")] * 3, v, labels, "train")
    assert len(bags) == 1 and bags[0].n == 3 and bags[0].label == 1


def test_pack_distinct_pairs():
    v = build_vocab([rec("a b")], 1)
    labels = RelationLabels(["NA"])
    bags = pack_bags([rec("a b"), rec("a b", id2="/m/7")], v, labels, "train")
    assert [b.n for b in bags] == [1, 1]


def test_pack_train_splits_by_relation_test_merges():
    v = build_vocab([rec("a b")], 1)
    labels = RelationLabels(["NA", "/r/1", "/r/2"])
    rs = [rec("a b", rel="/r/1"), rec("a b", rel="/r/2"), rec("b a", rel="/r/1")]
    train = pack_bags(rs, v, labels, "train")
    test = pack_bags(rs, v, labels, "test")
    assert sorted(b.n for b in train) == [1, 2]
    assert len(test) == 1 and test[0].n == 3 and test[0].labels == frozenset({1, 2})
    assert gold_facts(test) == {(("/m/1", "/m/2"), 1), (("/m/1", "/m/2"), 2)}


def test_pack_unknown_relation_frozen():
    v = build_vocab([rec("a b")], 1)
    with pytest.raises(KeyError, match="/r/9"):
        pack_bags([rec("a b", rel="/r/9")], v, RelationLabels(["NA"]), "test")


def test_labels_discover_puts_na_first():
    labels = RelationLabels.discover([rec("a b", rel="/z"), rec("a b"), rec("a b", rel="/a")])
    assert labels.names == ["NA", "/a", "/z"]


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 2), st.integers(0, 8)), min_size=1, max_size=40))
def test_pack_partitions_records(rows):
    rs = []
    for pair, r, gap in rows:
        toks = ["a"] + ["x"] * gap + ["b"]
        rs.append(SentenceRecord(f"/m/{pair}", "/m/t", "a", "b", ["NA", "/r/1", "/r/2"][r], tuple(toks)))
    v = build_vocab(rs, 1)
    labels = RelationLabels(["NA", "/r/1", "/r/2"])
    for role in ("train", "test"):
        stats_bags = pack_bags(rs, v, labels, role, max_len=6)
        kept = sum(1 for _, _, gap in rows if gap + 1 < 6)
        assert sum(b.n for b in stats_bags) == kept
        ids = sorted(i for b in stats_bags for i in b.record_ids)
        assert ids == sorted(set(ids))


# ---------------------------------------------------------------- subsampling


def _bag(n):
    v = build_vocab([rec("a b")], 1)
    rs = [rec("a " + "x " * i + "b") for i in range(n)]
    return pack_bags(rs, v, RelationLabels(["NA"]), "test")[0]


def test_subsample_settings(rng):
    bag = _bag(5)
    one = subsample_bag(bag, "One", rng)
    two = subsample_bag(bag, "two", rng)
    assert one.n == 1 and two.n == 2
    assert len(set(two.record_ids)) == 2
    assert set(two.record_ids) <= set(bag.record_ids)
    assert subsample_bag(bag, "all", rng) is bag
    with pytest.raises(ValueError):
        subsample_bag(_bag(1), "two", rng)


def test_subsample_one_is_uniform():
    bag = _bag(4)
    rng = np.random.default_rng(0)
    counts = np.bincount([subsample_bag(bag, "one", rng).record_ids[0] for _ in range(4000)], minlength=4)
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)
