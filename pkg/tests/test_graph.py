from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duin import tensor as T
from duin.embedding import FeatureVocab
from duin.graph import (CoocGraph, GraphTimeline, RelationIndex, RelationTriple, RelevanceScorer,
                        build, bucketize, relevance_score)
from duin.nn import MLP


def oracle(sequences, window):
    """Independent double loop over all ordered position pairs."""
    t, c, p = Counter(), Counter(), Counter()
    for seq in sequences:
        for x in range(len(seq)):
            for y in range(len(seq)):
                if 0 < y - x <= window:
                    t[seq[x][0], seq[y][0]] += 1
                    c[seq[x][1], seq[y][1]] += 1
                    p[seq[x][1], seq[y][0]] += 1
    return t, c, p


def seq(*items):
    return [(i, "A" + i) for i in items]


def test_three_items_window_four():
    g = build([seq("a", "b", "c")], 4)
    assert dict(g.transition) == {("a", "b"): 1, ("a", "c"): 1, ("b", "c"): 1}


def test_three_items_window_one():
    g = build([seq("a", "b", "c")], 1)
    assert dict(g.transition) == {("a", "b"): 1, ("b", "c"): 1}


def test_duplicate_sequences_add():
    assert build([seq("a", "b"), seq("a", "b")], 4).transition["a", "b"] == 2


def test_relation_lookup_and_direction():
    g = build([seq("a", "b")], 1)
    assert g.relation("a", "b", "Aa", "Ab").r_t == 1
    assert g.relation("b", "a", "Ab", "Aa").r_t == 0
    r = g.relation("a", "b", "Aa", "Ab")
    assert (r.r_c, r.r_p) == (1, 1)
    assert g.relation("x", "y", "Ax", "Ay") == RelationTriple(0, 0, 0)


def test_empty_input_and_bad_window():
    assert not build([], 4).transition
    with pytest.raises(ValueError):
        build([seq("a")], 0)


def test_total_transition_mass():
    seqs = [seq(*"abcdefg"), seq(*"xy")]
    g = build(seqs, 3)
    expect = sum(sum(min(3, len(s) - 1 - p) for p in range(len(s))) for s in seqs)
    assert sum(g.transition.values()) == expect


tokens = st.sampled_from("abcdef")
sequences = st.lists(st.lists(st.tuples(tokens, st.sampled_from("PQR")), max_size=8), max_size=10)


@settings(max_examples=150, deadline=None)
@given(sequences, st.integers(1, 4))
def test_matches_oracle(seqs, window):
    g = build(seqs, window)
    t, c, p = oracle(seqs, window)
    assert g.transition == t and g.complementary == c and g.popularity == p


@settings(max_examples=50, deadline=None)
@given(sequences, sequences, st.integers(1, 4))
def test_merge_equals_union(a, b, window):
    merged = build(a, window).merge(build(b, window))
    union = build(a + b, window)
    assert (merged.transition, merged.complementary, merged.popularity) == \
        (union.transition, union.complementary, union.popularity)


def test_merge_rejects_window_mismatch():
    with pytest.raises(ValueError):
        build([], 2).merge(build([], 3))


def test_save_load_round_trip(tmp_path):
    g = build([seq(*"abcab"), seq(*"cba")], 2)
    g.save(tmp_path / "g")
    h = CoocGraph.load(tmp_path / "g")
    assert h.window == 2
    assert (h.transition, h.complementary, h.popularity) == (g.transition, g.complementary, g.popularity)
    lines = (tmp_path / "g" / "transition.tsv").read_text(encoding="utf-8").splitlines()
    assert lines == sorted(lines) and all(len(x.split("\t")) == 3 for x in lines)


class TestBucketize:
    def test_examples(self):
        assert bucketize(0) == 0
        assert bucketize(1) == 1
        assert bucketize(2 ** 31) == 31
        assert bucketize(2 ** 40) == 31

    def test_powers_of_two_boundaries(self):
        for k in range(1, 31):
            assert bucketize(2 ** k - 1) == k
            assert bucketize(2 ** k - 2) == k - 1

    def test_monotone_total(self):
        c = np.arange(0, 5000)
        b = bucketize(c)
        assert np.all(np.diff(b) >= 0) and b.min() == 0 and b.max() <= 31

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            bucketize(-1)


def test_relation_index_matches_graph():
    rng = np.random.default_rng(0)
    seqs = [[(f"i{x}", f"a{x % 3}") for x in rng.integers(0, 8, size=6)] for _ in range(10)]
    g = build(seqs, 2)
    items, attrs = FeatureVocab(f"i{x}" for x in range(8)), FeatureVocab(f"a{x}" for x in range(3))
    idx = RelationIndex(g, items, attrs)
    bi, ba = rng.integers(2, 10, size=(4, 5)), rng.integers(2, 5, size=(4, 5))
    ri, ra = rng.integers(2, 10, size=(4, 1)), rng.integers(2, 5, size=(4, 1))
    got = idx.relation_counts(bi, ba, ri, ra)
    for n in range(4):
        for t in range(5):
            r = g.relation(items.token(bi[n, t]), items.token(ri[n, 0]),
                           attrs.token(ba[n, t]), attrs.token(ra[n, 0]))
            assert tuple(got[n, t]) == (r.r_t, r.r_c, r.r_p)


class TestRelevance:
    def test_zero_mlp_gives_half(self):
        mlp = MLP(6, [4, 1], np.random.default_rng(0))
        for lin in mlp.layers:
            lin.zero_()
        out = relevance_score(mlp, T.Tensor(np.random.default_rng(1).normal(size=(3, 6))))
        np.testing.assert_array_equal(out.data, 0.5)

    def test_range_and_determinism(self):
        b = np.random.default_rng(0).integers(0, 32, size=(4, 7, 3))
        a = RelevanceScorer(8, np.random.default_rng(5))(b).data
        c = RelevanceScorer(8, np.random.default_rng(5))(b).data
        assert a.shape == (4, 7)
        assert np.all((a > 0) & (a < 1))
        assert np.array_equal(a, c)


# timeline rows: (user, item, attr, ts); users interleave in time
logs = st.lists(st.tuples(st.sampled_from("uvw"), tokens, st.sampled_from("PQR"), st.integers(0, 20)),
                max_size=25)


def log_sequences(rows, before=None):
    by_user = {}
    for u, i, a, ts in sorted(rows, key=lambda r: r[3]):
        if before is None or ts < before:
            by_user.setdefault(u, []).append((i, a))
    return list(by_user.values())


@settings(max_examples=100, deadline=None)
@given(logs, st.integers(1, 4))
def test_timeline_final_graph_matches_build(rows, window):
    g = GraphTimeline(rows, window).graph()
    t, c, p = oracle(log_sequences(rows), window)
    assert g.transition == t and g.complementary == c and g.popularity == p


@settings(max_examples=100, deadline=None)
@given(logs, st.lists(st.integers(0, 22), min_size=1, max_size=6), st.integers(1, 3))
def test_timeline_counts_only_see_the_past(rows, times, window):
    beh = [("a", "P"), ("b", "Q"), ("c", "R")]
    refs = [("d", "P"), ("a", "Q")]
    out = GraphTimeline(rows, window).relation_counts([(t, beh, refs) for t in times], 4)
    assert out.shape == (len(times), 2, 4, 3)
    for q, t in enumerate(times):
        tr, co, po = oracle(log_sequences(rows, before=t), window)
        for r, (ri, ra) in enumerate(refs):
            for k, (i, a) in enumerate(beh):
                assert list(out[q, r, k]) == [tr[i, ri], co[a, ra], po[a, ri]]
        assert not out[q, :, 3].any()


def test_timeline_keeps_newest_behaviors():
    rows = [("u", "a", "P", 0), ("u", "b", "Q", 1)]
    out = GraphTimeline(rows, 4).relation_counts([(5, [("x", "R"), ("a", "P")], [("b", "Q")])], 1)
    assert out[0, 0, 0].tolist() == [1, 1, 1]


def test_timeline_save_load(tmp_path):
    rows = [("u", "a", "P", 3), ("v", "b", "Q", 1), ("u", "c", "R", 7)]
    tl = GraphTimeline(rows, 2)
    tl.save(tmp_path / "t.tsv")
    back = GraphTimeline.load(tmp_path / "t.tsv", 2)
    assert back.log == tl.log and back.graph().transition == tl.graph().transition
