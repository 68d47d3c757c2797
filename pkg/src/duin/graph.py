"""Directed co-occurrence graph over items and attributes.

Three count stores are kept, all keyed by ordered pairs:

* transition   item -> item
* complementary attribute -> attribute
* popularity   attribute -> item

A sequence contributes one count per ordered pair (p, p + o) with
``1 <= o <= window``.
"""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .embedding import EmbeddingTable, FeatureVocab
from .nn import MLP, Module
from .tensor import Tensor

N_BUCKETS = 32
TIMELINE_FILE = "timeline.tsv"
VIEW_FILES = {
    "transition": "transition.tsv",
    "complementary": "complementary.tsv",
    "popularity": "popularity.tsv",
}


@dataclass(frozen=True)
class RelationTriple:
    r_t: int
    r_c: int
    r_p: int


@dataclass
class CoocGraph:
    window: int = 4
    transition: Counter = field(default_factory=Counter)
    complementary: Counter = field(default_factory=Counter)
    popularity: Counter = field(default_factory=Counter)

    def add_sequence(self, seq: Sequence[tuple[str, str]]) -> None:
        """Count one time-ordered sequence of (item, attribute) pairs."""
        n = len(seq)
        tr, co, po = self.transition, self.complementary, self.popularity
        for p in range(n):
            item_p, attr_p = seq[p]
            for q in range(p + 1, min(n, p + self.window + 1)):
                item_q, attr_q = seq[q]
                tr[item_p, item_q] += 1
                co[attr_p, attr_q] += 1
                po[attr_p, item_q] += 1

    def merge(self, other: "CoocGraph") -> "CoocGraph":
        if other.window != self.window:
            raise ValueError(f"cannot merge graphs with windows {self.window} and {other.window}")
        return CoocGraph(self.window, self.transition + other.transition,
                         self.complementary + other.complementary,
                         self.popularity + other.popularity)

    def relation(self, i: str, j: str, attr_i: str, attr_j: str) -> RelationTriple:
        return RelationTriple(self.transition.get((i, j), 0),
                              self.complementary.get((attr_i, attr_j), 0),
                              self.popularity.get((attr_i, j), 0))

    @property
    def nodes(self) -> set[str]:
        out: set[str] = set()
        for store in (self.transition, self.complementary, self.popularity):
            for a, b in store:
                out.add(a)
                out.add(b)
        return out

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "meta.txt").write_text(f"window={self.window}\n", encoding="utf-8")
        for view, fname in VIEW_FILES.items():
            store = getattr(self, view)
            with open(d / fname, "w", encoding="utf-8", newline="\n") as fh:
                for (a, b) in sorted(store):
                    fh.write(f"{a}\t{b}\t{store[a, b]}\n")

    @classmethod
    def load(cls, directory) -> "CoocGraph":
        d = Path(directory)
        g = cls()
        meta = d / "meta.txt"
        if meta.exists():
            g.window = int(meta.read_text(encoding="utf-8").strip().split("=", 1)[1])
        for view, fname in VIEW_FILES.items():
            store = getattr(g, view)
            for line in (d / fname).read_text(encoding="utf-8").splitlines():
                if not line:
                    continue
                a, b, c = line.split("\t")
                store[a, b] = int(c)
        return g


def build(sequences: Iterable[Sequence[tuple[str, str]]], window: int = 4) -> CoocGraph:
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    g = CoocGraph(window)
    for seq in sequences:
        g.add_sequence(seq)
    return g


class GraphTimeline:
    """A behavior log replayed in time order, so counts can be read as of any
    moment.  A query at time t sees only events with timestamp < t; once every
    event is replayed the counts equal ``build`` over the same per-user
    sequences.

    ``log`` holds (user, item, attribute, timestamp) rows; rows of one user
    must already be in time order (ties keep their given order).
    """

    def __init__(self, log: Iterable[tuple[str, str, str, int]], window: int = 4):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self.log = sorted(log, key=lambda r: r[3])

    def graph(self) -> CoocGraph:
        g = CoocGraph(self.window)
        self._replay(g, {}, 0, len(self.log))
        return g

    def _replay(self, g: CoocGraph, recent: dict, start: int, stop: int) -> None:
        tr, co, po = g.transition, g.complementary, g.popularity
        for user, item, attr, _ in self.log[start:stop]:
            prev = recent.setdefault(user, [])
            for p_item, p_attr in prev:
                tr[p_item, item] += 1
                co[p_attr, attr] += 1
                po[p_attr, item] += 1
            prev.append((item, attr))
            if len(prev) > self.window:
                del prev[0]

    def relation_counts(self, queries: Sequence[tuple], length: int) -> np.ndarray:
        """Counts as of each query's time.

        ``queries`` are (t, behaviors, refs) with behaviors a list of
        (item, attr) pairs (the newest ``length`` are used, left aligned) and
        refs a list of R reference (item, attr) pairs.  Returns an int64 array
        [N, R, length, 3] in view order (transition, complementary, popularity),
        zero at unused positions.
        """
        n_refs = max((len(q[2]) for q in queries), default=0)
        out = np.zeros((len(queries), n_refs, length, 3), dtype=np.int64)
        g, recent, pos = CoocGraph(self.window), {}, 0
        times = [r[3] for r in self.log]
        for qi in sorted(range(len(queries)), key=lambda k: queries[k][0]):
            t, beh, refs = queries[qi]
            stop = bisect.bisect_left(times, t, lo=pos)
            self._replay(g, recent, pos, stop)
            pos = stop
            tr, co, po = g.transition, g.complementary, g.popularity
            beh = list(beh)[-length:] if length > 0 else []
            for r, (ref_item, ref_attr) in enumerate(refs):
                row = out[qi, r]
                for k, (item, attr) in enumerate(beh):
                    row[k, 0] = tr.get((item, ref_item), 0)
                    row[k, 1] = co.get((attr, ref_attr), 0)
                    row[k, 2] = po.get((attr, ref_item), 0)
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for user, item, attr, ts in self.log:
                fh.write(f"{user}\t{item}\t{attr}\t{ts}\n")

    @classmethod
    def load(cls, path, window: int) -> "GraphTimeline":
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                u, i, a, t = line.split("\t")
                rows.append((u, i, a, int(t)))
        return cls(rows, window)


def bucketize(counts):
    """floor(log2(1 + c)) clamped to [0, 31]; works on scalars and arrays."""
    c = np.asarray(counts)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    # frexp exponent is exact for integers, unlike log2 near powers of two
    _, e = np.frexp(c.astype(np.float64) + 1.0)
    out = np.minimum(e - 1, N_BUCKETS - 1).astype(np.int64)
    return int(out) if out.ndim == 0 else out


class RelationIndex:
    """Vectorized count lookups keyed by vocabulary ids.

    Pairs are packed into one int64 key (src * base + dst) and looked up with
    a binary search over the sorted key array.
    """

    def __init__(self, graph: CoocGraph, items: FeatureVocab, attrs: FeatureVocab):
        self.base = max(len(items), len(attrs))
        self._views = {
            "transition": self._pack(graph.transition, items, items),
            "complementary": self._pack(graph.complementary, attrs, attrs),
            "popularity": self._pack(graph.popularity, attrs, items),
        }

    def _pack(self, store, src_vocab, dst_vocab):
        keys, vals = [], []
        for (a, b), c in store.items():
            if a in src_vocab and b in dst_vocab:
                keys.append(src_vocab.id(a) * self.base + dst_vocab.id(b))
                vals.append(c)
        keys = np.asarray(keys, dtype=np.int64)
        order = np.argsort(keys, kind="stable")
        return keys[order], np.asarray(vals, dtype=np.int64)[order]

    def _get(self, view: str, src, dst) -> np.ndarray:
        keys, vals = self._views[view]
        q = np.asarray(src, dtype=np.int64) * self.base + np.asarray(dst, dtype=np.int64)
        if keys.size == 0:
            return np.zeros(q.shape, dtype=np.int64)
        pos = np.clip(np.searchsorted(keys, q), 0, keys.size - 1)
        return np.where(keys[pos] == q, vals[pos], 0)

    def relation_counts(self, beh_item, beh_attr, ref_item, ref_attr) -> np.ndarray:
        """Counts (transition, complementary, popularity) stacked on a new last axis.

        ``ref_*`` broadcast against ``beh_*`` (e.g. [N, 1] against [N, T]).
        """
        return np.stack([
            self._get("transition", beh_item, ref_item),
            self._get("complementary", beh_attr, ref_attr),
            self._get("popularity", beh_attr, ref_item),
        ], axis=-1)


class RelevanceScorer(Module):
    """Sigmoid(MLP(E(transition), E(popularity), E(complementary))) per pair.

    Input is an integer array [..., 3] of bucket ids in the stored view order
    (transition, complementary, popularity); output has shape [...].
    """

    def __init__(self, dim: int, rng: np.random.Generator, hidden: int = 72):
        self.emb_t = EmbeddingTable(N_BUCKETS, dim, rng, padding=False)
        self.emb_c = EmbeddingTable(N_BUCKETS, dim, rng, padding=False)
        self.emb_p = EmbeddingTable(N_BUCKETS, dim, rng, padding=False)
        self.mlp = MLP(3 * dim, [hidden, 1], rng)

    def __call__(self, buckets: np.ndarray) -> Tensor:
        x = T.concat([self.emb_t(buckets[..., 0]), self.emb_p(buckets[..., 2]),
                      self.emb_c(buckets[..., 1])], axis=-1)
        return relevance_score(self.mlp, x)


def relevance_score(mlp: MLP, triple_embeds: Tensor) -> Tensor:
    logit = mlp(triple_embeds)
    return T.sigmoid(T.squeeze(logit, -1))
