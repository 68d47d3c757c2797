"""Samples -> dense id arrays, and minibatches over them."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .data import InteractionSample
from .eiem import augment, extract_ids
from .embedding import FeatureVocab, pad_sequence
from .graph import CoocGraph, GraphTimeline, RelationIndex, bucketize
from .model import VocabSizes


@dataclass
class Vocabs:
    items: FeatureVocab
    attrs: FeatureVocab
    profile: list[FeatureVocab]
    context: list[FeatureVocab]

    @classmethod
    def fit(cls, samples: Sequence[InteractionSample], graph: CoocGraph | None = None) -> "Vocabs":
        """Vocabularies from training samples (plus graph nodes, if given)."""
        items, attrs = FeatureVocab(), FeatureVocab()
        n_prof = max((len(s.profile) for s in samples), default=0)
        n_ctx = max((len(s.context) for s in samples), default=0)
        profile = [FeatureVocab() for _ in range(n_prof)]
        context = [FeatureVocab() for _ in range(n_ctx)]
        for s in samples:
            for i, a, _ in s.behaviors:
                items.add(i)
                attrs.add(a)
            items.add(s.trigger[0])
            attrs.add(s.trigger[1])
            items.add(s.target[0])
            attrs.add(s.target[1])
            for voc, tok in zip(profile, s.profile):
                voc.add(tok)
            for voc, tok in zip(context, s.context):
                voc.add(tok)
        if graph is not None:
            for a, b in sorted(graph.transition):
                items.add(a)
                items.add(b)
            for a, b in sorted(graph.complementary):
                attrs.add(a)
                attrs.add(b)
        return cls(items, attrs, profile, context)

    @property
    def sizes(self) -> VocabSizes:
        return VocabSizes(len(self.items), len(self.attrs),
                          tuple(len(v) for v in self.profile), tuple(len(v) for v in self.context))

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.items.save(d / "items.vocab")
        self.attrs.save(d / "attrs.vocab")
        for k, v in enumerate(self.profile):
            v.save(d / f"profile{k}.vocab")
        for k, v in enumerate(self.context):
            v.save(d / f"context{k}.vocab")

    @classmethod
    def load(cls, directory) -> "Vocabs":
        d = Path(directory)

        def many(prefix):
            out, k = [], 0
            while (d / f"{prefix}{k}.vocab").exists():
                out.append(FeatureVocab.load(d / f"{prefix}{k}.vocab"))
                k += 1
            return out

        return cls(FeatureVocab.load(d / "items.vocab"), FeatureVocab.load(d / "attrs.vocab"),
                   many("profile"), many("context"))


@dataclass
class Batch:
    """Id arrays for a set of samples.  Shapes: [N], [N, fields], [N, T], [N, T, 3]."""
    profile: np.ndarray
    context: np.ndarray
    trig_item: np.ndarray
    trig_attr: np.ndarray
    tgt_item: np.ndarray
    tgt_attr: np.ndarray
    beh_item: np.ndarray
    beh_attr: np.ndarray
    beh_mask: np.ndarray
    exp_item: np.ndarray
    exp_attr: np.ndarray
    exp_mask: np.ndarray
    rel_tr: np.ndarray
    rel_ta: np.ndarray
    label: np.ndarray
    same_attr: np.ndarray
    aug_item: np.ndarray | None = None
    aug_attr: np.ndarray | None = None
    aug_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return self.label.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(**{f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[idx])
                        for f in fields(self)})

    def with_augmentation(self, gamma: float, rng: np.random.Generator) -> "Batch":
        items, attrs, mask = augment(self.exp_item, self.exp_attr, self.exp_mask, gamma, rng)
        return replace(self, aug_item=items, aug_attr=attrs, aug_mask=mask)


def encode(samples: Sequence[InteractionSample], vocabs: Vocabs, graph: CoocGraph | None,
           cfg: TrainConfig, timeline: GraphTimeline | None = None) -> Batch:
    """Id arrays for ``samples``.  With a ``timeline`` the relation counts of each
    sample are taken as of its own timestamp instead of from ``graph``."""
    n, t_len = len(samples), cfg.seq_len
    items, attrs = vocabs.items, vocabs.attrs
    profile = np.array([[v.id(tok) for v, tok in zip(vocabs.profile, s.profile)] for s in samples],
                       dtype=np.int64).reshape(n, len(vocabs.profile))
    context = np.array([[v.id(tok) for v, tok in zip(vocabs.context, s.context)] for s in samples],
                       dtype=np.int64).reshape(n, len(vocabs.context))
    trig_item = np.array(items.ids(s.trigger[0] for s in samples), dtype=np.int64)
    trig_attr = np.array(attrs.ids(s.trigger[1] for s in samples), dtype=np.int64)
    tgt_item = np.array(items.ids(s.target[0] for s in samples), dtype=np.int64)
    tgt_attr = np.array(attrs.ids(s.target[1] for s in samples), dtype=np.int64)
    beh_item = np.zeros((n, t_len), dtype=np.int64)
    beh_attr = np.zeros((n, t_len), dtype=np.int64)
    beh_mask = np.zeros((n, t_len), dtype=bool)
    for r, s in enumerate(samples):
        beh_item[r], beh_mask[r] = pad_sequence(items.ids(b[0] for b in s.behaviors), t_len)
        beh_attr[r], _ = pad_sequence(attrs.ids(b[1] for b in s.behaviors), t_len)
    # explicit-sequence matching compares attribute ids; unseen attributes all map to
    # the unknown id and so count as matching each other
    exp_item, exp_attr, exp_mask = extract_ids(beh_item, beh_attr, beh_mask,
                                               trig_item, trig_attr, cfg.l_max)
    if timeline is not None:
        queries = [(s.timestamp, [(i, a) for i, a, _ in s.behaviors], [s.trigger[:2], s.target[:2]])
                   for s in samples]
        counts = timeline.relation_counts(queries, t_len).reshape(n, 2, t_len, 3)
        rel_tr, rel_ta = bucketize(counts[:, 0]), bucketize(counts[:, 1])
    elif graph is not None:
        index = RelationIndex(graph, items, attrs)
        rel_tr = bucketize(index.relation_counts(beh_item, beh_attr, trig_item[:, None],
                                                 trig_attr[:, None]))
        rel_ta = bucketize(index.relation_counts(beh_item, beh_attr, tgt_item[:, None],
                                                 tgt_attr[:, None]))
    else:
        rel_tr = np.zeros((n, t_len, 3), dtype=np.int64)
        rel_ta = np.zeros((n, t_len, 3), dtype=np.int64)
    label = np.array([s.label for s in samples], dtype=np.float64)
    same_attr = np.array([s.target[1] == s.trigger[1] for s in samples], dtype=bool)
    return Batch(profile, context, trig_item, trig_attr, tgt_item, tgt_attr, beh_item, beh_attr,
                 beh_mask, exp_item, exp_attr, exp_mask, rel_tr.reshape(n, t_len, 3),
                 rel_ta.reshape(n, t_len, 3), label, same_attr)


def iterate_minibatches(data: Batch, batch_size: int, rng: np.random.Generator | None = None,
                        min_size: int = 1):
    """Yield (batch_index, Batch); shuffled when ``rng`` is given."""
    n = len(data)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for k, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        if idx.size < min_size:
            continue
        yield k, data.take(idx)
