"""Latent intent: self-attention over behaviors, then cross-attention against
the trigger and the target with keys and values scaled by graph relevance."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .graph import RelevanceScorer
from .nn import Linear, Module, MultiHeadAttention, merge_heads, scaled_dot_attention, split_heads
from .tensor import Tensor


class BehaviorRefiner(Module):
    """Masked multi-head self-attention; padded rows come out as zeros."""

    def __init__(self, d_h: int, n_heads: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d_h, n_heads, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        out = self.attn(x, x, x, mask)
        return out * mask[..., None].astype(out.data.dtype)


class ModulatedAttention(Module):
    """Single-query multi-head attention whose keys and values are the
    behavior rows scaled by their relevance score.

    Projections carry no bias, so a zero relevance removes a row entirely.
    """

    def __init__(self, d_h: int, n_heads: int, rng: np.random.Generator):
        self.n_heads = n_heads
        self.wq = Linear(d_h, d_h, rng, bias=False)
        self.wk = Linear(d_h, d_h, rng, bias=False)
        self.wv = Linear(d_h, d_h, rng, bias=False)
        self.wo = Linear(d_h, d_h, rng, bias=False)

    def __call__(self, query: Tensor, behaviors: Tensor, mask: np.ndarray,
                 pi: Tensor | None) -> Tensor:
        """query [B, d_h], behaviors [B, T, d_h], mask [B, T], pi [B, T] -> [B, d_h]"""
        kv = behaviors if pi is None else behaviors * T.unsqueeze(pi, -1)
        return self.attend(query, kv, mask)

    def attend(self, query: Tensor, kv: Tensor, mask: np.ndarray) -> Tensor:
        b, d = query.shape
        q = split_heads(self.wq(query).reshape(b, 1, d), self.n_heads)
        k = split_heads(self.wk(kv), self.n_heads)
        v = split_heads(self.wv(kv), self.n_heads)
        out, _ = scaled_dot_attention(q, k, v, mask[:, None, None, :])
        return self.wo(merge_heads(out)).reshape(b, d)


class LatentIntent(Module):
    def __init__(self, d_h: int, d_rel: int, n_heads: int, rng: np.random.Generator,
                 rel_hidden: int = 72):
        self.refine = BehaviorRefiner(d_h, n_heads, rng)
        self.scorer = RelevanceScorer(d_rel, rng, rel_hidden)
        self.trigger_attn = ModulatedAttention(d_h, n_heads, rng)
        self.target_attn = ModulatedAttention(d_h, n_heads, rng)

    def score(self, buckets: np.ndarray, mask: np.ndarray) -> Tensor:
        """Relevance per behavior position; padded positions get exactly 0."""
        return self.scorer(buckets) * mask.astype(T.get_default_dtype())

    def __call__(self, e_trigger: Tensor, e_target: Tensor, behaviors: Tensor, mask: np.ndarray,
                 rel_trigger: np.ndarray, rel_target: np.ndarray, use_trigger: bool = True):
        refined = self.refine(behaviors, mask)
        pi_ta = self.score(rel_target, mask)
        h_ta = self.target_attn(e_target, refined, mask, pi_ta)
        if use_trigger:
            pi_tr = self.score(rel_trigger, mask)
            h_tr = self.trigger_attn(e_trigger, refined, mask, pi_tr)
        else:
            h_tr = T.zeros(h_ta.shape)
        return h_tr, h_ta
