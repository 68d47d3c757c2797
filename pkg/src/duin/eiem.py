"""Explicit intent: trigger-anchored attribute sequences, contrastive encoding,
and the target-interaction MLP."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .embedding import PAD_ID
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor

NEGATIVE_MODES = ("others", "all_views")


def extract(behaviors: Sequence[tuple], trigger: tuple, l_max: int) -> list[tuple]:
    """Trigger followed by the newest ``l_max`` behaviors sharing its attribute.

    ``behaviors`` is time-ordered (oldest first) and holds (item, attr, ...)
    tuples; ``trigger`` is (item, attr).  Matches come newest first.
    """
    attr = trigger[1]
    out = [tuple(trigger)]
    for b in reversed(behaviors):
        if len(out) > l_max:
            break
        if b[1] == attr:
            out.append(tuple(b))
    return out


def extract_ids(beh_item: np.ndarray, beh_attr: np.ndarray, beh_mask: np.ndarray,
                trig_item: np.ndarray, trig_attr: np.ndarray, l_max: int):
    """Batched :func:`extract` on id arrays.

    Inputs are [N, T] behaviors (oldest first, right padded) and [N] triggers.
    Returns item ids, attribute ids and mask, each [N, 1 + l_max].
    """
    n = beh_item.shape[0]
    items = np.zeros((n, 1 + l_max), dtype=np.int64)
    attrs = np.zeros((n, 1 + l_max), dtype=np.int64)
    mask = np.zeros((n, 1 + l_max), dtype=bool)
    items[:, 0], attrs[:, 0], mask[:, 0] = trig_item, trig_attr, True
    hit = beh_mask & (beh_attr == trig_attr[:, None])
    for r in range(n):
        idx = np.flatnonzero(hit[r])[::-1][:l_max]
        k = idx.size
        items[r, 1:1 + k] = beh_item[r, idx]
        attrs[r, 1:1 + k] = beh_attr[r, idx]
        mask[r, 1:1 + k] = True
    return items, attrs, mask


def augment(items: np.ndarray, attrs: np.ndarray, mask: np.ndarray, gamma: float,
            rng: np.random.Generator):
    """Mask each non-trigger position independently with probability ``gamma``.

    Works on single sequences ([L]) or batches ([N, L]); position 0 (the
    trigger) is never masked.  Masked slots become padding.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"mask probability must be in [0, 1], got {gamma}")
    drop = rng.random(mask.shape) < gamma
    drop[..., 0] = False
    keep = mask & ~drop
    return np.where(keep, items, PAD_ID), np.where(keep, attrs, PAD_ID), keep


class SequenceEncoder(Module):
    """One post-norm transformer block plus a masked mean pool."""

    def __init__(self, d_h: int, max_len: int, n_heads: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(d_h)
        self.pos = T.parameter(rng.uniform(-bound, bound, size=(max_len, d_h)))
        self.attn = MultiHeadAttention(d_h, n_heads, rng)
        self.norm1 = LayerNorm(d_h)
        self.ff1 = Linear(d_h, d_h, rng)
        self.ff2 = Linear(d_h, d_h, rng)
        self.norm2 = LayerNorm(d_h)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """x [B, L, d_h], mask [B, L] -> [B, d_h]"""
        length = x.shape[1]
        h = x + self.pos[:length]
        h = self.norm1(h + self.attn(h, h, h, mask))
        h = self.norm2(h + self.ff2(T.relu(self.ff1(h))))
        w = mask.astype(h.data.dtype)
        w = w / np.maximum(w.sum(axis=1, keepdims=True), 1.0)
        return T.sum_(h * w[:, :, None], axis=1)


def cosine_matrix(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    an = a / T.sqrt(T.sum_(a * a, axis=-1, keepdims=True) + eps)
    bn = b / T.sqrt(T.sum_(b * b, axis=-1, keepdims=True) + eps)
    return T.matmul(an, T.transpose(bn))


def ssl_loss(anchors: Tensor, positives: Tensor, tau: float, negatives: str = "others") -> Tensor:
    """InfoNCE over in-batch views with cosine similarity.

    For anchor i the positive is positives[i].  ``negatives="others"`` uses
    the 2B-2 views of the other samples; ``"all_views"`` sums over all 2B-1
    views besides the anchor itself, so the positive also appears among them.
    """
    b = anchors.shape[0]
    if b < 2:
        raise T.ContractError(f"contrastive loss needs at least 2 samples, got {b}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if negatives not in NEGATIVE_MODES:
        raise ValueError(f"negatives must be one of {NEGATIVE_MODES}")
    sim_aa = cosine_matrix(anchors, anchors) / tau
    sim_ap = cosine_matrix(anchors, positives) / tau
    eye = np.eye(b, dtype=bool)
    pos = T.sum_(T.where(eye, sim_ap, 0.0), axis=1)
    cols = [sim_aa, sim_ap]
    keep = [~eye, np.ones((b, b), dtype=bool)]
    if negatives == "all_views":
        cols.append(T.unsqueeze(pos, 1))
        keep.append(np.ones((b, 1), dtype=bool))
    logits = T.concat(cols, axis=1)
    lse = T.logsumexp(logits, axis=1, mask=np.concatenate(keep, axis=1))
    return T.mean(lse - pos)


def n_negatives(batch_size: int, negatives: str = "others") -> int:
    return 2 * batch_size - 2 if negatives == "others" else 2 * batch_size - 1


class FeatureInteraction(Module):
    """MLP over [h, e, h*e, h-e]."""

    def __init__(self, d_h: int, sizes: Sequence[int], rng: np.random.Generator):
        self.mlp = MLP(4 * d_h, sizes, rng, final_activation=True)
        self.d_out = sizes[-1]

    def __call__(self, h_ei: Tensor, e_ta: Tensor) -> Tensor:
        if h_ei.shape != e_ta.shape:
            raise T.DimensionError(f"interaction inputs differ: {h_ei.shape} vs {e_ta.shape}")
        return self.mlp(T.concat([h_ei, e_ta, h_ei * e_ta, h_ei - e_ta], axis=-1))
