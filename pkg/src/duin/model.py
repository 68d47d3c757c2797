"""The full network: embeddings, the three intent modules and the prediction head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .eiem import FeatureInteraction, SequenceEncoder, ssl_loss
from .embedding import EmbeddingTable
from .iumm import IntensityHeads, StaticIntensity, gate, sample_intensity
from .liem import LatentIntent
from .nn import MLP, Module
from .tensor import Tensor


@dataclass
class VocabSizes:
    items: int
    attrs: int
    profile: tuple[int, ...]
    context: tuple[int, ...]


@dataclass
class ForwardOutput:
    logits: Tensor
    anchors: Tensor | None = None
    positives: Tensor | None = None
    z_raw: Tensor | None = None

    @property
    def probs(self) -> Tensor:
        return T.sigmoid(self.logits)


class DUIN(Module):
    def __init__(self, cfg: TrainConfig, sizes: VocabSizes, seed: int | None = None):
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        d, d_h = cfg.dim, cfg.d_h
        self.cfg, self.sizes = cfg, sizes
        self.item_emb = EmbeddingTable(sizes.items, d, rng)
        self.attr_emb = EmbeddingTable(sizes.attrs, d, rng)
        self.profile_emb = [EmbeddingTable(n, d, rng) for n in sizes.profile]
        self.context_emb = [EmbeddingTable(n, d, rng) for n in sizes.context]
        self.encoder = SequenceEncoder(d_h, 1 + cfg.l_max, cfg.n_heads, rng)
        self.interaction = FeatureInteraction(d_h, cfg.eiem_hidden, rng)
        self.latent = LatentIntent(d_h, d, cfg.n_heads, rng, cfg.rel_hidden)
        d_x = d_h + d * (len(sizes.profile) + len(sizes.context))
        self.intensity = IntensityHeads(d_x, d_h, cfg.iumm_hidden, rng)
        self.static_intensity = StaticIntensity(d_x, rng)
        d_head = (d_h + cfg.eiem_hidden[-1] + 2 * d_h
                  + d * (len(sizes.context) + len(sizes.profile)) + d_h)
        self.head = MLP(d_head, [*cfg.head_hidden, 1], rng)
        self.d_head = d_head

    def item_repr(self, items, attrs) -> Tensor:
        return T.concat([self.item_emb(items), self.attr_emb(attrs)], axis=-1)

    def _fields(self, tables, ids: np.ndarray, slot: str) -> Tensor:
        if ids.shape[-1] != len(tables):
            raise T.DimensionError(f"{slot}: expected {len(tables)} fields, got {ids.shape[-1]}")
        return T.concat([tab(ids[:, k]) for k, tab in enumerate(tables)], axis=-1)

    def forward(self, batch, mode: str = "infer", rng: np.random.Generator | None = None,
                eps: np.ndarray | None = None) -> ForwardOutput:
        """Score a batch.  ``mode="train"`` samples the intensity and encodes
        the augmented views when the contrastive task is on."""
        cfg = self.cfg
        b = batch.label.shape[0]
        d_h = cfg.d_h
        e_tr = self.item_repr(batch.trig_item, batch.trig_attr)
        e_ta = self.item_repr(batch.tgt_item, batch.tgt_attr)
        u_p = self._fields(self.profile_emb, batch.profile, "profile")
        u_c = self._fields(self.context_emb, batch.context, "context")
        out = ForwardOutput(logits=None)

        if cfg.use_eiem:
            h_ei = self.encoder(self.item_repr(batch.exp_item, batch.exp_attr), batch.exp_mask)
            h_i = self.interaction(h_ei, e_ta)
            if mode == "train" and cfg.ssl_active and batch.aug_item is not None:
                out.anchors = h_ei
                out.positives = self.encoder(
                    self.item_repr(batch.aug_item, batch.aug_attr), batch.aug_mask)
        else:
            h_ei = T.zeros((b, d_h))
            h_i = T.zeros((b, cfg.eiem_hidden[-1]))

        if cfg.no_liem:
            h_li = T.zeros((b, 2 * d_h))
        else:
            beh = self.item_repr(batch.beh_item, batch.beh_attr)
            h_tr, h_ta = self.latent(e_tr, e_ta, beh, batch.beh_mask, batch.rel_tr, batch.rel_ta,
                                     use_trigger=not cfg.trigger_agnostic)
            if cfg.no_iumm:
                h_li = T.concat([h_tr, h_ta], axis=-1)
            else:
                e_x = T.zeros(e_tr.shape) if cfg.trigger_agnostic else e_tr
                x_u = T.concat([e_x, u_c, u_p], axis=-1)
                if cfg.sii:
                    z_raw = self.static_intensity(x_u)
                else:
                    dist = self.intensity(x_u)
                    sample_mode = "train" if (mode == "train" or cfg.sample_at_infer) else "infer"
                    z_raw = sample_intensity(dist, rng, sample_mode, eps)
                out.z_raw = z_raw
                h_li = gate(z_raw, h_tr, h_ta, cfg.squash)

        parts = [h_ei, h_i, h_li, u_c, u_p, e_ta]
        x = T.concat(parts, axis=-1)
        if x.shape[-1] != self.d_head:
            raise T.DimensionError(f"head input width {x.shape[-1]} != {self.d_head}")
        out.logits = T.squeeze(self.head(x), -1)
        return out

    __call__ = forward

    def loss(self, batch, mode: str = "train", rng=None, eps=None):
        """Returns (final, ctr, ssl) losses; ssl is None when inactive."""
        out = self.forward(batch, mode, rng, eps)
        l_ctr = bce_with_logits(out.logits, batch.label)
        l_ssl = None
        if out.anchors is not None:
            l_ssl = ssl_loss(out.anchors, out.positives, self.cfg.tau, self.cfg.ssl_negatives)
        return final_loss(l_ctr, l_ssl, self.cfg.alpha), l_ctr, l_ssl

    def predict(self, batch) -> np.ndarray:
        with T.no_grad():
            return self.forward(batch, "infer").probs.data.astype(np.float64)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross entropy, evaluated as softplus(x) - y*x."""
    y = np.asarray(labels, dtype=logits.data.dtype)
    return T.mean(T.softplus(logits) - logits * y)


def bce_loss(probs, labels) -> float:
    """Reference BCE on probabilities (no gradient); for checks and reports."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def final_loss(l_ctr, l_ssl, alpha: float):
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if l_ssl is None or alpha == 0:
        return l_ctr
    return l_ctr + alpha * l_ssl
