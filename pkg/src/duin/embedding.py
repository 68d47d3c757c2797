"""Categorical feature vocabularies and trainable embedding tables."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .nn import Module
from .tensor import Tensor

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class FeatureVocab:
    """Raw token -> integer id.  Id 0 is padding, id 1 the shared unknown slot."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._ids: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        self._tokens: list[str] = [PAD_TOKEN, UNK_TOKEN]
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        token = str(token)
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._ids[token] = idx
            self._tokens.append(token)
        return idx

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token) -> bool:
        return str(token) in self._ids

    def id(self, token) -> int:
        return self._ids.get(str(token), UNK_ID)

    def ids(self, tokens: Iterable) -> list[int]:
        get = self._ids.get
        return [get(str(t), UNK_ID) for t in tokens]

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for idx, tok in enumerate(self._tokens):
                fh.write(f"{tok}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "FeatureVocab":
        vocab = cls()
        vocab._ids.clear()
        vocab._tokens.clear()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, idx = line.rsplit("\t", 1)
            if int(idx) != len(vocab._tokens):
                raise ValueError(f"{path}: ids must be dense and sorted, got {idx}")
            vocab._ids[tok] = int(idx)
            vocab._tokens.append(tok)
        if vocab._tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"{path}: first two entries must be {PAD_TOKEN} and {UNK_TOKEN}")
        return vocab


class EmbeddingTable(Module):
    """``vocab_size x dim`` trainable table.

    With ``padding=True`` row 0 is held at zero and never receives gradient.
    Tables for dense bucket ids (relation counts, positions) pass
    ``padding=False`` since their id 0 is a real value.
    """

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, padding: bool = True):
        bound = 1.0 / np.sqrt(dim)
        w = rng.uniform(-bound, bound, size=(vocab_size, dim))
        if padding:
            w[PAD_ID] = 0.0
        self.weight = T.parameter(w)
        self.padding_idx = PAD_ID if padding else None
        self.vocab_size, self.dim = vocab_size, dim

    def __call__(self, ids) -> Tensor:
        return lookup(self, ids)


def lookup(table: EmbeddingTable, ids) -> Tensor:
    """Gather rows; output shape is ``ids.shape + (dim,)``."""
    return T.embedding(table.weight, np.asarray(ids), table.padding_idx)


def pad_sequence(ids: Sequence[int], length: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the newest ``length`` ids, right-pad with 0; returns (ids, mask)."""
    ids = list(ids)[-length:] if length > 0 else []
    out = np.zeros(length, dtype=np.int64)
    mask = np.zeros(length, dtype=bool)
    out[:len(ids)] = ids
    mask[:len(ids)] = True
    return out, mask


def embed_sequence(table: EmbeddingTable, ids: Sequence[int], length: int) -> tuple[Tensor, np.ndarray]:
    padded, mask = pad_sequence(ids, length)
    return lookup(table, padded), mask
