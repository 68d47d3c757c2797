"""Ranking metrics: AUC, RelaImpr and a one-sided rank-sum test."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    pass


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    # start index of each run of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties credited 0.5.

    Computed from the rank sum of the positives, O(n log n).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes (pos={n_pos}, neg={n_neg})")
    r = _average_ranks(s)
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def relaimpr(auc_model: float, auc_base: float) -> float:
    """Relative improvement of (AUC - 0.5) over the base model, in percent."""
    if auc_base == 0.5:
        raise UndefinedMetricError("RelaImpr is undefined for a base AUC of 0.5")
    return ((auc_model - 0.5) / (auc_base - 0.5) - 1.0) * 100.0


def ranksum_pvalue(treatment: Sequence[float], control: Sequence[float]) -> float:
    """Exact one-sided rank-sum p-value for H1: treatment > control.

    Enumerates every assignment of the pooled ranks to the treatment group,
    so it is only meant for small samples (5 vs 5 runs is 252 assignments).
    """
    x = np.asarray(treatment, dtype=np.float64)
    y = np.asarray(control, dtype=np.float64)
    pooled = np.concatenate([x, y])
    ranks = _average_ranks(pooled)
    observed = ranks[:len(x)].sum()
    total = hits = 0
    for group in combinations(range(len(pooled)), len(x)):
        total += 1
        if ranks[list(group)].sum() >= observed - 1e-9:
            hits += 1
    return hits / total


@dataclass
class EvalReport:
    auc: float
    n_pos: int
    n_neg: int
    relaimpr: float | None = None
    base_name: str | None = None
    segments: dict[str, float | None] = field(default_factory=dict)
    pair_counts: dict[str, int] = field(default_factory=dict)


def evaluate(scores, labels, same_attr=None, base_auc: float | None = None,
             base_name: str | None = None) -> EvalReport:
    """AUC plus per-segment AUCs split by whether the target shares the
    trigger's attribute.  Pairs mixing segments are only counted in ``mixed``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    rep = EvalReport(auc=auc(s, y), n_pos=int(y.sum()), n_neg=int((~y).sum()))
    if base_auc is not None:
        rep.relaimpr = relaimpr(rep.auc, base_auc)
        rep.base_name = base_name
    if same_attr is not None:
        same = np.asarray(same_attr, dtype=bool)
        for name, sel in (("same_attr", same), ("cross_attr", ~same)):
            p, n = int((y & sel).sum()), int((~y & sel).sum())
            rep.pair_counts[name] = p * n
            rep.segments[name] = auc(s[sel], y[sel]) if p and n else None
        sp, sn = int((y & same).sum()), int((~y & same).sum())
        cp, cn = int((y & ~same).sum()), int((~y & ~same).sum())
        rep.pair_counts["mixed"] = sp * cn + cp * sn
    return rep
