"""Ablation matrix and hyper-parameter sweeps on synthetic sessions.

``ablation.csv`` columns: variant, model, flags, n_seeds, mean_auc, std_auc,
relaimpr, mean_epoch_s, status, aucs.  ``aucs`` lists the per-seed test AUCs
joined by ``;`` in seed order; ``relaimpr`` is against the trigger-agnostic
base row when the matrix has one.

``sweep_<param>.csv`` columns: value, seed, auc, mean_auc (the mean over
seeds, repeated on each row of that value).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import ConfigError, TrainConfig, valid_keys
from .data import BehaviorEvent, assemble_samples, behavior_log, split
from .dataset import Batch, Vocabs, encode
from .graph import CoocGraph, GraphTimeline
from .metrics import auc, relaimpr
from .synthetic import SyntheticSpec, generate
from .trainer import TrainingAborted, predict, train

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ("variant", "model", "flags", "n_seeds", "mean_auc", "std_auc", "relaimpr",
                    "mean_epoch_s", "status", "aucs")
SWEEP_PARAMS = ("tau", "gamma", "alpha")
BASE_VARIANT = "trigger_agnostic"

# rows 1..6 of the module ablation, then the base without any trigger signal
ABLATION_VARIANTS: tuple[tuple[str, dict], ...] = (
    ("full", {}),
    ("no_eiem", {"no_eiem": True}),
    ("no_liem", {"no_liem": True}),
    ("no_iumm", {"no_iumm": True}),
    ("no_ssl", {"no_ssl": True}),
    ("sii", {"sii": True}),
    (BASE_VARIANT, {"trigger_agnostic": True}),
)


def bench_config(**kw) -> TrainConfig:
    """Training settings used for the desk-scale matrix."""
    base = dict(dim=16, seq_len=20, batch_size=64, epochs=8, eval_batch_size=2048, log_every=50)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class PreparedData:
    train: Batch
    val: Batch
    test: Batch
    vocabs: Vocabs
    graph: CoocGraph


def prepare_dataset(events: Sequence[BehaviorEvent], profiles: dict, cfg: TrainConfig
                    ) -> PreparedData:
    """Samples, chronological split, graph from pre-validation behaviors, encoded arrays.

    Training samples see the graph as of their own timestamp when
    ``cfg.graph_counts`` is point_in_time, so a session's own later clicks never
    feed its relation features.
    """
    samples = assemble_samples(events, cfg, profiles)
    tr, va, te = split(samples)
    timeline = GraphTimeline(behavior_log(events, va[0].timestamp), cfg.window)
    graph = timeline.graph()
    vocabs = Vocabs.fit(tr, graph)
    pit = timeline if cfg.graph_counts == "point_in_time" else None
    enc = [encode(tr, vocabs, graph, cfg, pit)] + [encode(x, vocabs, graph, cfg) for x in (va, te)]
    return PreparedData(*enc, vocabs, graph)


@dataclass
class ExperimentMatrix:
    variants: list[tuple[str, dict]]
    seeds: tuple[int, ...]
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    cfg: TrainConfig = field(default_factory=bench_config)
    out_path: str | Path | None = None

    def __post_init__(self):
        names = [v[0] for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError(f"variant names must be unique: {names}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        keys = set(valid_keys())
        for name, flags in self.variants:
            unknown = sorted(set(flags) - keys)
            if unknown:
                raise ConfigError(f"variant {name}: unknown config keys {unknown}")


@dataclass
class VariantResult:
    name: str
    flags: dict
    aucs: list[float]
    epoch_seconds: list[float]
    error: str | None = None
    relaimpr: float | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.aucs)) if self.aucs and not self.failed else None

    @property
    def std(self) -> float | None:
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 and not self.failed else None


def _flag_text(flags: dict) -> str:
    return ",".join(k for k, v in flags.items() if v) or "-"


def run_variant(name: str, flags: dict, seeds, data: PreparedData, cfg: TrainConfig
                ) -> VariantResult:
    res = VariantResult(name, dict(flags), [], [])
    for seed in seeds:
        run_cfg = cfg.replace(seed=int(seed), **flags)
        try:
            out = train(run_cfg, data.train, data.val, data.vocabs.sizes)
        except (TrainingAborted, T.NumericError) as exc:
            res.error = f"seed {seed}: {exc}"
            logger.warning("variant %s failed: %s", name, res.error)
            return res
        res.aucs.append(auc(predict(out.model, data.test, cfg.eval_batch_size), data.test.label))
        res.epoch_seconds.extend(out.epoch_seconds)
        logger.info("%s seed %d test_auc %.4f epoch_s %s", name, seed, res.aucs[-1],
                    " ".join(f"{s:.1f}" for s in out.epoch_seconds))
    return res


def run_matrix(m: ExperimentMatrix, data: PreparedData | None = None) -> list[VariantResult]:
    """Train every variant on every seed; the full model row comes first."""
    if data is None:
        events, profiles, _ = generate(m.spec)
        data = prepare_dataset(events, profiles, m.cfg)
    variants = sorted(m.variants, key=lambda v: v[0] != "full")
    results = [run_variant(name, flags, m.seeds, data, m.cfg) for name, flags in variants]
    base = next((r for r in results if r.name == BASE_VARIANT and not r.failed), None)
    if base is not None and base.mean != 0.5:
        for r in results:
            if r.mean is not None:
                r.relaimpr = relaimpr(r.mean, base.mean)
    if m.out_path is not None:
        write_ablation(m.out_path, results)
    return results


def _model_label(name: str) -> str:
    names = [v[0] for v in ABLATION_VARIANTS[:6]]
    return f"Model {names.index(name) + 1}" if name in names else ("base" if name == BASE_VARIANT else "")


def _fmt(x, spec: str) -> str:
    return "" if x is None else format(x, spec)


def write_ablation(path, results: Sequence[VariantResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in results:
            w.writerow([r.name, _model_label(r.name), _flag_text(r.flags), len(r.aucs),
                        _fmt(r.mean, ".6f"), _fmt(r.std, ".6f"), _fmt(r.relaimpr, ".2f"),
                        _fmt(float(np.mean(r.epoch_seconds)) if r.epoch_seconds else None, ".2f"),
                        "failed: " + r.error if r.failed else "ok",
                        ";".join(f"{a:.6f}" for a in r.aucs)])


def read_ablation(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["aucs"] = [float(x) for x in r["aucs"].split(";") if x]
    return rows


def format_table(rows: Sequence[dict | VariantResult]) -> str:
    """Aligned plain-text table from result objects or ``read_ablation`` rows."""
    lines = [("model", "variant", "AUC mean", "std", "RelaImpr", "epoch s", "status")]
    for r in rows:
        if isinstance(r, VariantResult):
            cells = (_model_label(r.name), r.name, _fmt(r.mean, ".4f"), _fmt(r.std, ".4f"),
                     _fmt(r.relaimpr, "+.2f") + ("%" if r.relaimpr is not None else ""),
                     _fmt(float(np.mean(r.epoch_seconds)) if r.epoch_seconds else None, ".1f"),
                     "FAILED" if r.failed else "ok")
        else:
            def num(key, spec):
                return format(float(r[key]), spec) if r[key] else ""
            cells = (r["model"], r["variant"], num("mean_auc", ".4f"), num("std_auc", ".4f"),
                     num("relaimpr", "+.2f") + ("%" if r["relaimpr"] else ""),
                     num("mean_epoch_s", ".1f"), "ok" if r["status"] == "ok" else "FAILED")
        lines.append(cells)
    widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines)


def hyperparam_sweep(param: str, values: Sequence[float], seeds, data: PreparedData,
                     cfg: TrainConfig, out_dir=None) -> list[tuple[float, int, float]]:
    """One run per (value, seed); returns (value, seed, test AUC) rows."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}, got {param!r}")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    if not all(np.isfinite(values)):
        raise ConfigError(f"sweep values must be finite: {values}")
    cfgs = [cfg.replace(**{param: v}) for v in values]   # range checks before any training
    rows = []
    for v, c in zip(values, cfgs):
        for seed in seeds:
            out = train(c.replace(seed=int(seed)), data.train, data.val, data.vocabs.sizes)
            rows.append((v, int(seed), auc(predict(out.model, data.test, c.eval_batch_size),
                                           data.test.label)))
    if out_dir is not None:
        path = Path(out_dir) / f"sweep_{param}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        means = {v: float(np.mean([a for vv, _, a in rows if vv == v])) for v in values}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("value", "seed", "auc", "mean_auc"))
            for v, s, a in rows:
                w.writerow((v, s, f"{a:.6f}", f"{means[v]:.6f}"))
    return rows
