"""Optimization loop, checkpoints and the per-step metrics log."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .dataset import Batch, Vocabs, iterate_minibatches
from .graph import CoocGraph
from .metrics import UndefinedMetricError, auc
from .model import DUIN, VocabSizes
from .optim import Adam

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "l_ctr", "l_ssl", "l_final", "val_auc")
MANIFEST = "manifest.txt"
BLOB = "params.bin"


class TrainingAborted(RuntimeError):
    """A non-finite loss or forward value stopped training."""

    def __init__(self, msg: str, epoch: int, batch_index: int):
        super().__init__(msg)
        self.epoch, self.batch_index = epoch, batch_index


@dataclass
class TrainResult:
    model: DUIN
    optimizer: Adam
    log: list[dict] = field(default_factory=list)
    best_val_auc: float | None = None
    best_epoch: int | None = None
    epoch_seconds: list[float] = field(default_factory=list)


def predict(model: DUIN, data: Batch, batch_size: int = 1024) -> np.ndarray:
    out = np.empty(len(data), dtype=np.float64)
    for k, (_, b) in enumerate(iterate_minibatches(data, batch_size)):
        out[k * batch_size:k * batch_size + len(b)] = model.predict(b)
    return out


def train_step(model: DUIN, opt: Adam, batch: Batch, rng: np.random.Generator):
    """One Adam step; returns (l_ctr, l_ssl or None, l_final) as floats."""
    cfg = model.cfg
    if cfg.ssl_active:
        batch = batch.with_augmentation(cfg.gamma, rng)
    opt.zero_grad()
    l_final, l_ctr, l_ssl = model.loss(batch, "train", rng)
    if not np.isfinite(l_final.data).all():
        raise T.NumericError("non-finite loss")
    l_final.backward()
    opt.step()
    return float(l_ctr.data), (None if l_ssl is None else float(l_ssl.data)), float(l_final.data)


def train(cfg: TrainConfig, train_data: Batch, val_data: Batch | None, sizes: VocabSizes,
          out_dir=None, vocabs: Vocabs | None = None, graph: CoocGraph | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Adam over shuffled minibatches; the best-validation-AUC weights are kept.

    Deterministic for a fixed ``cfg.seed``: the model init, shuffling,
    augmentation masks and reparameterization noise all draw from seeded
    generators.
    """
    model = DUIN(cfg, sizes)
    opt = Adam(model.named_parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(model, opt)
    best_state = None
    step = 0
    min_size = 2 if cfg.ssl_active else 1
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        for bi, batch in iterate_minibatches(train_data, cfg.batch_size, rng, min_size):
            try:
                l_ctr, l_ssl, l_fin = train_step(model, opt, batch, rng)
            except T.NumericError as exc:
                dump = _dump_batch(out_dir, epoch, bi, batch)
                raise TrainingAborted(f"epoch {epoch} batch {bi}: {exc}; batch dumped to {dump}",
                                      epoch, bi) from exc
            step += 1
            if step % cfg.log_every == 0:
                result.log.append(dict(epoch=epoch, step=step, l_ctr=l_ctr, l_ssl=l_ssl,
                                       l_final=l_fin, val_auc=None))
            if max_steps is not None and step >= max_steps:
                break
        result.epoch_seconds.append(time.perf_counter() - t0)
        val_auc = None
        if val_data is not None and len(val_data):
            try:
                val_auc = auc(predict(model, val_data, cfg.eval_batch_size), val_data.label)
            except UndefinedMetricError:
                val_auc = None
        result.log.append(dict(epoch=epoch, step=step, l_ctr=None, l_ssl=None, l_final=None,
                               val_auc=val_auc))
        logger.info("epoch %d step %d val_auc %s (%.1fs)", epoch, step, val_auc,
                    result.epoch_seconds[-1])
        if val_auc is not None and (result.best_val_auc is None or val_auc > result.best_val_auc):
            result.best_val_auc, result.best_epoch = val_auc, epoch
            best_state = snapshot(model, opt)
        if max_steps is not None and step >= max_steps:
            break
    if best_state is not None:
        restore(model, opt, best_state)
    if out_dir is not None:
        out = Path(out_dir)
        save_checkpoint(out / "checkpoint", model, opt, vocabs, graph)
        write_log(out / "metrics.csv", result.log)
    return result


def _dump_batch(out_dir, epoch: int, bi: int, batch: Batch) -> str:
    if out_dir is None:
        return "<no output dir>"
    path = Path(out_dir) / f"abort_epoch{epoch}_batch{bi}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **{k: v for k, v in vars(batch).items() if v is not None})
    return str(path)


def snapshot(model: DUIN, opt: Adam) -> dict:
    return {"params": {k: p.data.copy() for k, p in model.named_parameters()},
            "m": {k: v.copy() for k, v in opt.m.items()},
            "v": {k: v.copy() for k, v in opt.v.items()}, "t": opt.t}


def restore(model: DUIN, opt: Adam, state: dict) -> None:
    for k, p in model.named_parameters():
        p.data[...] = state["params"][k]
    for k in opt.m:
        opt.m[k][...] = state["m"][k]
        opt.v[k][...] = state["v"][k]
    opt.t = state["t"]


def write_log(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c])
                        for c in LOG_COLUMNS])


# -- checkpoints -------------------------------------------------------------------------
#
# manifest.txt: "key = value" header lines (seed, config_hash, adam_step, sizes),
# then one "name <TAB> shape <TAB> offset <TAB> count" line per array, offsets in
# float32 elements into params.bin (raw little-endian float32).

def save_checkpoint(directory, model: DUIN, opt: Adam | None = None, vocabs: Vocabs | None = None,
                    graph: CoocGraph | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg = model.cfg
    arrays = [(k, p.data) for k, p in model.named_parameters()]
    if opt is not None:
        arrays += [(f"adam.m/{k}", v) for k, v in opt.m.items()]
        arrays += [(f"adam.v/{k}", v) for k, v in opt.v.items()]
    sizes = model.sizes
    head = [f"seed = {cfg.seed}", f"config_hash = {cfg.digest()}",
            f"adam_step = {opt.t if opt is not None else 0}",
            f"items = {sizes.items}", f"attrs = {sizes.attrs}",
            f"profile = {','.join(map(str, sizes.profile))}",
            f"context = {','.join(map(str, sizes.context))}", ""]
    lines, offset = [], 0
    with open(d / BLOB, "wb") as fh:
        for name, arr in arrays:
            a = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(a.tobytes())
            lines.append(f"{name}\t{','.join(map(str, a.shape))}\t{offset}\t{a.size}")
            offset += a.size
    (d / MANIFEST).write_text("\n".join(head + lines) + "\n", encoding="utf-8")
    cfg.save(d / "config.txt")
    if vocabs is not None:
        vocabs.save(d / "vocab")
    if graph is not None:
        graph.save(d / "graph")


def load_checkpoint(directory):
    """Returns (model, optimizer, vocabs or None, graph or None)."""
    d = Path(directory)
    cfg = TrainConfig.load(d / "config.txt")
    header, entries = {}, []
    for line in (d / MANIFEST).read_text(encoding="utf-8").splitlines():
        if "\t" in line:
            name, shape, offset, count = line.split("\t")
            entries.append((name, tuple(int(x) for x in shape.split(",") if x), int(offset), int(count)))
        elif "=" in line:
            k, v = line.split("=", 1)
            header[k.strip()] = v.strip()
    if header.get("config_hash") != cfg.digest():
        raise ValueError(f"{d}: config.txt does not match the manifest's config hash")

    def ints(s):
        return tuple(int(x) for x in s.split(",") if x)

    sizes = VocabSizes(int(header["items"]), int(header["attrs"]), ints(header["profile"]),
                       ints(header["context"]))
    with T.default_dtype(np.float32):
        model = DUIN(cfg, sizes)
    opt = Adam(model.named_parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    blob = np.fromfile(d / BLOB, dtype="<f4")
    params = dict(model.named_parameters())
    for name, shape, offset, count in entries:
        arr = blob[offset:offset + count].reshape(shape)
        if name.startswith("adam.m/"):
            opt.m[name[7:]][...] = arr
        elif name.startswith("adam.v/"):
            opt.v[name[7:]][...] = arr
        else:
            params[name].data[...] = arr
    opt.t = int(header.get("adam_step", 0))
    vocabs = Vocabs.load(d / "vocab") if (d / "vocab").exists() else None
    graph = CoocGraph.load(d / "graph") if (d / "graph").exists() else None
    return model, opt, vocabs, graph
