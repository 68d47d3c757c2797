"""Command line entry point: ``duin <command> [options]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .bench import (ABLATION_VARIANTS, ExperimentMatrix, PreparedData,
                    bench_config, format_table, hyperparam_sweep, prepare_dataset,
                    read_ablation, run_matrix)
from .config import ConfigError, TrainConfig, parse_kv_file
from .data import (DataError, IngestReport, assemble_samples, read_events, read_profiles,
                   read_samples, split, behavior_log, write_samples)
from .dataset import Vocabs, encode
from .graph import TIMELINE_FILE, CoocGraph, GraphTimeline
from .metrics import UndefinedMetricError, evaluate, ranksum_pvalue
from .synthetic import SyntheticSpec, generate, write_dataset
from .trainer import TrainingAborted, load_checkpoint, predict, train

logger = logging.getLogger("duin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RESOLVED = "resolved_config.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pairs(args) -> dict[str, str]:
    pairs = parse_kv_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def _config(args, base: TrainConfig | None = None, **cli) -> TrainConfig:
    cfg = TrainConfig.from_pairs(_pairs(args), base)
    cli = {k: v for k, v in cli.items() if v is not None}
    return cfg.replace(**cli) if cli else cfg


def _snapshot(cfg, out_dir) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / RESOLVED).write_text(cfg.to_text(), encoding="utf-8")


def _read_events(path, report: IngestReport | None = None):
    if not Path(path).exists():
        raise DataError(f"event file not found: {path}")
    return read_events(path, report)


# -- commands ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    pairs = parse_kv_file(args.config) if args.config else {}
    spec = SyntheticSpec.from_pairs(pairs)
    kw = {k: v for k, v in (("sessions", args.sessions), ("seed", args.seed)) if v is not None}
    if kw:
        spec = SyntheticSpec.from_pairs({**vars(spec), **kw})
    paths = write_dataset(spec, args.out)
    print(f"wrote {paths['events']}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    cfg = _config(args)
    report = IngestReport()
    events = _read_events(args.events, report)
    profiles = read_profiles(args.profiles) if args.profiles else {}
    samples = assemble_samples(events, cfg, profiles, report)
    parts = split(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        write_samples(out / f"{name}.tsv", part)
    cutoff = parts[1][0].timestamp if parts[1] else parts[2][0].timestamp
    (out / "split.txt").write_text(
        f"train = {len(parts[0])}\nval = {len(parts[1])}\ntest = {len(parts[2])}\n"
        f"graph_cutoff = {cutoff}\n", encoding="utf-8")
    _snapshot(cfg, out)
    print(report.summary())
    print(f"train {len(parts[0])}  val {len(parts[1])}  test {len(parts[2])}  graph_cutoff {cutoff}")
    return EXIT_OK


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    cutoff = args.cutoff
    if cutoff is None and args.prepared:
        cutoff = int(parse_kv_file(Path(args.prepared) / "split.txt")["graph_cutoff"])
    events = _read_events(args.events)
    timeline = GraphTimeline(behavior_log(events, cutoff), cfg.window)
    graph = timeline.graph()
    graph.save(args.out)
    timeline.save(Path(args.out) / TIMELINE_FILE)
    _snapshot(cfg, args.out)
    print(f"graph: {len(graph.transition)} transition, {len(graph.complementary)} complementary, "
          f"{len(graph.popularity)} popularity edges (cutoff {cutoff})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, epochs=args.epochs, seed=args.seed)
    data_dir = Path(args.data)
    tr, va = read_samples(data_dir / "train.tsv"), read_samples(data_dir / "val.tsv")
    if not tr:
        raise DataError(f"{data_dir / 'train.tsv'}: no training samples")
    graph = CoocGraph.load(args.graph) if args.graph else None
    vocabs = Vocabs.fit(tr, graph)
    timeline = None
    if graph is not None and cfg.graph_counts == "point_in_time":
        path = Path(args.graph) / TIMELINE_FILE
        if path.exists():
            timeline = GraphTimeline.load(path, graph.window)
        else:
            logger.warning("%s missing; training samples use the final graph counts", path)
    enc_tr, enc_va = encode(tr, vocabs, graph, cfg, timeline), encode(va, vocabs, graph, cfg)
    _snapshot(cfg, args.out)
    res = train(cfg, enc_tr, enc_va, vocabs.sizes, args.out, vocabs, graph, args.max_steps)
    best = "n/a" if res.best_val_auc is None else f"{res.best_val_auc:.4f}"
    print(f"best val AUC {best} (epoch {res.best_epoch}); checkpoint in {Path(args.out) / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _, vocabs, graph = load_checkpoint(args.checkpoint)
    if vocabs is None:
        raise DataError(f"{args.checkpoint}: checkpoint has no vocab directory")
    samples = read_samples(args.data)
    enc = encode(samples, vocabs, graph, model.cfg)
    scores = predict(model, enc, model.cfg.eval_batch_size)
    rep = evaluate(scores, enc.label, enc.same_attr, args.base_auc, "base")
    print(f"AUC {rep.auc:.4f}")
    if rep.relaimpr is not None:
        print(f"RelaImpr {rep.relaimpr:+.2f}% vs base {args.base_auc:.4f}")
    for seg, val in rep.segments.items():
        print(f"{seg} AUC {'undefined' if val is None else f'{val:.4f}'}")
    if args.out:
        _snapshot(model.cfg, args.out)
        with open(Path(args.out) / "eval.csv", "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            fh.write(f"auc,{rep.auc:.6f}\nn_pos,{rep.n_pos}\nn_neg,{rep.n_neg}\n")
            for seg, val in rep.segments.items():
                fh.write(f"{seg}_auc,{'' if val is None else f'{val:.6f}'}\n")
    return EXIT_OK


def _bench_data(args, cfg) -> tuple[PreparedData, SyntheticSpec | None]:
    if args.events:
        events = _read_events(args.events)
        profiles = read_profiles(args.profiles) if args.profiles else {}
        return prepare_dataset(events, profiles, cfg), None
    spec = SyntheticSpec()
    kw = {k: v for k, v in (("sessions", args.sessions), ("seed", args.data_seed)) if v is not None}
    if kw:
        spec = SyntheticSpec.from_pairs({**vars(spec), **kw})
    events, profiles, _ = generate(spec)
    return prepare_dataset(events, profiles, cfg), spec


def _seeds(args) -> tuple[int, ...]:
    if args.seeds:
        try:
            return tuple(int(s) for s in args.seeds.split(",") if s.strip())
        except ValueError:
            raise UsageError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
    return (args.seed,)


def cmd_ablate(args) -> int:
    cfg = _config(args, bench_config(), epochs=args.epochs)
    seeds = _seeds(args)
    out = Path(args.out)
    data, spec = _bench_data(args, cfg)
    m = ExperimentMatrix(list(ABLATION_VARIANTS), seeds, spec or SyntheticSpec(), cfg,
                         out / "ablation.csv")
    _snapshot(cfg, out)
    if spec is not None:
        (out / "synthetic_spec.txt").write_text(spec.to_text(), encoding="utf-8")
    results = run_matrix(m, data)
    print(format_table(results))
    print(f"wrote {m.out_path}")
    return EXIT_NUMERIC if all(r.failed for r in results) else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args, bench_config(), epochs=args.epochs)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values expects comma-separated numbers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values must list at least one value")
    data, _ = _bench_data(args, cfg)
    _snapshot(cfg, args.out)
    rows = hyperparam_sweep(args.param, values, _seeds(args), data, cfg, args.out)
    for v in values:
        aucs = [a for vv, _, a in rows if vv == v]
        print(f"{args.param}={v:g}  AUC {np.mean(aucs):.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.results)
    if not path.exists():
        raise DataError(f"results file not found: {path}")
    rows = read_ablation(path)
    print(format_table(rows))
    if args.significance:
        full = next((r for r in rows if r["variant"] == "full"), None)
        if full is None or not full["aucs"]:
            raise DataError("significance needs a 'full' row with per-seed AUCs")
        print()
        print("one-sided rank-sum p-value, H1: full > variant")
        for r in rows:
            if r is full or not r["aucs"]:
                continue
            print(f"  {r['variant']:<18} p = {ranksum_pvalue(full['aucs'], r['aucs']):.4f}")
    if args.out:
        Path(args.out).write_text(format_table(rows) + "\n", encoding="utf-8")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="duin", description="Trigger-induced CTR model: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def cfg_opts(sp):
        sp.add_argument("--config", help="file of 'key = value' lines")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key")

    sp = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic event log")
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config", help="synthetic spec as 'key = value' lines")
    sp.add_argument("--out", required=True)

    sp = add("prepare", cmd_prepare, "events -> train/val/test sample files")
    sp.add_argument("--events", required=True)
    sp.add_argument("--profiles")
    sp.add_argument("--out", required=True)
    cfg_opts(sp)

    sp = add("build-graph", cmd_build_graph, "co-occurrence graph from pre-cutoff behaviors")
    sp.add_argument("--events", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--cutoff", type=int, help="only behaviors strictly before this timestamp")
    sp.add_argument("--prepared", help="prepared data dir; its split.txt supplies the cutoff")
    cfg_opts(sp)

    sp = add("train", cmd_train, "train a model on prepared samples")
    sp.add_argument("--data", required=True, help="directory with train.tsv and val.tsv")
    sp.add_argument("--graph")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-steps", type=int)
    cfg_opts(sp)

    sp = add("eval", cmd_eval, "score a sample file with a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--base-auc", type=float)
    sp.add_argument("--out")

    for name, fn, help_ in (("ablate", cmd_ablate, "module ablation matrix"),
                            ("sweep", cmd_sweep, "hyper-parameter sweep")):
        sp = add(name, fn, help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--seeds", help="comma-separated model seeds (overrides --seed)")
        sp.add_argument("--sessions", type=int, help="synthetic sessions")
        sp.add_argument("--data-seed", type=int, help="synthetic generator seed")
        sp.add_argument("--events", help="use this event log instead of synthetic data")
        sp.add_argument("--profiles")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--out", required=True)
        cfg_opts(sp)
        if name == "sweep":
            sp.add_argument("--param", required=True, choices=["tau", "gamma", "alpha"])
            sp.add_argument("--values", required=True, help="comma-separated values")

    sp = add("report", cmd_report, "table (and significance) from ablation.csv")
    sp.add_argument("--results", required=True)
    sp.add_argument("--significance", action="store_true")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, UndefinedMetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, T.NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
