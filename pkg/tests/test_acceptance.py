"""Acceptance criteria 1-11, each reported as one PASS/FAIL line."""

import filecmp
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, SMALL_SPEC, small_config
from test_data import check_no_leakage
from test_graph import oracle
from test_liem import plain_attention
from test_metrics import pairwise_auc
from duin import tensor as T
from duin import trainer as TR
from duin.bench import ExperimentMatrix, bench_config, prepare_dataset, run_matrix, format_table
from duin.data import assemble_samples, split
from duin.eiem import n_negatives, ssl_loss
from duin.gradcheck import probe_gradients
from duin.graph import build
from duin.iumm import IntentDistribution, sample_intensity
from duin.liem import ModulatedAttention
from duin.metrics import auc, relaimpr
from duin.model import DUIN, bce_with_logits, final_loss
from duin.optim import Adam
from duin.synthetic import SyntheticSpec, generate, write_dataset
from duin.tensor import Tensor


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def toy():
    events, profiles, _ = generate(SyntheticSpec(**SMALL_SPEC))
    cfg = small_config(seq_len=4, l_max=3, batch_size=4)
    return cfg, prepare_dataset(events, profiles, cfg)


def test_01_gradient_check(toy):
    cfg, data = toy
    start = time.perf_counter()
    with T.default_dtype(np.float64):
        model = DUIN(cfg, data.vocabs.sizes, seed=0)
        b = data.train.take(np.arange(4)).with_augmentation(cfg.gamma, np.random.default_rng(1))
        eps = np.random.default_rng(2).standard_normal((4, cfg.d_h))
        probes = probe_gradients(lambda: model.loss(b, "train", None, eps)[0],
                                 model.named_parameters(), 40, np.random.default_rng(3), h=1e-5)
    secs = time.perf_counter() - start
    worst = max(p.rel_error for p in probes)
    small = sum(max(abs(p.analytic), abs(p.numeric)) < p.floor for p in probes)
    report(1, len(probes) >= 30 and worst <= 1e-2 and secs < 60,
           f"{len(probes)} probes ({small} below fd resolution {probes[0].floor:.0e}), "
           f"max rel error {worst:.2e}, {secs:.1f}s")


def test_02_closed_form_losses():
    bce = float(bce_with_logits(T.zeros(16), np.arange(16) % 2).data)
    ok_bce = abs(bce - np.log(2)) <= 1e-6
    worst_ssl = 0.0
    for b in (2, 4, 16):
        v = Tensor(np.tile(np.random.default_rng(b).normal(size=(1, 8)), (b, 1)))
        for mode in ("others", "all_views"):
            got = float(ssl_loss(v, v, 0.1, mode).data)
            worst_ssl = max(worst_ssl, abs(got - np.log(1 + n_negatives(b, mode))))
    with T.default_dtype(np.float64):
        ctr, ssl = Tensor(0.6931), Tensor(1.9459)
        vals = [float(final_loss(ctr, ssl, a).data) for a in (0.0, 0.5, 1.0, 2.0)]
    lin = max(abs(v - (0.6931 + a * 1.9459)) for v, a in zip(vals, (0.0, 0.5, 1.0, 2.0)))
    report(2, ok_bce and worst_ssl <= 1e-5 and lin <= 1e-7,
           f"bce-ln2 {abs(bce - np.log(2)):.1e}, ssl max err {worst_ssl:.1e}, alpha linearity {lin:.1e}")


def test_03_relaimpr_cells():
    a = relaimpr(0.7782, 0.6107)
    b = relaimpr(0.6096, 0.6107)
    report(3, abs(a - 151.31) <= 0.02 and abs(b + 0.99) <= 0.02, f"{a:.2f}% and {b:.2f}%")


def test_04_graph_oracle():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    bad = 0
    for _ in range(500):
        window = int(rng.integers(1, 5))
        seqs = [[(f"i{rng.integers(6)}", f"a{rng.integers(3)}") for _ in range(rng.integers(0, 9))]
                for _ in range(rng.integers(0, 11))]
        g = build(seqs, window)
        t, c, p = oracle(seqs, window)
        bad += not (g.transition == t and g.complementary == c and g.popularity == p)
    secs = time.perf_counter() - start
    report(4, bad == 0 and secs < 10, f"500 cases, {bad} mismatches, {secs:.2f}s")


def test_05_attention_reduction():
    rng = np.random.default_rng(0)
    mod = ModulatedAttention(16, 8, rng)
    q, beh = rng.normal(size=(4, 16)), rng.normal(size=(4, 6, 16))
    mask = np.arange(6)[None, :] < np.array([[6], [3], [1], [4]])
    with T.default_dtype(np.float64):
        for m in (mod.wq, mod.wk, mod.wv, mod.wo):
            m.weight.data = m.weight.data.astype(np.float64)
        one = mod(Tensor(q), Tensor(beh), mask, Tensor(np.ones((4, 6)))).data
        zero = mod(Tensor(q), Tensor(beh), mask, Tensor(np.zeros((4, 6)))).data
    err = np.abs(one - plain_attention(mod, q, beh, mask)).max()
    report(5, err <= 1e-6 and np.all(zero == 0),
           f"Pi=1 max abs diff {err:.1e}, Pi=0 all zero {bool(np.all(zero == 0))}")


def test_06_auc_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        s = rng.integers(0, 10, n) / 10 if rng.random() < 0.5 else rng.normal(size=n)
        worst = max(worst, abs(auc(s, y) - pairwise_auc(s, y)))
    report(6, worst <= 1e-12, f"200 sets, max diff {worst:.1e}")


def test_07_overfit():
    events, profiles, _ = generate(SyntheticSpec(**SMALL_SPEC))
    cfg = bench_config()
    data = prepare_dataset(events, profiles, cfg)
    model = DUIN(cfg, data.vocabs.sizes, seed=0)
    opt = Adam(model.named_parameters(), cfg.lr)
    b, rng = data.train.take(np.arange(32)), np.random.default_rng(0)
    start = time.perf_counter()
    for _ in range(200):
        loss, _, _ = TR.train_step(model, opt, b, rng)
    secs = time.perf_counter() - start
    report(7, loss < 0.05 and secs < 120, f"loss {loss:.2e} after 200 steps (lr {cfg.lr}), {secs:.1f}s")


ABLATION = [("full", {}), ("no_ssl", {"no_ssl": True}), ("no_liem", {"no_liem": True}),
            ("no_iumm", {"no_iumm": True}), ("trigger_agnostic", {"trigger_agnostic": True})]


def test_08_ablation_direction(tmp_path):
    start = time.perf_counter()
    res = run_matrix(ExperimentMatrix(ABLATION, (0, 1, 2, 3, 4), SyntheticSpec(), bench_config(),
                                      tmp_path / "ablation.csv"))
    secs = time.perf_counter() - start
    print(format_table(res))
    m = {r.name: r.mean for r in res}
    if any(v is None for v in m.values()):
        report(8, False, "a variant failed: " + "; ".join(r.error for r in res if r.failed))
    ok = (m["full"] >= m["no_ssl"] >= m["no_liem"] and m["full"] >= m["no_iumm"]
          and m["full"] - m["trigger_agnostic"] >= 0.03 and secs < 1800)
    report(8, ok, " ".join(f"{k}={v:.4f}" for k, v in m.items()) + f", {secs / 60:.1f} min")


def test_09_iumm_statistics():
    n = 100_000
    dist = IntentDistribution(mu=T.zeros((n, 1)), sigma=Tensor(np.ones((n, 1))))
    z = sample_intensity(dist, np.random.default_rng(0), "train").data.astype(np.float64)
    m, var = z.mean(), z.var()
    a = sample_intensity(dist, np.random.default_rng(1), "infer").data
    b = sample_intensity(dist, np.random.default_rng(2), "infer").data
    report(9, abs(m) <= 0.02 and 0.97 <= var <= 1.03 and np.array_equal(a, b),
           f"mean {m:+.4f}, var {var:.4f}, infer deterministic {bool(np.array_equal(a, b))}")


def test_10_determinism(toy, tmp_path):
    _, data = toy
    cfg = small_config(epochs=10)
    runs = [TR.train(cfg, data.train, None, data.vocabs.sizes, max_steps=50) for _ in range(2)]
    a, b = ([r["l_final"] for r in res.log if r["l_final"] is not None] for res in runs)
    same_traj = len(a) == 50 and a == b
    TR.save_checkpoint(tmp_path / "ckpt", runs[0].model, runs[0].optimizer, data.vocabs, data.graph)
    model, _, _, _ = TR.load_checkpoint(tmp_path / "ckpt")
    same_out = np.array_equal(model.predict(data.test), runs[0].model.predict(data.test))
    spec = SyntheticSpec(sessions=500, seed=4)
    fa, fb = write_dataset(spec, tmp_path / "a"), write_dataset(spec, tmp_path / "b")
    same_files = all(filecmp.cmp(fa[k], fb[k], shallow=False) for k in fa)
    report(10, same_traj and same_out and same_files,
           f"trajectory {same_traj} ({len(a)} steps), checkpoint {same_out}, files {same_files}")


def test_11_data_hygiene():
    cfg = bench_config()
    events, profiles, _ = generate(SyntheticSpec())
    samples = assemble_samples(events, cfg, profiles)
    bad = check_no_leakage(samples, cfg.trigger_window_hours)
    tr, va, te = split(samples)
    ordered = max(s.timestamp for s in tr) <= min(s.timestamp for s in va) and \
        max(s.timestamp for s in va) <= min(s.timestamp for s in te)
    report(11, len(samples) >= 10_000 and bad == 0 and ordered,
           f"{len(samples)} samples, {bad} violations, chronological split {ordered}")
