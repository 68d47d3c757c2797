import csv
from dataclasses import replace

import numpy as np
import pytest

from duin import tensor as T
from duin import trainer as TR
from duin.config import ConfigError, TrainConfig
from duin.model import DUIN, bce_loss, bce_with_logits, final_loss
from duin.optim import Adam
from duin.tensor import Tensor
from conftest import small_config

FLAGS = ["no_eiem", "no_liem", "no_iumm", "no_ssl", "sii", "trigger_agnostic"]


def batch(data, n=16, start=0):
    return data.train.take(np.arange(start, start + n))


class TestLosses:
    def test_half_is_ln2(self):
        assert float(bce_with_logits(T.zeros(8), np.array([0, 1] * 4)).data) == pytest.approx(np.log(2), abs=1e-6)
        assert bce_loss(np.full(4, 0.5), [1, 0, 1, 0]) == pytest.approx(np.log(2), abs=1e-12)

    def test_confident_and_right(self):
        with T.default_dtype(np.float64):
            loss = float(bce_with_logits(Tensor([40.0, -40.0]), [1, 0]).data)
        assert 0 <= loss < 1e-15

    def test_example(self):
        logits = np.log(np.array([0.9, 0.1]) / (1 - np.array([0.9, 0.1])))
        with T.default_dtype(np.float64):
            loss = float(bce_with_logits(Tensor(logits), [1, 0]).data)
        assert loss == pytest.approx(-np.log(0.9), abs=1e-9)
        assert loss == pytest.approx(0.10536, abs=1e-5)

    def test_matches_probability_form(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=50) * 3, rng.integers(0, 2, size=50)
        with T.default_dtype(np.float64):
            assert float(bce_with_logits(Tensor(x), y).data) == pytest.approx(
                bce_loss(1 / (1 + np.exp(-x)), y), rel=1e-10)

    def test_final_loss(self):
        a, b = Tensor(0.7), Tensor(0.3)
        assert final_loss(a, b, 0.0) is a
        assert float(final_loss(a, b, 1.0).data) == pytest.approx(1.0)
        with T.default_dtype(np.float64):
            a, b = Tensor(0.731), Tensor(1.917)
            diff = float(final_loss(a, b, 2.0).data) - float(final_loss(a, b, 1.0).data)
        assert abs(diff - 1.917) <= 1e-7
        with pytest.raises(ValueError):
            final_loss(a, b, -1.0)


class TestForward:
    def test_zero_head_gives_half(self, small_data):
        model = DUIN(small_config(), small_data.vocabs.sizes)
        model.head.layers[-1].zero_()
        np.testing.assert_array_equal(model.predict(batch(small_data)), 0.5)

    def test_probabilities_open_interval(self, small_data):
        p = DUIN(small_config(), small_data.vocabs.sizes).predict(batch(small_data, 64))
        assert p.shape == (64,) and np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("flag", FLAGS)
    def test_ablation_switches_well_formed(self, small_data, flag):
        cfg = small_config(**{flag: True})
        model = DUIN(cfg, small_data.vocabs.sizes)
        b = batch(small_data).with_augmentation(0.5, np.random.default_rng(0))
        final, ctr, ssl = model.loss(b, "train", np.random.default_rng(1))
        assert np.isfinite(final.data)
        assert (ssl is None) == (not cfg.ssl_active)
        final.backward()

    def test_no_liem_ignores_graph(self, small_data):
        model = DUIN(small_config(no_liem=True), small_data.vocabs.sizes)
        b = batch(small_data)
        shuffled = replace(b, rel_tr=b.rel_tr[::-1].copy(), rel_ta=np.zeros_like(b.rel_ta))
        assert np.array_equal(model.predict(b), model.predict(shuffled))

    def test_trigger_agnostic_ignores_trigger(self, small_data):
        model = DUIN(small_config(trigger_agnostic=True), small_data.vocabs.sizes)
        b = batch(small_data)
        moved = replace(b, trig_item=b.trig_item[::-1].copy(), trig_attr=b.trig_attr[::-1].copy(),
                        rel_tr=b.rel_tr[::-1].copy(), exp_item=b.exp_item[::-1].copy())
        assert np.array_equal(model.predict(b), model.predict(moved))

    def test_full_model_uses_trigger(self, small_data):
        model = DUIN(small_config(), small_data.vocabs.sizes)
        b = batch(small_data)
        moved = replace(b, trig_item=b.trig_item[::-1].copy())
        assert not np.array_equal(model.predict(b), model.predict(moved))

    def test_slot_mismatch_named(self, small_data):
        model = DUIN(small_config(), small_data.vocabs.sizes)
        b = batch(small_data)
        with pytest.raises(T.DimensionError, match="profile"):
            model.predict(replace(b, profile=b.profile[:, :1]))

    def test_every_parameter_in_one_group(self, small_data):
        model = DUIN(small_config(), small_data.vocabs.sizes)
        named = list(model.named_parameters())
        assert len({id(p) for _, p in named}) == len(named) == len({k for k, _ in named})

    def test_head_sizes(self, small_data):
        model = DUIN(TrainConfig(dim=8), small_data.vocabs.sizes)
        assert [l.weight.shape[1] for l in model.head.layers] == [200, 80, 1]

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(alpha=-1)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=1)
        TrainConfig(batch_size=1, no_ssl=True)


class TestTraining:
    def test_overfit_small_batch(self, small_data):
        cfg = small_config(lr=0.01)
        model = DUIN(cfg, small_data.vocabs.sizes)
        opt = Adam(model.named_parameters(), cfg.lr)
        b = batch(small_data, 32)
        rng = np.random.default_rng(0)
        for _ in range(200):
            l_ctr, _, _ = TR.train_step(model, opt, b, rng)
        assert l_ctr < 0.05

    def test_same_seed_same_trajectory(self, small_data):
        cfg = small_config(epochs=1)
        runs = [TR.train(cfg, small_data.train, small_data.val, small_data.vocabs.sizes, max_steps=8)
                for _ in range(2)]
        a, b = ([r["l_final"] for r in res.log if r["l_final"] is not None] for res in runs)
        assert len(a) == 8 and a == b

    def test_ssl_logged_positive(self, small_data):
        res = TR.train(small_config(), small_data.train, None, small_data.vocabs.sizes, max_steps=5)
        steps = [r for r in res.log if r["l_final"] is not None]
        assert all(r["l_ssl"] is not None and r["l_ssl"] > 0 for r in steps)
        assert all(r["l_final"] == pytest.approx(r["l_ctr"] + r["l_ssl"], rel=1e-5) for r in steps)

    def test_checkpoint_round_trip(self, small_data, tmp_path):
        cfg = small_config(epochs=2)
        res = TR.train(cfg, small_data.train, small_data.val, small_data.vocabs.sizes, tmp_path,
                       small_data.vocabs, small_data.graph, max_steps=12)
        model, opt, vocabs, graph = TR.load_checkpoint(tmp_path / "checkpoint")
        b = small_data.test
        assert np.array_equal(model.predict(b), res.model.predict(b))
        assert opt.t == res.optimizer.t
        for k in opt.m:
            assert np.array_equal(opt.m[k], res.optimizer.m[k])
        assert vocabs.sizes == small_data.vocabs.sizes
        assert graph.transition == small_data.graph.transition
        with open(tmp_path / "metrics.csv", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        assert tuple(header) == TR.LOG_COLUMNS

    def test_checkpoint_detects_config_change(self, small_data, tmp_path):
        model = DUIN(small_config(), small_data.vocabs.sizes)
        TR.save_checkpoint(tmp_path, model)
        (tmp_path / "config.txt").write_text(small_config(lr=0.5).to_text(), encoding="utf-8")
        with pytest.raises(ValueError, match="hash"):
            TR.load_checkpoint(tmp_path)

    def test_best_validation_epoch_kept(self, small_data):
        res = TR.train(small_config(epochs=3), small_data.train, small_data.val,
                       small_data.vocabs.sizes)
        vals = [r["val_auc"] for r in res.log if r["val_auc"] is not None]
        assert res.best_val_auc == max(vals)
        assert len(res.epoch_seconds) == 3

    def test_non_finite_aborts_with_dump(self, small_data, tmp_path, monkeypatch):
        real = TR.train_step
        calls = {"n": 0}

        def poisoned(model, opt, b, rng):
            calls["n"] += 1
            if calls["n"] == 3:
                model.head.layers[0].weight.data[0, 0] = np.nan
            return real(model, opt, b, rng)

        monkeypatch.setattr(TR, "train_step", poisoned)
        with pytest.raises(TR.TrainingAborted) as err:
            TR.train(small_config(), small_data.train, None, small_data.vocabs.sizes, tmp_path)
        assert (err.value.epoch, err.value.batch_index) == (0, 2)
        assert (tmp_path / "abort_epoch0_batch2.npz").exists()


def test_adam_first_step_is_lr_sized():
    p = T.parameter(np.array([1.0, -2.0, 3.0]))
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.array([0.5, -3.0, 0.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_skips_parameters_without_grad():
    p, q = T.parameter(np.ones(2)), T.parameter(np.ones(2))
    opt = Adam([("p", p), ("q", q)], lr=0.1)
    p.grad = np.ones(2)
    opt.step()
    assert np.all(q.data == 1) and np.all(opt.m["q"] == 0)
