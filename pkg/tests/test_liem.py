import numpy as np
import pytest

from duin import tensor as T
from duin.liem import BehaviorRefiner, LatentIntent, ModulatedAttention
from duin.tensor import Tensor

D, H = 16, 8


def plain_attention(mod: ModulatedAttention, query, kv, mask):
    """Reference multi-head attention written directly in numpy (float64)."""
    wq, wk, wv, wo = (np.asarray(m.weight.data, np.float64) for m in (mod.wq, mod.wk, mod.wv, mod.wo))
    b, t, d = kv.shape
    dh = d // mod.n_heads
    q = (query @ wq).reshape(b, mod.n_heads, dh)
    k = (kv @ wk).reshape(b, t, mod.n_heads, dh)
    v = (kv @ wv).reshape(b, t, mod.n_heads, dh)
    out = np.zeros((b, mod.n_heads, dh))
    for n in range(b):
        for h in range(mod.n_heads):
            s = k[n, :, h] @ q[n, h] / np.sqrt(dh)
            s = np.where(mask[n], s, -np.inf)
            if not mask[n].any():
                continue
            w = np.exp(s - s.max())
            w /= w.sum()
            out[n, h] = w @ v[n, :, h]
    return out.reshape(b, d) @ wo


@pytest.fixture
def setup():
    rng = np.random.default_rng(0)
    mod = ModulatedAttention(D, H, rng)
    q = rng.normal(size=(3, D))
    beh = rng.normal(size=(3, 5, D))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1], [1, 0, 0, 0, 0]], bool)
    return mod, q, beh, mask


def test_unit_relevance_reduces_to_plain_attention(setup):
    mod, q, beh, mask = setup
    with T.default_dtype(np.float64):
        for m in (mod.wq, mod.wk, mod.wv, mod.wo):
            m.weight.data = m.weight.data.astype(np.float64)
        out = mod(Tensor(q), Tensor(beh), mask, Tensor(np.ones((3, 5)))).data
        unmod = mod(Tensor(q), Tensor(beh), mask, None).data
    assert np.abs(out - plain_attention(mod, q, beh, mask)).max() <= 1e-6
    assert np.array_equal(out, unmod)


def test_unit_relevance_float32(setup):
    mod, q, beh, mask = setup
    out = mod(Tensor(q), Tensor(beh), mask, Tensor(np.ones((3, 5)))).data
    assert np.abs(out - plain_attention(mod, q, beh, mask)).max() <= 1e-5


def test_zero_relevance_gives_exact_zero(setup):
    mod, q, beh, mask = setup
    out = mod(Tensor(q), Tensor(beh), mask, Tensor(np.zeros((3, 5)))).data
    assert np.all(out == 0)


def test_single_row_is_scaled_value(setup):
    mod, q, beh, _ = setup
    mask = np.zeros((3, 5), bool)
    mask[:, 0] = True
    pi = np.full((3, 5), 0.3)
    out = mod(Tensor(q), Tensor(beh), mask, Tensor(pi)).data
    ref = 0.3 * (beh[:, 0] @ mod.wv.weight.data @ mod.wo.weight.data)
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_padding_inert(setup):
    mod, q, beh, mask = setup
    pi = np.random.default_rng(3).uniform(0.1, 0.9, size=(3, 5))
    a = mod(Tensor(q), Tensor(beh), mask, Tensor(pi)).data
    beh2 = beh.copy()
    beh2[~mask] = 1e3
    b = mod(Tensor(q), Tensor(beh2), mask, Tensor(pi)).data
    np.testing.assert_array_equal(a, b)


def test_monotone_influence():
    """Raising one row's relevance raises its share of the output when its
    key is positively aligned with the query."""
    rng = np.random.default_rng(5)
    mod = ModulatedAttention(8, 1, rng)
    q = rng.normal(size=(1, 8))
    beh = rng.normal(size=(1, 4, 8))
    mask = np.ones((1, 4), bool)
    qp = q @ mod.wq.weight.data
    align = (beh[0] @ mod.wk.weight.data) @ qp[0]
    t = int(np.argmax(align))
    assert align[t] > 0

    def contribution(pi_t):
        pi = np.full(4, 0.5)
        pi[t] = pi_t
        kv = beh[0] * pi[:, None]
        s = (kv @ mod.wk.weight.data) @ qp[0] / np.sqrt(8)
        w = np.exp(s - s.max())
        w /= w.sum()
        # check the module agrees with this decomposition
        full = mod(Tensor(q), Tensor(beh), mask, Tensor(pi[None])).data[0]
        np.testing.assert_allclose(full, (w @ (kv @ mod.wv.weight.data)) @ mod.wo.weight.data,
                                   atol=1e-4)
        return np.linalg.norm(w[t] * kv[t] @ mod.wv.weight.data)

    vals = [contribution(p) for p in (0.2, 0.5, 0.8)]
    assert vals[0] < vals[1] < vals[2]


class TestRefiner:
    def test_all_padded_gives_zeros(self):
        ref = BehaviorRefiner(D, H, np.random.default_rng(0))
        out = ref(Tensor(np.random.default_rng(1).normal(size=(2, 4, D))), np.zeros((2, 4), bool))
        assert out.shape == (2, 4, D)
        assert np.all(out.data == 0)

    def test_single_item_is_value_projection(self):
        ref = BehaviorRefiner(D, H, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(1, 3, D))
        mask = np.array([[True, False, False]])
        out = ref(Tensor(x), mask).data
        a = ref.attn
        expect = (x[0, 0] @ a.wv.weight.data + a.wv.bias.data) @ a.wo.weight.data + a.wo.bias.data
        np.testing.assert_allclose(out[0, 0], expect, atol=1e-5)
        assert np.all(out[0, 1:] == 0)


class TestLatentIntent:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.m = LatentIntent(D, 4, H, rng, rel_hidden=8)
        self.e_tr = rng.normal(size=(2, D))
        self.e_ta = rng.normal(size=(2, D))
        self.beh = rng.normal(size=(2, 5, D))
        self.mask = np.array([[1, 1, 1, 1, 0], [1, 1, 0, 0, 0]], bool)
        self.rel_tr = rng.integers(0, 32, size=(2, 5, 3))
        self.rel_ta = rng.integers(0, 32, size=(2, 5, 3))

    def test_padded_positions_score_zero(self):
        pi = self.m.score(self.rel_tr, self.mask).data
        assert np.all(pi[~self.mask] == 0)
        assert np.all((pi[self.mask] > 0) & (pi[self.mask] < 1))

    def test_unseen_relations_share_one_score(self):
        pi = self.m.score(np.zeros((2, 5, 3), dtype=np.int64), np.ones((2, 5), bool)).data
        assert np.all(pi == pi[0, 0])

    def test_same_reference_gives_same_outputs(self):
        m = self.m
        m.trigger_attn = m.target_attn
        h_tr, h_ta = m(Tensor(self.e_tr), Tensor(self.e_tr), Tensor(self.beh), self.mask,
                       self.rel_tr, self.rel_tr)
        assert np.array_equal(h_tr.data, h_ta.data)

    def test_empty_behaviors_give_zero(self):
        h_tr, h_ta = self.m(Tensor(self.e_tr), Tensor(self.e_ta), Tensor(self.beh),
                            np.zeros((2, 5), bool), self.rel_tr, self.rel_ta)
        assert np.all(h_tr.data == 0) and np.all(h_ta.data == 0)

    def test_gradient_reaches_relevance_mlp(self):
        h_tr, h_ta = self.m(Tensor(self.e_tr), Tensor(self.e_ta), Tensor(self.beh), self.mask,
                            self.rel_tr, self.rel_ta)
        T.sum_(h_tr * h_tr + h_ta).backward()
        for name, p in self.m.scorer.named_parameters():
            if name.startswith("mlp"):
                assert p.grad is not None and np.any(p.grad != 0), name

    def test_trigger_branch_disabled(self):
        h_tr, _ = self.m(Tensor(self.e_tr), Tensor(self.e_ta), Tensor(self.beh), self.mask,
                         self.rel_tr, self.rel_ta, use_trigger=False)
        assert np.all(h_tr.data == 0)
