import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hinormer.layers import (
    AttentionConfig,
    AttentionMap,
    HeteroAttentionLayer,
    add_relational_bias,
    attention_logits,
    layer_forward,
    readout,
    stack_forward,
)
from hinormer.numeric import as_tensor, layer_norm

MECHS = ["gatv2", "gat", "dot"]


def np_(t):
    return t.detach().numpy()


def lrelu(x, s=0.2):
    return np.where(x >= 0, x, s * x)


def rand_inputs(S=4, d=8, T=3, seed=0, mask=None):
    rng = np.random.default_rng(seed)
    h = as_tensor(rng.standard_normal((1, S, d)))
    r = as_tensor(rng.random((1, S, T)))
    m = torch.ones(1, S, dtype=torch.bool) if mask is None else torch.tensor([mask])
    return h, r, m


def logit_oracle(h, cfg, p, head, i, j):
    """One attention score computed from scalar loops over the parameters."""
    d, k = cfg.d, cfg.head_dim
    if cfg.mechanism == "gatv2":
        W, a = np_(p.W)[head], np_(p.a)[head]
        z = [sum(W[c, e] * h[i, e] for e in range(d)) + sum(W[c, d + e] * h[j, e] for e in range(d)) for c in range(k)]
        return sum(a[c] * (z[c] if z[c] >= 0 else 0.2 * z[c]) for c in range(k))
    if cfg.mechanism == "gat":
        W, a = np_(p.W)[head], np_(p.a)[head]
        wi = [sum(W[c, e] * h[i, e] for e in range(d)) for c in range(k)]
        wj = [sum(W[c, e] * h[j, e] for e in range(d)) for c in range(k)]
        s = sum(a[c] * wi[c] for c in range(k)) + sum(a[k + c] * wj[c] for c in range(k))
        return s if s >= 0 else 0.2 * s
    Q, K = np_(p.W_Q)[head], np_(p.W_K)[head]
    q = [sum(h[i, e] * Q[e, c] for e in range(d)) for c in range(k)]
    kk = [sum(h[j, e] * K[e, c] for e in range(d)) for c in range(k)]
    return sum(q[c] * kk[c] for c in range(k)) / math.sqrt(k)


def bias_oracle(r, p, head, i, j, beta):
    QR, KR = np_(p.W_QR)[head], np_(p.W_KR)[head]
    T = r.shape[1]
    qi = [sum(QR[u, t] * r[i, t] for t in range(T)) for u in range(T)]
    kj = [sum(KR[u, t] * r[j, t] for t in range(T)) for u in range(T)]
    return beta * sum(qi[u] * kj[u] for u in range(T))


def layer_oracle(h, r, mask, cfg, p):
    """Straight-line numpy evaluation of one attention layer on one sequence."""
    S = h.shape[0]
    heads = []
    for hd in range(cfg.n_h):
        logits = np.full((S, S), -np.inf)
        for i in range(S):
            for j in range(S):
                if mask[j]:
                    logits[i, j] = logit_oracle(h, cfg, p, hd, i, j)
                    if cfg.use_relational_bias:
                        logits[i, j] += bias_oracle(r, p, hd, i, j, cfg.beta)
        e = np.exp(logits - logits.max(1, keepdims=True))
        w = e / e.sum(1, keepdims=True)
        heads.append(w @ (h @ np_(p.W_V)[hd]))
    z = h + np.concatenate(heads, axis=1) @ np_(p.merge).T
    mu = z.mean(1, keepdims=True)
    var = ((z - mu) ** 2).mean(1, keepdims=True)
    return (z - mu) / np.sqrt(var + cfg.ln_eps) * np_(p.ln_scale) + np_(p.ln_shift)


class TestLogits:
    @pytest.mark.parametrize("mech", MECHS)
    def test_identical_rows_uniform(self, mech):
        cfg = AttentionConfig(d=6, n_h=2, mechanism=mech, use_relational_bias=False)
        layer = HeteroAttentionLayer(cfg, seed=1)
        h = as_tensor(np.tile(np.random.default_rng(0).standard_normal(6), (1, 5, 1)))
        w = attention_logits(h, torch.ones(1, 5, dtype=torch.bool), cfg, layer).weights
        np.testing.assert_allclose(np_(w), 0.2, atol=1e-15)

    def test_dot_example(self):
        cfg = AttentionConfig(d=1, n_h=1, mechanism="dot", use_relational_bias=False)
        layer = HeteroAttentionLayer(cfg)
        with torch.no_grad():
            layer.W_Q.fill_(1.0)
            layer.W_K.fill_(1.0)
        h = as_tensor([[[0.0], [1.0]]])
        amap = attention_logits(h, torch.ones(1, 2, dtype=torch.bool), cfg, layer)
        assert amap.logits[0, 0].tolist() == [[0.0, 0.0], [0.0, 1.0]]

    @pytest.mark.parametrize("mech", MECHS)
    def test_scalar_oracle(self, mech):
        cfg = AttentionConfig(d=6, n_h=2, mechanism=mech, use_relational_bias=False)
        layer = HeteroAttentionLayer(cfg, seed=2)
        h, _, m = rand_inputs(S=4, d=6, seed=3)
        logits = np_(attention_logits(h, m, cfg, layer).logits)[0]
        hn = np_(h)[0]
        for hd in range(2):
            for i in range(4):
                for j in range(4):
                    assert abs(logits[hd, i, j] - logit_oracle(hn, cfg, layer, hd, i, j)) <= 1e-10

    @pytest.mark.parametrize("mech", MECHS)
    def test_masked_keys(self, mech):
        cfg = AttentionConfig(d=4, n_h=2, mechanism=mech, num_types=3)
        layer = HeteroAttentionLayer(cfg, seed=0)
        h, r, m = rand_inputs(S=5, d=4, mask=[True, True, False, True, False])
        out, amap = layer_forward(h, r, m, cfg, layer, return_attention=True)
        assert torch.isinf(amap.logits[..., [2, 4]]).all()
        w = amap.weights
        assert (w[..., [2, 4]] == 0).all()
        np.testing.assert_allclose(np_(w.sum(-1)), 1.0, atol=1e-12)

    def test_mechanism_parameter_mismatch(self):
        gat = HeteroAttentionLayer(AttentionConfig(d=4, n_h=1, mechanism="gat", use_relational_bias=False))
        h, _, m = rand_inputs(S=3, d=4)
        with pytest.raises(ValueError, match="gatv2"):
            attention_logits(h, m, AttentionConfig(d=4, n_h=1, mechanism="gatv2", use_relational_bias=False), gat)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AttentionConfig(d=5, n_h=2)
        with pytest.raises(ValueError):
            AttentionConfig(mechanism="additive")
        with pytest.raises(ValueError):
            AttentionConfig(use_ffn=True, mechanism="gatv2")


class TestRelationalBias:
    def setup_method(self):
        self.cfg = AttentionConfig(d=4, n_h=2, num_types=3, beta=0.8)
        self.layer = HeteroAttentionLayer(self.cfg, seed=5)
        self.h, self.r, self.m = rand_inputs(S=4, d=4, seed=6)
        self.base = attention_logits(self.h, self.m, self.cfg, self.layer)

    def test_beta_zero_is_noop(self):
        out = add_relational_bias(self.base, self.r, self.layer, 0.0)
        assert torch.equal(out.logits, self.base.logits)

    def test_orthogonal_one_hots(self):
        with torch.no_grad():
            self.layer.W_QR.copy_(torch.eye(3).expand(2, 3, 3))
            self.layer.W_KR.copy_(torch.eye(3).expand(2, 3, 3))
        r = as_tensor(np.eye(3)[[0, 1, 2, 0]][None])
        bias = add_relational_bias(self.base, r, self.layer, 1.0).logits - self.base.logits
        b = np_(bias)[0, 0]
        assert b[0, 1] == 0.0 and b[1, 2] == 0.0
        assert b[0, 3] == pytest.approx(1.0, abs=1e-12)

    def test_scalar_oracle(self):
        out = add_relational_bias(self.base, self.r, self.layer, 0.8)
        bias = np_(out.logits - self.base.logits)[0]
        rn = np_(self.r)[0]
        for hd in range(2):
            for i in range(4):
                for j in range(4):
                    assert abs(bias[hd, i, j] - bias_oracle(rn, self.layer, hd, i, j, 0.8)) <= 1e-12

    def test_masked_stay_masked(self):
        m = torch.tensor([[True, False, True, True]])
        base = attention_logits(self.h, m, self.cfg, self.layer)
        out = add_relational_bias(base, self.r, self.layer, 3.0)
        assert torch.isinf(out.logits[..., 1]).all()

    def test_width_mismatch(self):
        with pytest.raises(ValueError, match="relational width"):
            add_relational_bias(self.base, self.r[..., :2], self.layer, 1.0)


class TestLayer:
    def test_single_valid_position(self):
        cfg = AttentionConfig(d=4, n_h=2, num_types=2)
        layer = HeteroAttentionLayer(cfg, seed=1)
        h, r, m = rand_inputs(S=3, d=4, T=2, mask=[True, False, False])
        out = layer_forward(h, r, m, cfg, layer, training=False)
        h0 = h[0, 0]
        v = torch.cat([h0 @ layer.W_V[k] for k in range(2)])
        expect = layer_norm(h0 + layer.merge @ v, layer.ln_scale, layer.ln_shift, cfg.ln_eps)
        assert torch.max(torch.abs(out[0, 0] - expect)).item() <= 1e-12

    def test_zero_values_identity_merge(self):
        cfg = AttentionConfig(d=4, n_h=2, num_types=2)
        layer = HeteroAttentionLayer(cfg, seed=1)
        with torch.no_grad():
            layer.W_V.zero_()
            layer.merge.copy_(torch.eye(4))
        h, r, m = rand_inputs(S=3, d=4, T=2)
        out = layer_forward(h, r, m, cfg, layer, training=False)
        torch.testing.assert_close(out, layer_norm(h, eps=cfg.ln_eps), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("mech", MECHS)
    @pytest.mark.parametrize("bias", [False, True])
    def test_two_head_oracle(self, mech, bias):
        cfg = AttentionConfig(d=8, n_h=2, mechanism=mech, num_types=3, use_relational_bias=bias, beta=0.6)
        layer = HeteroAttentionLayer(cfg, seed=7)
        with torch.no_grad():
            layer.ln_scale.copy_(as_tensor(np.linspace(0.5, 1.5, 8)))
            layer.ln_shift.copy_(as_tensor(np.linspace(-0.2, 0.2, 8)))
        h, r, m = rand_inputs(S=4, d=8, seed=8, mask=[True, True, True, False])
        out = np_(layer_forward(h, r, m, cfg, layer, training=False))[0]
        expect = layer_oracle(np_(h)[0], np_(r)[0], np_(m)[0], cfg, layer)
        assert np.max(np.abs(out - expect)) <= 1e-9

    def test_layer_norm_contract(self):
        cfg = AttentionConfig(d=8, n_h=2, num_types=3, ln_eps=0.0)
        layer = HeteroAttentionLayer(cfg, seed=3)
        h, r, m = rand_inputs(S=6, d=8, seed=4)
        out = np_(layer_forward(h, r, m, cfg, layer, training=False))
        np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(-1), 1.0, atol=1e-6)

    def test_ffn_baseline_runs(self):
        cfg = AttentionConfig(d=4, n_h=2, mechanism="dot", use_ffn=True, use_relational_bias=False)
        layer = HeteroAttentionLayer(cfg, seed=0)
        h, r, m = rand_inputs(S=3, d=4)
        out = layer_forward(h, None, m, cfg, layer, training=False)
        assert out.shape == h.shape and torch.isfinite(out).all()

    def test_beta_continuity(self):
        cfg0 = AttentionConfig(d=8, n_h=2, num_types=3, beta=0.0)
        layer = HeteroAttentionLayer(cfg0, seed=2)
        h, r, m = rand_inputs(S=5, d=8, seed=2)
        base = layer_forward(h, r, m, cfg0, layer, training=False)
        off = AttentionConfig(d=8, n_h=2, num_types=3, use_relational_bias=False)
        assert torch.equal(base, layer_forward(h, r, m, off, layer, training=False))
        prev = None
        for beta in (1e-2, 1e-4, 1e-6, 1e-8):
            cfg = AttentionConfig(d=8, n_h=2, num_types=3, beta=beta)
            diff = torch.max(torch.abs(layer_forward(h, r, m, cfg, layer, training=False) - base)).item()
            if prev is not None:
                assert diff <= prev
            prev = diff
        assert prev <= 1e-6


class TestStack:
    def make(self, L, seed=0):
        cfg = AttentionConfig(d=8, n_h=2, num_types=3)
        return cfg, [HeteroAttentionLayer(cfg, seed=seed + i) for i in range(L)]

    def test_single_layer(self):
        cfg, layers = self.make(1)
        h, r, m = rand_inputs(S=4, d=8)
        assert torch.equal(stack_forward(h, r, m, layers, training=False),
                           layer_forward(h, r, m, cfg, layers[0], training=False))

    def test_second_layer_with_zero_values(self):
        cfg, layers = self.make(2)
        with torch.no_grad():
            layers[1].W_V.zero_()
        h, r, m = rand_inputs(S=4, d=8)
        first = layer_forward(h, r, m, cfg, layers[0], training=False)
        out = stack_forward(h, r, m, layers, training=False)
        assert torch.max(torch.abs(out - layer_norm(first, eps=cfg.ln_eps))).item() <= 1e-12
        # LN of an already normalized row only moves it by the eps term
        assert torch.max(torch.abs(out - first)).item() <= 1e-4

    def test_three_layer_oracle(self):
        cfg, layers = self.make(3, seed=4)
        h, r, m = rand_inputs(S=4, d=8, seed=5, mask=[True, True, False, True])
        out = np_(stack_forward(h, r, m, layers, training=False))[0]
        x = np_(h)[0]
        for layer in layers:
            x = layer_oracle(x, np_(r)[0], np_(m)[0], cfg, layer)
        assert np.max(np.abs(out - x)) <= 1e-8

    def test_empty_stack(self):
        h, r, m = rand_inputs()
        with pytest.raises(ValueError):
            stack_forward(h, r, m, [])


class TestReadout:
    def test_position_zero(self):
        x = as_tensor(np.arange(24.0).reshape(2, 3, 4))
        assert torch.equal(readout(x), x[:, 0])

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(list(range(1, 6))), st.sampled_from(MECHS))
    def test_permutation_invariance(self, perm, mech):
        cfg = AttentionConfig(d=8, n_h=2, mechanism=mech, num_types=3)
        layers = [HeteroAttentionLayer(cfg, seed=s) for s in (0, 1)]
        h, r, m = rand_inputs(S=6, d=8, seed=9, mask=[True, True, True, False, True, True])
        order = [0] + list(perm)
        a = readout(stack_forward(h, r, m, layers, training=False))
        b = readout(stack_forward(h[:, order], r[:, order], m[:, order], layers, training=False))
        assert torch.max(torch.abs(a - b)).item() <= 1e-9


def test_attention_map_weights_row_stochastic():
    logits = as_tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
    mask = torch.tensor([[True, True, False, True], [True, False, False, False]])
    w = AttentionMap(logits.masked_fill(~mask[:, None, None, :], -math.inf), mask).weights
    np.testing.assert_allclose(np_(w.sum(-1)), 1.0, atol=1e-12)
    assert (w[1, ..., 0] == 1).all()
