import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hinormer.layers import AttentionConfig, HeteroAttentionLayer, layer_forward
from hinormer.numeric import (
    NondeterministicForward,
    as_tensor,
    backward,
    grad_check,
    initialize,
    l2_normalize,
    layer_norm,
    leaky_relu,
    make_param,
    masked_softmax,
    matmul,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestKernels:
    def test_matmul_identity(self):
        x = as_tensor(np.random.default_rng(0).standard_normal((4, 3)))
        assert torch.equal(matmul(torch.eye(4, dtype=torch.float64), x), x)

    def test_matmul_shape_error(self):
        with pytest.raises(ValueError, match=r"\(2, 3\) @ \(2, 3\)"):
            matmul(torch.zeros(2, 3), torch.zeros(2, 3))

    def test_masked_softmax_example(self):
        out = masked_softmax(as_tensor([0.0, 0.0, 0.0]), torch.tensor([True, True, False]))
        assert out.tolist() == [0.5, 0.5, 0.0]

    def test_masked_softmax_all_masked(self):
        with pytest.raises(ValueError, match="no valid"):
            masked_softmax(as_tensor([[1.0, 2.0]]), torch.tensor([[False, False]]))

    def test_masked_softmax_extreme_logits(self):
        out = masked_softmax(as_tensor([1000.0, -1000.0, 999.0]))
        assert torch.isfinite(out).all()
        assert out.sum().item() == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=finite), arrays(np.bool_, (3, 5)), finite)
    def test_masked_softmax_properties(self, x, mask, c):
        mask[:, 0] = True
        m = torch.from_numpy(mask)
        y = masked_softmax(as_tensor(x), m)
        np.testing.assert_allclose(y.sum(-1).numpy(), 1.0, atol=1e-12)
        assert (y[~m] == 0).all()
        np.testing.assert_allclose(masked_softmax(as_tensor(x + c), m).numpy(), y.numpy(), atol=1e-12)

    def test_layer_norm_example(self):
        y = layer_norm(as_tensor([1.0, 2.0, 3.0]), eps=0.0)
        np.testing.assert_allclose(y.numpy(), [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-12)
        assert y[0].item() == pytest.approx(-1.22474, abs=1e-5)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (4, 6), elements=finite), st.floats(0.1, 10), st.floats(-10, 10))
    def test_layer_norm_affine_invariance(self, x, a, b):
        x = x + np.arange(6) * 0.5  # keep rows from being constant
        y = layer_norm(as_tensor(x), eps=0.0)
        y2 = layer_norm(as_tensor(a * x + b), eps=0.0)
        np.testing.assert_allclose(y2.numpy(), y.numpy(), atol=1e-9)
        np.testing.assert_allclose(y.mean(-1).numpy(), 0.0, atol=1e-9)
        np.testing.assert_allclose(((y - y.mean(-1, keepdim=True)) ** 2).mean(-1).numpy(), 1.0, atol=1e-9)

    def test_layer_norm_scale_shift(self):
        x = as_tensor(np.random.default_rng(1).standard_normal((2, 4)))
        s, b = as_tensor([1.0, 2.0, 3.0, 4.0]), as_tensor([0.5, 0.0, -0.5, 1.0])
        torch.testing.assert_close(layer_norm(x, s, b), layer_norm(x) * s + b)

    def test_l2_normalize_zero_row_and_nan(self):
        out = l2_normalize(as_tensor([[0.0, 0.0], [3.0, 4.0], [math.nan, 1.0]]))
        assert out[0].tolist() == [0.0, 0.0]
        assert out[1].tolist() == [0.6, 0.8]
        assert torch.isnan(out[2]).all()

    def test_leaky_relu(self):
        assert leaky_relu(as_tensor([-1.0, 0.0, 2.0])).tolist() == [-0.2, 0.0, 2.0]


class TestBackward:
    def test_linear_map(self):
        x = as_tensor([1.0, -2.0, 3.0])
        W = torch.zeros(2, 3, dtype=torch.float64, requires_grad=True)
        backward((W @ x).sum(), {"W": W})
        np.testing.assert_array_equal(W.grad.numpy(), np.tile(x.numpy(), (2, 1)))

    def test_unused_param_gets_zero(self):
        a = torch.ones(3, dtype=torch.float64, requires_grad=True)
        b = torch.ones(2, dtype=torch.float64, requires_grad=True)
        backward((a * 2).sum(), [a, b])
        assert b.grad.tolist() == [0.0, 0.0]
        assert a.grad.tolist() == [2.0, 2.0, 2.0]

    def test_non_scalar(self):
        a = torch.ones(3, dtype=torch.float64, requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(a * 2, [a])

    def test_linearity(self):
        rng = np.random.default_rng(2)
        W = torch.tensor(rng.standard_normal((3, 3)), requires_grad=True)
        x = as_tensor(rng.standard_normal(3))

        def grad_of(f):
            backward(f(), [W])
            return W.grad.clone()

        f = lambda: torch.tanh(W @ x).sum()
        g = lambda: (W ** 2).sum()
        combined = grad_of(lambda: 2.5 * f() - 0.5 * g())
        torch.testing.assert_close(combined, 2.5 * grad_of(f) - 0.5 * grad_of(g), rtol=0, atol=1e-12)


class _BadGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x ** 2

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * 3 * x  # correct factor is 2


class TestGradCheck:
    def test_identity_model(self):
        p = torch.nn.Parameter(as_tensor(np.random.default_rng(0).standard_normal(5)))
        report = grad_check(lambda: p.sum(), {"p": p})
        assert report.passed
        assert report.max_rel_error["p"] <= 1e-9

    def test_attention_layer(self):
        cfg = AttentionConfig(d=8, n_h=2, mechanism="gatv2", num_types=3, use_relational_bias=True)
        layer = HeteroAttentionLayer(cfg, seed=1)
        rng = np.random.default_rng(3)
        h = as_tensor(rng.standard_normal((1, 4, 8)))
        r = as_tensor(rng.random((1, 4, 3)))
        mask = torch.tensor([[True, True, True, False]])
        w = as_tensor(rng.standard_normal((1, 4, 8)))
        report = grad_check(lambda: (layer_forward(h, r, mask, cfg, layer, training=False) * w).sum(),
                            dict(layer.named_parameters()))
        assert report.passed, "\n".join(report.lines())

    def test_detects_wrong_backward(self):
        p = torch.nn.Parameter(as_tensor([0.7, -1.3]))
        report = grad_check(lambda: _BadGrad.apply(p).sum(), {"p": p})
        assert not report.passed
        assert report.failures["p"] == 2

    def test_nondeterministic_forward(self):
        p = torch.nn.Parameter(as_tensor([1.0]))
        calls = iter(range(100))
        with pytest.raises(NondeterministicForward):
            grad_check(lambda: p.sum() + next(calls), {"p": p})

    def test_restores_parameters(self):
        p = torch.nn.Parameter(as_tensor([0.3, 0.4]))
        before = p.detach().clone()
        grad_check(lambda: (p ** 3).sum(), {"p": p})
        assert torch.equal(p.detach(), before)


class TestInit:
    def test_init_rules(self):
        m = torch.nn.Module()
        m.u = make_param(4, 9, fan_in=9)
        m.z = make_param(3, init="zeros")
        m.o = make_param(3, init="ones")
        m.i = make_param(2, 3, 3, init="identity", noise=0.0)
        initialize(m, seed=0)
        assert m.u.abs().max().item() <= 1 / 3
        assert m.z.tolist() == [0.0] * 3 and m.o.tolist() == [1.0] * 3
        assert torch.equal(m.i.detach(), torch.eye(3, dtype=torch.float64).expand(2, 3, 3))

    def test_value_depends_only_on_seed_and_name(self):
        a, b = torch.nn.Module(), torch.nn.Module()
        a.w = make_param(3, 3)
        b.extra = make_param(5)
        b.w = make_param(3, 3)
        initialize(a, 4)
        initialize(b, 4)
        assert torch.equal(a.w.detach(), b.w.detach())
        initialize(b, 5)
        assert not torch.equal(a.w.detach(), b.w.detach())
