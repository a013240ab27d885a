"""Every analytic backward pass against central finite differences (float64)."""

import numpy as np
import pytest
from conftest import assert_grads_close, numeric_grad

from hrcam.ops import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    gap_backward,
    gap_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax_ce,
)

SEEDS = range(5)


class TestConvGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
    def test_all_three_gradients(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 2, 5, 5))
        kernel = rng.normal(size=(3, 2, 3, 3))
        bias = rng.normal(size=3)
        out, cache = conv2d_forward(x, kernel, bias, stride, pad)
        grad_out = rng.normal(size=out.shape)
        gx, gk, gb = conv2d_backward(grad_out, cache)

        def loss_x(xv):
            return float((grad_out * conv2d_forward(xv, kernel, bias, stride, pad)[0]).sum())

        def loss_k(kv):
            return float((grad_out * conv2d_forward(x, kv, bias, stride, pad)[0]).sum())

        def loss_b(bv):
            return float((grad_out * conv2d_forward(x, kernel, bv, stride, pad)[0]).sum())

        assert_grads_close(gx, numeric_grad(loss_x, x))
        assert_grads_close(gk, numeric_grad(loss_k, kernel))
        assert_grads_close(gb, numeric_grad(loss_b, bias))


class TestReluGradient:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_off_kink(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 6))
        x += np.sign(x) * 0.2  # keep every element away from the kink
        _, cache = relu_forward(x)
        grad_out = rng.normal(size=x.shape)
        gx = relu_backward(grad_out, cache)

        def loss(xv):
            return float((grad_out * relu_forward(xv)[0]).sum())

        assert_grads_close(gx, numeric_grad(loss, x))


class TestMaxPoolGradient:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_default_window(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 2, 4, 4))
        out, cache = maxpool_forward(x)
        grad_out = rng.normal(size=out.shape)
        gx = maxpool_backward(grad_out, cache)

        def loss(xv):
            return float((grad_out * maxpool_forward(xv)[0]).sum())

        assert_grads_close(gx, numeric_grad(loss, x))


class TestGapGradient:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_uniform_spread(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 4, 4))
        out, cache = gap_forward(x)
        grad_out = rng.normal(size=out.shape)
        gx = gap_backward(grad_out, cache)

        def loss(xv):
            return float((grad_out * gap_forward(xv)[0]).sum())

        assert_grads_close(gx, numeric_grad(loss, x))


class TestDenseGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_all_three_gradients(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(5, 2))
        b = rng.normal(size=2)
        out, cache = dense_forward(x, w, b)
        grad_out = rng.normal(size=out.shape)
        gx, gw, gb = dense_backward(grad_out, cache)

        assert_grads_close(gx, numeric_grad(lambda v: float((grad_out * dense_forward(v, w, b)[0]).sum()), x))
        assert_grads_close(gw, numeric_grad(lambda v: float((grad_out * dense_forward(x, v, b)[0]).sum()), w))
        assert_grads_close(gb, numeric_grad(lambda v: float((grad_out * dense_forward(x, w, v)[0]).sum()), b))


class TestSoftmaxCEGradient:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_logit_gradient(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(4, 2))
        targets = np.zeros((4, 2))
        targets[np.arange(4), rng.integers(0, 2, size=4)] = 1.0
        _, grad = softmax_ce(logits, targets)

        def loss(lv):
            return softmax_ce(lv, targets)[0]

        assert_grads_close(grad, numeric_grad(loss, logits))
