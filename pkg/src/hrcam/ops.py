"""Dense numeric kernels with hand-written backward passes.

Every layer op comes as a ``*_forward`` returning ``(output, cache)`` and a
``*_backward`` taking ``(grad_out, cache)``. Backward passes compute the
gradient of ``sum(grad_out * output)`` with respect to each forward input.
All ops are pure functions of their arguments, follow the dtype of their
inputs (float32 for training, float64 for gradient checks) and are
deterministic: same inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "relu_forward",
    "relu_backward",
    "maxpool_forward",
    "maxpool_backward",
    "MaxPoolCache",
    "gap_forward",
    "gap_backward",
    "dense_forward",
    "dense_backward",
    "softmax",
    "softmax_ce",
    "bilinear_upsample",
    "AdamState",
    "adam_step",
]

PROB_EPS = 1e-12  # log-argument clamp for saturated softmax probabilities


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    pad: int = 0,
) -> tuple[np.ndarray, tuple]:
    """2D cross-correlation (no kernel flip) with zero padding.

    ``x`` is (B,C,H,W), ``kernel`` (K,C,kh,kw), ``bias`` (K,). Output spatial
    extents are ``(H + 2*pad - kh)//stride + 1`` and likewise for width.
    Accumulation order is fixed: bias first, then kernel offsets (i,j) in
    row-major order, with the channel contraction done per offset.
    """
    _require(x.ndim == 4, f"conv input must be 4-d (B,C,H,W), got shape {x.shape}")
    _require(kernel.ndim == 4, f"conv kernel must be 4-d (K,C,kh,kw), got shape {kernel.shape}")
    B, C, H, W = x.shape
    K, Ck, kh, kw = kernel.shape
    _require(Ck == C, f"kernel expects {Ck} input channels, input has {C}")
    _require(bias.shape == (K,), f"bias must have shape ({K},), got {bias.shape}")
    _require(stride >= 1, "stride must be >= 1")
    _require(pad >= 0, "pad must be >= 0")
    _require(kh <= H + 2 * pad and kw <= W + 2 * pad,
             f"kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")

    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x

    out = np.empty((B, K, Ho, Wo), dtype=x.dtype)
    out[:] = bias.reshape(1, K, 1, 1)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + (Ho - 1) * stride + 1 : stride,
                    j : j + (Wo - 1) * stride + 1 : stride]
            xs = np.ascontiguousarray(xs).reshape(B, C, Ho * Wo)
            # contiguous kernel slice keeps matmul on the BLAS path
            k_ij = np.ascontiguousarray(kernel[:, :, i, j])
            out += np.matmul(k_ij[None], xs).reshape(B, K, Ho, Wo)
    cache = (x, kernel, stride, pad)
    return out, cache


def conv2d_backward(grad_out: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d with respect to (input, kernel, bias)."""
    if cache is None:
        raise RuntimeError("conv2d_backward called without a forward cache")
    x, kernel, stride, pad = cache
    B, C, H, W = x.shape
    K, _, kh, kw = kernel.shape
    _, _, Ho, Wo = grad_out.shape

    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_kernel = np.zeros_like(kernel)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    grad_xp = np.zeros_like(xp)

    g2 = np.ascontiguousarray(grad_out).reshape(B, K, Ho * Wo)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + (Ho - 1) * stride + 1, stride)
            cols = slice(j, j + (Wo - 1) * stride + 1, stride)
            xs = np.ascontiguousarray(xp[:, :, rows, cols]).reshape(B, C, Ho * Wo)
            # (K,C) contraction over batch and spatial positions
            grad_kernel[:, :, i, j] = np.einsum("bkp,bcp->kc", g2, xs, optimize=True)
            k_ij = np.ascontiguousarray(kernel[:, :, i, j])
            gx = np.matmul(k_ij.T[None], g2).reshape(B, C, Ho, Wo)
            grad_xp[:, :, rows, cols] += gx

    grad_x = grad_xp[:, :, pad : pad + H, pad : pad + W] if pad else grad_xp
    return grad_x, grad_kernel, grad_bias


# ---------------------------------------------------------------------------
# activations and pooling
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0), x


def relu_backward(grad_out: np.ndarray, cache: np.ndarray) -> np.ndarray:
    # x == 0 gets zero gradient
    return grad_out * (cache > 0)


class MaxPoolCache(NamedTuple):
    indices: np.ndarray  # (B,C,Ho,Wo) row-major offset of the max in its window
    in_shape: tuple
    window: int
    stride: int


def maxpool_forward(x: np.ndarray, window: int = 2, stride: int = 2) -> tuple[np.ndarray, MaxPoolCache]:
    """Max pooling; ties break to the first (row-major) maximum in the window."""
    _require(x.ndim == 4, f"maxpool input must be 4-d, got shape {x.shape}")
    B, C, H, W = x.shape
    _require(window >= 1 and stride >= 1, "window and stride must be >= 1")
    _require(window <= H and window <= W, f"window {window} exceeds input {H}x{W}")
    _require((H - window) % stride == 0 and (W - window) % stride == 0,
             f"input {H}x{W} not divisible for window={window} stride={stride}")
    Ho = (H - window) // stride + 1
    Wo = (W - window) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(B, C, Ho, Wo, window * window)
    idx = np.argmax(win, axis=4)
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return out, MaxPoolCache(idx, x.shape, window, stride)


def maxpool_backward(grad_out: np.ndarray, cache: MaxPoolCache) -> np.ndarray:
    if cache is None:
        raise RuntimeError("maxpool_backward called without a forward cache")
    idx, in_shape, window, stride = cache
    B, C, H, W = in_shape
    _, _, Ho, Wo = grad_out.shape

    if window == stride:
        # non-overlapping windows: scatter by reshaping, no accumulation needed
        scatter = np.zeros((B, C, Ho, Wo, window * window), dtype=grad_out.dtype)
        np.put_along_axis(scatter, idx[..., None], grad_out[..., None], axis=4)
        scatter = scatter.reshape(B, C, Ho, Wo, window, window)
        return scatter.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)

    grad_x = np.zeros(in_shape, dtype=grad_out.dtype)
    oy, ox = np.meshgrid(np.arange(Ho), np.arange(Wo), indexing="ij")
    rows = oy[None, None] * stride + idx // window
    cols = ox[None, None] * stride + idx % window
    b = np.arange(B)[:, None, None, None]
    c = np.arange(C)[None, :, None, None]
    np.add.at(grad_x, (b, c, rows, cols), grad_out)
    return grad_x


def gap_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Global average pooling: (B,C,H,W) -> (B,C) spatial means.

    Accumulates in float64 so constant maps reduce to their constant exactly.
    """
    _require(x.ndim == 4, f"gap input must be 4-d, got shape {x.shape}")
    return x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype), x.shape


def gap_backward(grad_out: np.ndarray, cache: tuple) -> np.ndarray:
    B, C, H, W = cache
    g = grad_out / np.asarray(H * W, dtype=grad_out.dtype)
    return np.broadcast_to(g[:, :, None, None], (B, C, H, W)).copy()


# ---------------------------------------------------------------------------
# dense / loss
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Affine map: (B,N) @ (N,classes) + bias."""
    _require(x.ndim == 2 and weights.ndim == 2, "dense expects 2-d input and weights")
    _require(x.shape[1] == weights.shape[0],
             f"inner dimensions differ: input {x.shape[1]} vs weights {weights.shape[0]}")
    _require(bias.shape == (weights.shape[1],),
             f"bias must have shape ({weights.shape[1]},), got {bias.shape}")
    return x @ weights + bias, (x, weights)


def dense_backward(grad_out: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, weights = cache
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy of softmax probabilities against one-hot targets.

    Returns ``(loss, grad_logits)`` with ``grad_logits = (p - y) / S``.
    Probabilities are clamped to ``[1e-12, 1 - 1e-12]`` before the log.
    """
    _require(logits.shape == targets.shape,
             f"logits {logits.shape} and targets {targets.shape} differ")
    one_hot = np.all((targets == 0) | (targets == 1), axis=1) & (targets.sum(axis=1) == 1)
    if not np.all(one_hot):
        raise ValueError(f"targets rows must be one-hot; offending rows {np.where(~one_hot)[0].tolist()}")

    S = logits.shape[0]
    p = np.clip(softmax(logits), PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-(targets * np.log(p)).sum() / S)
    grad = (p - targets.astype(p.dtype)) / np.asarray(S, dtype=p.dtype)
    return loss, grad


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def bilinear_upsample(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling to (out_h, out_w) using half-pixel centers.

    Source coordinate for output index i is ``(i + 0.5) * h / out_h - 0.5``,
    clamped to ``[0, h - 1]``. The lerp form ``v0 + w * (v1 - v0)`` keeps
    constant inputs exactly constant and scale 1 an exact identity.
    """
    _require(x.ndim == 4, f"upsample input must be 4-d, got shape {x.shape}")
    B, C, h, w = x.shape
    _require(out_h >= h and out_w >= w,
             f"target {out_h}x{out_w} must not shrink input {h}x{w}")

    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0).astype(x.dtype)
    wx = (sx - x0).astype(x.dtype)

    top = x[:, :, y0[:, None], x0[None, :]]
    top = top + wx * (x[:, :, y0[:, None], x1[None, :]] - top)
    bot = x[:, :, y1[:, None], x0[None, :]]
    bot = bot + wx * (x[:, :, y1[:, None], x1[None, :]] - bot)
    return top + wy[:, None] * (bot - top)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moments; ``step_count`` is shared by both moments."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update, in place on ``param`` and ``state``."""
    _require(param.shape == grad.shape,
             f"param {param.shape} and grad {grad.shape} differ")
    _require(state.first_moment.shape == param.shape, "Adam state does not match parameter shape")

    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m[:] = beta1 * m + (1.0 - beta1) * grad
    v[:] = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= ((lr * m_hat) / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return param, state
