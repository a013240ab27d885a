"""Two-phase training: the backbone end to end, then the frozen-trunk head.

Phase 1 trains all backbone parameters against the class labels. Phase 2
freezes them and trains only the multi-level head on the per-map means of
the upsampled tap stack. Both phases use Adam on the mean softmax cross
entropy and are deterministic given their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    HeadWeights,
    ModelSpec,
    Parameters,
    TapSet,
    backward_from_logits,
    build_model,
    forward_full,
    head_features,
    init_head,
)
from .ops import AdamState, adam_step, dense_backward, dense_forward, softmax_ce


@dataclass
class AugmentConfig:
    """Random geometric transforms; a field at 0/False disables that transform."""

    translate_px: int = 6
    rotate_deg_max: float = 15.0
    hflip: bool = True
    vflip: bool = True
    fill_mean: float = 0.3  # background statistics for exposed regions
    fill_sigma: float = 0.08

    def enabled(self) -> bool:
        return bool(self.translate_px or self.rotate_deg_max or self.hflip or self.vflip)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    augment: AugmentConfig | None = None
    native_gap: bool = False  # head phase only; excluded from reference runs

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def _fill_noise(rng: np.random.Generator, count: int, cfg: AugmentConfig) -> np.ndarray:
    return np.clip(rng.normal(cfg.fill_mean, cfg.fill_sigma, count), 0.0, 1.0).astype(np.float32)


def _rotate(image: np.ndarray, mask: np.ndarray, theta: float,
            rng: np.random.Generator, cfg: AugmentConfig) -> tuple[np.ndarray, np.ndarray]:
    _, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    sy = cos_t * yy + sin_t * xx + cy
    sx = -sin_t * yy + cos_t * xx + cx
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)

    syc = np.clip(sy, 0, h - 1)
    sxc = np.clip(sx, 0, w - 1)
    y0 = np.floor(syc).astype(np.intp)
    x0 = np.floor(sxc).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (syc - y0).astype(image.dtype)
    wx = (sxc - x0).astype(image.dtype)

    out = np.empty_like(image)
    for c in range(image.shape[0]):
        ch = image[c]
        top = ch[y0, x0] + wx * (ch[y0, x1] - ch[y0, x0])
        bot = ch[y1, x0] + wx * (ch[y1, x1] - ch[y1, x0])
        out[c] = top + wy * (bot - top)
        out[c][~inside] = _fill_noise(rng, int((~inside).sum()), cfg)

    # nearest-neighbor resample keeps the mask binary
    near = mask[np.rint(syc).astype(np.intp), np.rint(sxc).astype(np.intp)]
    return out, np.where(inside, near, 0).astype(mask.dtype)


def _translate(image: np.ndarray, mask: np.ndarray, dy: int, dx: int,
               rng: np.random.Generator, cfg: AugmentConfig) -> tuple[np.ndarray, np.ndarray]:
    _, h, w = image.shape
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        out[c] = _fill_noise(rng, h * w, cfg).reshape(h, w)
    new_mask = np.zeros_like(mask)
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[:, ys, xs] = image[:, yd, xd]
    new_mask[ys, xs] = mask[yd, xd]
    return out, new_mask


def augment(image: np.ndarray, mask: np.ndarray, cfg: AugmentConfig | None,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random combination of the enabled transforms to both arrays.

    The same geometric transform hits image and mask; regions pulled in from
    outside the frame get fresh background noise in the image and zeros in
    the mask. With no enabled transform this is the identity.
    """
    if mask.shape != image.shape[1:]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape[1:]}")
    if cfg is None or not cfg.enabled():
        return image, mask
    if cfg.rotate_deg_max:
        theta = math.radians(rng.uniform(-cfg.rotate_deg_max, cfg.rotate_deg_max))
        image, mask = _rotate(image, mask, theta, rng, cfg)
    if cfg.translate_px:
        dy = int(rng.integers(-cfg.translate_px, cfg.translate_px + 1))
        dx = int(rng.integers(-cfg.translate_px, cfg.translate_px + 1))
        image, mask = _translate(image, mask, dy, dx, rng, cfg)
    if cfg.hflip and rng.random() < 0.5:
        image, mask = image[:, :, ::-1].copy(), mask[:, ::-1].copy()
    if cfg.vflip and rng.random() < 0.5:
        image, mask = image[:, ::-1, :].copy(), mask[::-1, :].copy()
    return image, mask


# ---------------------------------------------------------------------------
# shared batch machinery
# ---------------------------------------------------------------------------

def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], classes), dtype=np.float32)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _stack_images(samples: list) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float32, copy=False)
    labels = np.array([s.label for s in samples], dtype=np.intp)
    return images, labels


def _augmented_batch(samples: list, idx: np.ndarray, cfg: TrainConfig,
                     rng: np.random.Generator) -> np.ndarray:
    out = []
    for i in idx:
        img, _ = augment(samples[i].image, samples[i].mask, cfg.augment, rng)
        out.append(img)
    return np.stack(out).astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# phase 1: backbone
# ---------------------------------------------------------------------------

def train_backbone(samples: list, spec: ModelSpec, cfg: TrainConfig
                   ) -> tuple[Parameters, list[float]]:
    """End-to-end backbone training; returns parameters and per-epoch losses."""
    params, _ = build_model(spec, cfg.seed)
    images, labels = _stack_images(samples)
    targets = _one_hot(labels, spec.class_count)
    states = {name: AdamState.zeros_like(p) for name, p in params.items()}
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    augment_rng = np.random.default_rng([cfg.seed, 2])

    losses: list[float] = []
    n = images.shape[0]
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if cfg.augment is not None and cfg.augment.enabled():
                batch = _augmented_batch(samples, idx, cfg, augment_rng)
            else:
                batch = images[idx]
            logits, _, cache = forward_full(params, spec, batch)
            loss, grad_logits = softmax_ce(logits, targets[idx])
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss} at epoch {epoch} step {start // cfg.batch_size}")
            grads, _ = backward_from_logits(grad_logits, cache)
            for name in params:
                adam_step(params[name], grads[name], states[name], cfg.learning_rate)
            total += loss * idx.shape[0]
        losses.append(total / n)
    return params, losses


# ---------------------------------------------------------------------------
# phase 2: frozen-trunk head
# ---------------------------------------------------------------------------

def train_gap_head(samples: list, params: Parameters, spec: ModelSpec,
                   tapset: TapSet, cfg: TrainConfig) -> tuple[HeadWeights, list[float]]:
    """Train only the multi-level head; backbone parameters are never written.

    With augmentation disabled (the default) the frozen features are computed
    once and the epochs run over those vectors, which is numerically identical
    to recomputing them.
    """
    head = init_head(tapset, spec.class_count, cfg.seed)
    images, labels = _stack_images(samples)
    targets = _one_hot(labels, spec.class_count)
    states = {"w": AdamState.zeros_like(head.weights), "b": AdamState.zeros_like(head.bias)}
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    augment_rng = np.random.default_rng([cfg.seed, 2])

    augmenting = cfg.augment is not None and cfg.augment.enabled()
    feats = None
    if not augmenting:
        feats = head_features(params, spec, images, cfg.batch_size, cfg.native_gap)

    losses: list[float] = []
    n = images.shape[0]
    for epoch in range(cfg.epochs):
        if augmenting:
            aug = _augmented_batch(samples, np.arange(n), cfg, augment_rng)
            feats = head_features(params, spec, aug, cfg.batch_size, cfg.native_gap)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = dense_forward(feats[idx], head.weights, head.bias)
            loss, grad_logits = softmax_ce(logits, targets[idx])
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss} at epoch {epoch} step {start // cfg.batch_size}")
            _, gw, gb = dense_backward(grad_logits, cache)
            adam_step(head.weights, gw, states["w"], cfg.learning_rate)
            adam_step(head.bias, gb, states["b"], cfg.learning_rate)
            total += loss * idx.shape[0]
        losses.append(total / n)
    return head, losses
