"""Class activation map synthesis: multi-level, final-layer, and gradient-weighted.

Every method returns a map at the input image's resolution. The multi-level
map is computed natively at that resolution (the tap stack is upsampled
before the weighted sum, never after); the two baselines form their map at
feature resolution and are bilinearly upsampled afterwards. All three share
the same interpolation convention so comparisons stay fair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    HeadWeights,
    ModelSpec,
    Parameters,
    TapSet,
    backward_from_logits,
    concat_features,
    derive_tapset,
    forward,
    forward_full,
)
from .ops import bilinear_upsample

METHODS = ("hrcam", "zhou", "gradcam")


@dataclass
class CamMap:
    values: np.ndarray  # (H, W) at input resolution
    class_id: int
    method: str
    normalized: bool = False


def _check_class(class_id: int, class_count: int) -> None:
    if not 0 <= class_id < class_count:
        raise ValueError(f"class_id {class_id} out of range for {class_count} classes")


def _single(image: np.ndarray, spec: ModelSpec) -> np.ndarray:
    if image.shape != tuple(spec.input_shape):
        raise ValueError(f"image shape {image.shape} does not match spec {spec.input_shape}")
    return image[None].astype(np.float32, copy=False)


def hrcam(image: np.ndarray, params: Parameters, spec: ModelSpec, tapset: TapSet,
          head: HeadWeights, class_id: int) -> CamMap:
    """Weighted sum of the full upsampled tap stack using the head weights.

    The sum carries signed values; no rectification is applied.
    """
    _check_class(class_id, spec.class_count)
    _, h, w = spec.input_shape
    _, taps = forward(params, spec, _single(image, spec))
    stack = concat_features(taps, h, w)[0]
    if stack.shape[0] != tapset.total:
        raise ValueError(f"tap stack has {stack.shape[0]} maps, head expects {tapset.total}")
    values = np.tensordot(head.weights[:, class_id], stack, axes=1)
    return CamMap(values, class_id, "hrcam")


def zhou_cam(image: np.ndarray, params: Parameters, spec: ModelSpec,
             class_id: int) -> CamMap:
    """Final-tap maps weighted by the backbone classifier's weights, then upsampled."""
    _check_class(class_id, spec.class_count)
    _, h, w = spec.input_shape
    _, taps = forward(params, spec, _single(image, spec))
    final = taps[-1]
    weights = params["fc.weight"][:, class_id]
    if weights.shape[0] != final.shape[1]:
        raise ValueError(
            f"classifier expects {weights.shape[0]} channels, final tap has {final.shape[1]}")
    low = np.tensordot(weights, final[0], axes=1)
    values = bilinear_upsample(low[None, None], h, w)[0, 0]
    return CamMap(values, class_id, "zhou")


def grad_cam(image: np.ndarray, params: Parameters, spec: ModelSpec,
             class_id: int, layer_id: int | None = None) -> CamMap:
    """Rectified sum of one tap's maps weighted by mean class-logit gradients.

    ``layer_id`` selects the tap (by its spec layer id); the default is the
    next-to-last tap.
    """
    _check_class(class_id, spec.class_count)
    tapset = derive_tapset(spec)
    if layer_id is None:
        layer_id = tapset.layer_ids[-2] if len(tapset.layer_ids) > 1 else tapset.layer_ids[-1]
    if layer_id not in tapset.layer_ids:
        raise ValueError(f"layer_id {layer_id} is not a tap point {tapset.layer_ids}")
    tap_pos = tapset.layer_ids.index(layer_id)

    _, h, w = spec.input_shape
    logits, taps, cache = forward_full(params, spec, _single(image, spec))
    grad_logits = np.zeros_like(logits)
    grad_logits[0, class_id] = 1.0
    _, tap_grads = backward_from_logits(grad_logits, cache, collect_tap_grads=True)

    feature = taps[tap_pos][0]
    alpha = tap_grads[layer_id][0].mean(axis=(1, 2))
    low = np.maximum(np.tensordot(alpha, feature, axes=1), 0)
    values = bilinear_upsample(low[None, None], h, w)[0, 0]
    return CamMap(values, class_id, "gradcam")


def normalize_cam(cam: CamMap) -> CamMap:
    """Rescale to [0, 1]; a constant map normalizes to all zeros."""
    lo = float(cam.values.min())
    hi = float(cam.values.max())
    if hi == lo:
        values = np.zeros_like(cam.values)
    else:
        values = (cam.values - lo) / (hi - lo)
    return CamMap(values, cam.class_id, cam.method, normalized=True)


def composite_strip(panels: list[np.ndarray], gap: int = 2) -> np.ndarray:
    """Horizontal strip of equal-height [0,1] panels separated by white bars."""
    if not panels:
        raise ValueError("no panels to compose")
    h = panels[0].shape[0]
    if any(p.shape[0] != h for p in panels):
        raise ValueError("panels must share their height")
    sep = np.ones((h, gap), dtype=np.float32)
    parts: list[np.ndarray] = []
    for i, p in enumerate(panels):
        if i:
            parts.append(sep)
        parts.append(np.clip(p, 0.0, 1.0))
    return np.concatenate(parts, axis=1)
