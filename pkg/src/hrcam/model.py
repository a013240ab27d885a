"""Configurable small CNN with taps before every max-pool.

A :class:`ModelSpec` is an ordered list of layer descriptors over the
vocabulary conv / relu / maxpool / residual. Convolutions are stride 1 with
same-padding so spatial extents only change at pools. One tap point is
placed immediately before every max-pool; the ordered tap channel counts
define the width N of the multi-level head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .ops import (
    bilinear_upsample,
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
    softmax,
)

Parameters = dict[str, np.ndarray]


@dataclass
class ModelSpec:
    input_shape: tuple[int, int, int]  # (C, H, W)
    class_count: int = 2
    layers: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        _plan(self)

    def to_json_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "layers": self.layers,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(d["input_shape"]), int(d["class_count"]), d["layers"])


@dataclass
class TapSet:
    """Ordered pre-max-pool tap points.

    ``layer_ids`` holds the spec index of each max-pool; the tap is that
    pool's input. ``channels`` are the per-tap feature-map counts, so the
    head width is their sum.
    """

    layer_ids: list[int]
    channels: list[int]

    @property
    def total(self) -> int:
        return sum(self.channels)


@dataclass
class HeadWeights:
    weights: np.ndarray  # (N, class_count)
    bias: np.ndarray  # (class_count,)


def conv(out_channels: int, kernel: int = 3) -> dict:
    return {"op": "conv", "out_channels": out_channels, "kernel": kernel}


def relu() -> dict:
    return {"op": "relu"}


def maxpool() -> dict:
    return {"op": "maxpool"}


def residual(body: list[dict]) -> dict:
    return {"op": "residual", "body": body}


def stacked_spec(
    widths: tuple[int, ...] = (16, 32, 64),
    input_shape: tuple[int, int, int] = (1, 64, 64),
    kernel: int = 3,
    class_count: int = 2,
    use_residual: bool = False,
) -> ModelSpec:
    """Default backbone: per width, two 3x3 conv+relu then a 2x2 max-pool."""
    layers: list[dict] = []
    for w in widths:
        layers += [conv(w, kernel), relu()]
        if use_residual:
            layers.append(residual([conv(w, kernel), relu()]))
        else:
            layers += [conv(w, kernel), relu()]
        layers.append(maxpool())
    return ModelSpec(input_shape, class_count, layers)


# ---------------------------------------------------------------------------
# spec planning / validation
# ---------------------------------------------------------------------------

def _plan_layers(layers: list[dict], ch: int, hw: tuple[int, int], counter: list[int],
                 allow_pool: bool, conv_seen: bool) -> tuple[list[dict], int, tuple[int, int], bool]:
    nodes: list[dict] = []
    h, w = hw
    for idx, layer in enumerate(layers):
        op = layer.get("op")
        if op == "conv":
            k = int(layer.get("kernel", 3))
            out_ch = int(layer["out_channels"])
            if out_ch < 1 or k < 1:
                raise ValueError(f"conv layer {idx}: out_channels and kernel must be positive")
            nodes.append({"op": "conv", "name": f"conv{counter[0]}", "in_ch": ch,
                          "out_ch": out_ch, "kernel": k, "pad": k // 2})
            counter[0] += 1
            ch = out_ch
            conv_seen = True
        elif op == "relu":
            nodes.append({"op": "relu"})
        elif op == "maxpool":
            if not allow_pool:
                raise ValueError("maxpool is not allowed inside a residual body")
            if not conv_seen:
                raise ValueError(f"maxpool at layer {idx} has no preceding conv")
            if h % 2 or w % 2:
                raise ValueError(f"maxpool at layer {idx}: extent {h}x{w} not divisible by 2")
            nodes.append({"op": "maxpool", "tap_id": idx, "tap_ch": ch})
            h, w = h // 2, w // 2
        elif op == "residual":
            body, body_ch, body_hw, conv_seen = _plan_layers(
                layer.get("body", []), ch, (h, w), counter, False, conv_seen)
            if body_ch != ch or body_hw != (h, w):
                raise ValueError(
                    f"residual body at layer {idx} changes shape "
                    f"({ch},{h},{w}) -> ({body_ch},{body_hw[0]},{body_hw[1]})")
            nodes.append({"op": "residual", "body": body})
        else:
            raise ValueError(f"unknown layer op {op!r} at layer {idx}")
    return nodes, ch, (h, w), conv_seen


def _plan(spec: ModelSpec) -> tuple[list[dict], int, tuple[int, int]]:
    c, h, w = spec.input_shape
    if c < 1 or h < 1 or w < 1:
        raise ValueError(f"invalid input shape {spec.input_shape}")
    if spec.class_count < 2:
        raise ValueError("class_count must be >= 2")
    nodes, out_ch, out_hw, _ = _plan_layers(spec.layers, c, (h, w), [0], True, False)
    if not any(n["op"] == "maxpool" for n in nodes):
        raise ValueError("model spec must contain at least one maxpool")
    return nodes, out_ch, out_hw


def derive_tapset(spec: ModelSpec) -> TapSet:
    nodes, _, _ = _plan(spec)
    pools = [n for n in nodes if n["op"] == "maxpool"]
    return TapSet([n["tap_id"] for n in pools], [n["tap_ch"] for n in pools])


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def build_model(spec: ModelSpec, seed: int) -> tuple[Parameters, TapSet]:
    """He-initialized parameters plus the derived tap set."""
    nodes, out_ch, _ = _plan(spec)
    rng = np.random.default_rng(seed)
    params: Parameters = {}

    def init(nodes: list[dict]) -> None:
        for n in nodes:
            if n["op"] == "conv":
                fan_in = n["in_ch"] * n["kernel"] * n["kernel"]
                scale = np.float32(np.sqrt(2.0 / fan_in))
                params[n["name"] + ".kernel"] = scale * rng.standard_normal(
                    (n["out_ch"], n["in_ch"], n["kernel"], n["kernel"]), dtype=np.float32)
                params[n["name"] + ".bias"] = np.zeros(n["out_ch"], dtype=np.float32)
            elif n["op"] == "residual":
                init(n["body"])

    init(nodes)
    scale = np.float32(np.sqrt(2.0 / out_ch))
    params["fc.weight"] = scale * rng.standard_normal((out_ch, spec.class_count), dtype=np.float32)
    params["fc.bias"] = np.zeros(spec.class_count, dtype=np.float32)
    return params, derive_tapset(spec)


def init_head(tapset: TapSet, class_count: int, seed: int) -> HeadWeights:
    rng = np.random.default_rng(seed)
    scale = np.float32(np.sqrt(2.0 / tapset.total))
    return HeadWeights(
        scale * rng.standard_normal((tapset.total, class_count), dtype=np.float32),
        np.zeros(class_count, dtype=np.float32),
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward_layers(nodes: list[dict], params: Parameters, x: np.ndarray,
                    taps: list[np.ndarray] | None) -> tuple[np.ndarray, list]:
    caches = []
    for n in nodes:
        if n["op"] == "conv":
            x, cache = conv2d_forward(x, params[n["name"] + ".kernel"],
                                      params[n["name"] + ".bias"], 1, n["pad"])
        elif n["op"] == "relu":
            x, cache = relu_forward(x)
        elif n["op"] == "maxpool":
            if taps is not None:
                taps.append(x)
            x, cache = maxpool_forward(x, 2, 2)
        else:  # residual
            body_out, cache = _forward_layers(n["body"], params, x, None)
            x = body_out + x
        caches.append(cache)
    return x, caches


def _backward_layers(nodes: list[dict], caches: list, grad: np.ndarray,
                     grads: Parameters, tap_grads: dict | None) -> np.ndarray:
    for n, cache in zip(reversed(nodes), reversed(caches)):
        if n["op"] == "conv":
            grad, gk, gb = conv2d_backward(grad, cache)
            grads[n["name"] + ".kernel"] = gk
            grads[n["name"] + ".bias"] = gb
        elif n["op"] == "relu":
            grad = relu_backward(grad, cache)
        elif n["op"] == "maxpool":
            grad = maxpool_backward(grad, cache)
            if tap_grads is not None:
                tap_grads[n["tap_id"]] = grad
        else:
            grad = _backward_layers(n["body"], cache, grad, grads, None) + grad
    return grad


def _check_images(spec: ModelSpec, images: np.ndarray) -> None:
    if images.ndim != 4 or tuple(images.shape[1:]) != tuple(spec.input_shape):
        raise ValueError(
            f"images must be (B,{','.join(map(str, spec.input_shape))}), got {images.shape}")


def forward_full(params: Parameters, spec: ModelSpec, images: np.ndarray
                 ) -> tuple[np.ndarray, list[np.ndarray], tuple]:
    """Forward pass keeping every layer cache (for training and Grad-CAM)."""
    _check_images(spec, images)
    nodes, _, _ = _plan(spec)
    taps: list[np.ndarray] = []
    out, trunk_caches = _forward_layers(nodes, params, images, taps)
    pooled, gap_cache = gap_forward(out)
    logits, fc_cache = dense_forward(pooled, params["fc.weight"], params["fc.bias"])
    return logits, taps, (nodes, trunk_caches, gap_cache, fc_cache)


def forward(params: Parameters, spec: ModelSpec, images: np.ndarray
            ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Class logits plus the pre-max-pool tap activations in tap order."""
    logits, taps, _ = forward_full(params, spec, images)
    return logits, taps


def backward_from_logits(grad_logits: np.ndarray, cache: tuple,
                         collect_tap_grads: bool = False
                         ) -> tuple[Parameters, dict[int, np.ndarray]]:
    """Parameter gradients (and optionally per-tap activation gradients)."""
    nodes, trunk_caches, gap_cache, fc_cache = cache
    grad_pooled, gw, gb = dense_backward(grad_logits, fc_cache)
    grads: Parameters = {"fc.weight": gw, "fc.bias": gb}
    tap_grads: dict[int, np.ndarray] | None = {} if collect_tap_grads else None
    grad = gap_backward(grad_pooled, gap_cache)
    _backward_layers(nodes, trunk_caches, grad, grads, tap_grads)
    return grads, (tap_grads or {})


# ---------------------------------------------------------------------------
# multi-level head path
# ---------------------------------------------------------------------------

def concat_features(taps: list[np.ndarray], out_h: int, out_w: int) -> np.ndarray:
    """Upsample each tap to (out_h, out_w) and concatenate along channels."""
    return np.concatenate([bilinear_upsample(t, out_h, out_w) for t in taps], axis=1)


def head_features(params: Parameters, spec: ModelSpec, images: np.ndarray,
                  batch_size: int = 32, native_gap: bool = False) -> np.ndarray:
    """Per-sample head inputs: spatial means of the upsampled tap stack.

    ``native_gap`` averages taps at their native resolution instead, a fast
    path that skips the upsampling; it is excluded from reference runs.
    """
    _, h, w = spec.input_shape
    rows = []
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start : start + batch_size]
        _, taps = forward(params, spec, chunk)
        if native_gap:
            feats = np.concatenate([gap_forward(t)[0] for t in taps], axis=1)
        else:
            feats = gap_forward(concat_features(taps, h, w))[0]
        rows.append(feats)
    return np.concatenate(rows, axis=0)


def predict(image: np.ndarray, params: Parameters, spec: ModelSpec,
            tapset: TapSet, head: HeadWeights) -> np.ndarray:
    """Class probabilities from the multi-level head for one (C,H,W) image."""
    feats = head_features(params, spec, image[None].astype(np.float32, copy=False))
    if feats.shape[1] != tapset.total:
        raise ValueError(f"head expects {tapset.total} features, taps give {feats.shape[1]}")
    logits, _ = dense_forward(feats, head.weights, head.bias)
    return softmax(logits)[0]


# ---------------------------------------------------------------------------
# container IO
# ---------------------------------------------------------------------------

HEAD_WEIGHT_KEY = "head.weight"
HEAD_BIAS_KEY = "head.bias"


def save_trained(path, spec: ModelSpec, tapset: TapSet, params: Parameters,
                 head: HeadWeights | None = None, meta: dict | None = None) -> None:
    header = {
        "spec": spec.to_json_dict(),
        "tapset": {"layer_ids": tapset.layer_ids, "channels": tapset.channels},
        "meta": meta or {},
    }
    tensors = dict(params)
    if head is not None:
        tensors[HEAD_WEIGHT_KEY] = head.weights
        tensors[HEAD_BIAS_KEY] = head.bias
    fileio.save_model(path, header, tensors)


def load_trained(path) -> tuple[ModelSpec, TapSet, Parameters, HeadWeights | None, dict]:
    header, tensors = fileio.load_model(path)
    spec = ModelSpec.from_json_dict(header["spec"])
    tapset = TapSet(list(header["tapset"]["layer_ids"]), list(header["tapset"]["channels"]))
    head = None
    if HEAD_WEIGHT_KEY in tensors:
        head = HeadWeights(tensors.pop(HEAD_WEIGHT_KEY), tensors.pop(HEAD_BIAS_KEY))
    return spec, tapset, tensors, head, header.get("meta", {})
