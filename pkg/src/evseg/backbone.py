"""Desk-scale probabilistic pixel classifier.

A per-pixel MLP over flattened local patches stands in for a convolutional
segmentation net: it produces the per-pixel class probability map and exposes
its last hidden activation as the feature map consumed by the evidential
classifier. ReLU hidden layers, softmax output, He-style seeded init.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError


@dataclass
class BackboneParams:
    """MLP weights plus the patch geometry they were built for."""

    patch_radius: int
    n_channels: int
    weights: list  # per layer, (fan_in, fan_out)
    biases: list  # per layer, (fan_out,)

    @property
    def feature_dim(self) -> int:
        side = 2 * self.patch_radius + 1
        return self.n_channels * side * side + 2

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def tap_dim(self) -> int:
        """Width of the exposed feature map (last hidden layer)."""
        return self.weights[-2].shape[1]

    def copy(self) -> "BackboneParams":
        return BackboneParams(
            self.patch_radius,
            self.n_channels,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_backbone(
    n_channels: int,
    patch_radius: int,
    hidden: tuple = (32, 16),
    n_classes: int = 4,
    seed: int = 0,
) -> BackboneParams:
    """He-initialized MLP: scale sqrt(2/fan_in), zero biases, seeded."""
    if len(hidden) < 1:
        raise ValueError("need at least one hidden layer for the feature tap")
    side = 2 * patch_radius + 1
    widths = [n_channels * side * side + 2, *hidden, n_classes]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return BackboneParams(patch_radius, n_channels, weights, biases)


def extract_patch_features(image: np.ndarray, radius: int) -> np.ndarray:
    """Per-pixel input representation: the flattened (2r+1)^2 neighborhood of
    every channel under reflect padding, plus normalized (x/W, y/H) coords.

    Returns (H, W, C*(2r+1)^2 + 2).
    """
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ShapeMismatchError(f"expected (H, W, C) image, got shape {image.shape}")
    h, w, c = image.shape
    if h == 0 or w == 0:
        raise ValueError("cannot extract features from an empty image")
    if radius < 0:
        raise ValueError(f"patch radius must be >= 0, got {radius}")
    if radius > 0 and (h <= radius or w <= radius):
        raise ValueError(
            f"image {h}x{w} too small for reflect padding with radius {radius}"
        )

    side = 2 * radius + 1
    if radius > 0:
        padded = np.pad(image, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
        windows = np.lib.stride_tricks.sliding_window_view(padded, (side, side), axis=(0, 1))
        patches = windows.reshape(h, w, c * side * side)
    else:
        patches = image.reshape(h, w, c)

    xs = (np.arange(w) / w)[None, :, None].repeat(h, axis=0)
    ys = (np.arange(h) / h)[:, None, None].repeat(w, axis=1)
    return np.concatenate([patches, xs, ys], axis=2)


def _flatten_leading(arr, dim):
    arr = np.asarray(arr, dtype=float)
    if arr.shape[-1] != dim:
        raise ShapeMismatchError(f"expected last axis {dim}, got shape {arr.shape}")
    lead = arr.shape[:-1]
    return arr.reshape(-1, dim), lead


def _softmax(logits):
    shifted = logits - logits.max(axis=1)[:, None]
    e = np.exp(shifted)
    return e / e.sum(axis=1)[:, None]


def backbone_forward(features: np.ndarray, params: BackboneParams, with_cache: bool = False):
    """Forward pass. Returns ``(probs, tap)`` with shapes (..., K) and
    (..., tap_dim); with ``with_cache`` a third element carries the
    activations needed by :func:`backbone_backward`."""
    flat, lead = _flatten_leading(features, params.feature_dim)
    acts = [flat]
    pre = None
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        pre = acts[-1] @ w + b
        acts.append(np.maximum(pre, 0.0))
    logits = acts[-1] @ params.weights[-1] + params.biases[-1]
    probs = _softmax(logits)

    out_p = probs.reshape(*lead, params.n_classes)
    out_tap = acts[-1].reshape(*lead, params.tap_dim)
    if with_cache:
        return out_p, out_tap, (acts, probs)
    return out_p, out_tap


def backbone_backward(
    features: np.ndarray,
    params: BackboneParams,
    dprobs: np.ndarray,
    dtap: np.ndarray,
    cache=None,
):
    """Parameter gradients given upstream gradients on the probability map
    and on the feature tap. Returns ``(dweights, dbiases)`` lists."""
    flat, lead = _flatten_leading(features, params.feature_dim)
    if cache is None:
        _, _, cache = backbone_forward(features, params, with_cache=True)
    acts, probs = cache

    k = params.n_classes
    gp = np.asarray(dprobs, dtype=float).reshape(-1, k)
    gt = np.asarray(dtap, dtype=float).reshape(-1, params.tap_dim)
    if gp.shape[0] != flat.shape[0] or gt.shape[0] != flat.shape[0]:
        raise ShapeMismatchError("upstream gradients do not match feature pixel count")

    # softmax backward: dlogits = p * (g - <g, p>)
    dlogits = probs * (gp - (gp * probs).sum(axis=1)[:, None])

    dweights = [None] * len(params.weights)
    dbiases = [None] * len(params.biases)
    dweights[-1] = acts[-1].T @ dlogits
    dbiases[-1] = dlogits.sum(axis=0)

    dh = dlogits @ params.weights[-1].T + gt
    for layer in range(len(params.weights) - 2, -1, -1):
        dpre = dh * (acts[layer + 1] > 0.0)
        dweights[layer] = acts[layer].T @ dpre
        dbiases[layer] = dpre.sum(axis=0)
        if layer > 0:
            dh = dpre @ params.weights[layer].T
    return dweights, dbiases
