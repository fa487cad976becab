"""Training losses on probability maps.

Both losses pair a global soft-Dice term (elementwise-product intersection,
summed over all pixels and classes) with a mean-squared-error term weighted
by 0.5 so the two terms share scale:

    supervised:   sum_t [ 1 - 2*sum(s_t*G) / (sum(s_t) + sum(G)) + 0.5*mean((s_t-G)^2) ]
    consistency:  same form over all unordered pairs of outputs.

The dice term vanishes only where the two maps agree *and* are binary, so
the consistency loss both aligns and sharpens predictions.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError

MSE_WEIGHT = 0.5


def _as_stack(outputs, reference_shape=None):
    arrays = [np.asarray(s, dtype=float) for s in outputs]
    if not arrays:
        raise ValueError("need at least one output map")
    shape = reference_shape or arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise ShapeMismatchError(
                f"output shapes disagree: {a.shape} vs {shape}"
            )
    return arrays, shape


def _dice_mse_pair(a, b, mse_weight):
    """Loss and its gradients w.r.t. both maps for one (a, b) pair."""
    inter = float((a * b).sum())
    denom = float(a.sum() + b.sum())
    if denom == 0.0:
        raise ValueError("both maps sum to zero; dice term undefined")
    n_elem = a.size

    loss = 1.0 - 2.0 * inter / denom + mse_weight * ((a - b) ** 2).mean()

    # d/da of -2*inter/denom, with d(inter)/da = b and d(denom)/da = 1
    da = -2.0 * (b * denom - inter) / denom**2 + 2.0 * mse_weight * (a - b) / n_elem
    db = -2.0 * (a * denom - inter) / denom**2 + 2.0 * mse_weight * (b - a) / n_elem
    return loss, da, db


def loss1(outputs, target, mse_weight: float = MSE_WEIGHT):
    """Supervised loss: each output map against the one-hot target.

    ``outputs`` are the probability maps for the transformed copies, already
    aligned to the target's geometry. Returns ``(value, grads)`` with one
    gradient array per output.
    """
    target = np.asarray(target, dtype=float)
    maps, _ = _as_stack(outputs, target.shape)
    total = 0.0
    grads = []
    for s in maps:
        value, ds, _ = _dice_mse_pair(s, target, mse_weight)
        total += value
        grads.append(ds)
    return total, grads


def loss2(outputs, mse_weight: float = MSE_WEIGHT):
    """Consistency loss over all unordered pairs of aligned output maps
    (the untransformed output first, by convention). Symmetric in its
    arguments. Returns ``(value, grads)``."""
    maps, shape = _as_stack(outputs)
    if len(maps) < 2:
        raise ValueError("consistency loss needs at least two outputs")
    total = 0.0
    grads = [np.zeros(shape) for _ in maps]
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            value, di, dj = _dice_mse_pair(maps[i], maps[j], mse_weight)
            total += value
            grads[i] += di
            grads[j] += dj
    return total, grads
