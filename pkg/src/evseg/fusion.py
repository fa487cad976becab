"""Evidential fusion layer: combine the probabilistic and evidential heads.

Per pixel, the backbone's probability vector (read as a Bayesian mass) is
combined with the evidential mass by Dempster's rule. Because one source is
Bayesian the fused output is again a probability vector; the conflict kappa
between the two sources is exported as the per-pixel uncertainty score.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .belief import TOTAL_CONFLICT_CEIL
from .errors import ShapeMismatchError, TotalConflictError


def fuse_pixel(p: np.ndarray, m: np.ndarray):
    """Fuse one pixel: probability vector p (K,) with mass vector m (K+1,
    ignorance last). Returns ``(fused, kappa)`` with fused summing to 1.

    Raises :class:`TotalConflictError` when the sources fully contradict
    (kappa = 1), where Dempster's rule is undefined.
    """
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    if p.ndim != 1 or m.shape != (p.shape[0] + 1,):
        raise ShapeMismatchError(
            f"expected shapes (K,) and (K+1,), got {p.shape} and {m.shape}"
        )
    fused, kappa, n_conflict = kernels.fuse_forward(p[None, :], m[None, :])
    if n_conflict:
        raise TotalConflictError(
            "pixel sources are in total conflict (kappa = 1); combination undefined"
        )
    return fused[0], float(kappa[0])


def fuse_map(p_map: np.ndarray, m_map: np.ndarray):
    """Pixelwise fusion over (H, W, K) probabilities and (H, W, K+1) masses.

    Returns ``(fused, kappa, n_conflict)``. A pixel in total conflict does
    not abort the whole image: it falls back to the probability source with
    kappa pinned just below 1, and is counted in ``n_conflict``.
    """
    p_map = np.asarray(p_map, dtype=float)
    m_map = np.asarray(m_map, dtype=float)
    if p_map.ndim != 3 or m_map.ndim != 3:
        raise ShapeMismatchError("fuse_map expects (H, W, K) and (H, W, K+1) maps")
    h, w, k = p_map.shape
    if m_map.shape != (h, w, k + 1):
        raise ShapeMismatchError(
            f"mass map shape {m_map.shape} does not match probabilities {p_map.shape}"
        )
    fused, kappa, n_conflict = kernels.fuse_forward(
        p_map.reshape(h * w, k), m_map.reshape(h * w, k + 1)
    )
    return fused.reshape(h, w, k), kappa.reshape(h, w), n_conflict


def fuse_map_backward(p_map: np.ndarray, m_map: np.ndarray, upstream: np.ndarray):
    """Gradients of the fused map w.r.t. both sources (kappa carries no
    loss in training, so it takes no upstream)."""
    h, w, k = p_map.shape
    dp, dm = kernels.fuse_backward(
        p_map.reshape(h * w, k),
        m_map.reshape(h * w, k + 1),
        np.asarray(upstream, dtype=float).reshape(h * w, k),
    )
    return dp.reshape(h, w, k), dm.reshape(h, w, k + 1)


def segment(fused: np.ndarray, labels=(0, 1, 2, 4)) -> np.ndarray:
    """Per-pixel argmax mapped through the frame's labels; ties break toward
    the lowest class index."""
    fused = np.asarray(fused, dtype=float)
    if fused.ndim != 3 or fused.shape[2] != len(labels):
        raise ShapeMismatchError(
            f"expected (H, W, {len(labels)}) probabilities, got {fused.shape}"
        )
    lut = np.asarray(labels)
    return lut[np.argmax(fused, axis=2)]


def conflict_valid(kappa: np.ndarray) -> bool:
    """True when every conflict value lies in [0, 1)."""
    kappa = np.asarray(kappa)
    return bool((kappa >= 0.0).all() and (kappa <= TOTAL_CONFLICT_CEIL).all())
