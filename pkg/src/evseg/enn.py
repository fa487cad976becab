"""Prototype-based evidential classifier.

Each prototype is a piece of evidence for the classes it belongs to; its
strength decays with squared Euclidean distance to the input. Per-prototype
masses (singletons plus ignorance) are fused by Dempster's rule, computed in
the closed O(I*K) form by the kernel backend. Trainable parameters use
unconstrained raw encodings so plain gradient steps keep the constraints:

    alpha_i = sigmoid(alpha_raw_i)            in (0, 1)
    gamma_i = gamma_raw_i**2 + 1e-6           > 0
    u_ik    = memberships_raw_ik**2 / row sum in the simplex
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .belief import Frame, MassFunction
from .errors import ShapeMismatchError

GAMMA_FLOOR = 1e-6

KMEANS_MAX_ITER = 100
KMEANS_SHIFT_TOL = 1e-6


@dataclass
class PrototypeBank:
    """Trainable ENN parameters. Mutated only by the trainer that owns it;
    treat as immutable during inference."""

    prototypes: np.ndarray  # (I, F)
    memberships_raw: np.ndarray  # (I, K)
    alpha_raw: np.ndarray  # (I,)
    gamma_raw: np.ndarray  # (I,)

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=float)
        self.memberships_raw = np.asarray(self.memberships_raw, dtype=float)
        self.alpha_raw = np.asarray(self.alpha_raw, dtype=float)
        self.gamma_raw = np.asarray(self.gamma_raw, dtype=float)
        count = self.prototypes.shape[0]
        if self.memberships_raw.shape[0] != count or self.alpha_raw.shape != (count,) \
                or self.gamma_raw.shape != (count,):
            raise ShapeMismatchError("prototype bank arrays disagree on prototype count")

    @property
    def prototype_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_classes(self) -> int:
        return self.memberships_raw.shape[1]

    def memberships(self) -> np.ndarray:
        """Normalized class memberships u (rows sum to 1)."""
        sq = self.memberships_raw**2
        totals = sq.sum(axis=1)
        if np.any(totals <= 0.0):
            raise ValueError("a membership row is entirely zero; u is undefined")
        return sq / totals[:, None]

    def alphas(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.alpha_raw))

    def gammas(self) -> np.ndarray:
        return self.gamma_raw**2 + GAMMA_FLOOR

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(
            self.prototypes.copy(),
            self.memberships_raw.copy(),
            self.alpha_raw.copy(),
            self.gamma_raw.copy(),
        )


def kmeans_init(features: np.ndarray, count: int, n_classes: int, seed: int) -> PrototypeBank:
    """Initialize a bank by k-means over feature vectors.

    Seeding is greedy farthest-point from a seeded random start; Lloyd
    iterations stop when the largest center shift drops below 1e-6 or after
    100 rounds. Memberships start uniform, alpha at 0.5, and gamma_i at
    1/(2 * mean squared distance of cluster i's members to its center).
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ShapeMismatchError(f"expected (N, F) features, got shape {features.shape}")
    if not np.isfinite(features).all():
        raise ValueError("features contain non-finite values")
    n = features.shape[0]
    if count < 1:
        raise ValueError(f"prototype count must be >= 1, got {count}")
    if n < count:
        raise ValueError(f"need at least {count} samples for {count} prototypes, got {n}")

    rng = np.random.default_rng(seed)
    centers = _farthest_point_seed(features, count, rng)
    centers, assign = _lloyd(features, centers)

    gammas = _cluster_gammas(features, centers, assign)
    gamma_raw = np.sqrt(np.maximum(gammas - GAMMA_FLOOR, 0.0))

    return PrototypeBank(
        prototypes=centers,
        memberships_raw=np.ones((count, n_classes)),
        alpha_raw=np.zeros(count),
        gamma_raw=gamma_raw,
    )


def _farthest_point_seed(features, count, rng):
    n = features.shape[0]
    centers = np.empty((count, features.shape[1]))
    centers[0] = features[rng.integers(n)]
    min_d2 = ((features - centers[0]) ** 2).sum(axis=1)
    for i in range(1, count):
        centers[i] = features[int(np.argmax(min_d2))]
        d2 = ((features - centers[i]) ** 2).sum(axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return centers


def _lloyd(features, centers):
    centers = centers.copy()
    assign = _assign(features, centers)
    for _ in range(KMEANS_MAX_ITER):
        new_centers = centers.copy()  # empty clusters keep their center
        for i in range(centers.shape[0]):
            members = assign == i
            if members.any():
                new_centers[i] = features[members].mean(axis=0)
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        assign = _assign(features, centers)
        if shift < KMEANS_SHIFT_TOL:
            break
    return centers, assign


def _assign(features, centers):
    d2 = (
        (features**2).sum(axis=1)[:, None]
        + (centers**2).sum(axis=1)[None, :]
        - 2.0 * features @ centers.T
    )
    return np.argmin(d2, axis=1)


def _cluster_gammas(features, centers, assign):
    count = centers.shape[0]
    msd = np.zeros(count)
    for i in range(count):
        members = assign == i
        if members.any():
            msd[i] = ((features[members] - centers[i]) ** 2).sum(axis=1).mean()
    # degenerate clusters (empty or zero spread) borrow the global spread
    valid = msd > 0.0
    fallback = msd[valid].mean() if valid.any() else 1.0
    msd = np.where(valid, msd, fallback)
    return 1.0 / (2.0 * msd)


def _check_features(x, bank, ndim):
    x = np.asarray(x, dtype=float)
    if x.ndim != ndim or x.shape[-1] != bank.feature_dim:
        raise ShapeMismatchError(
            f"expected feature dim {bank.feature_dim} with {ndim} axes, got shape {x.shape}"
        )
    return x


def enn_forward(x: np.ndarray, bank: PrototypeBank, frame: Frame) -> MassFunction:
    """Mass function for one feature vector. Focal sets are the frame's
    singletons plus the whole frame."""
    x = _check_features(x, bank, 1)
    if frame.size != bank.n_classes:
        raise ShapeMismatchError(
            f"frame size {frame.size} != bank classes {bank.n_classes}"
        )
    masses, _ = kernels.enn_forward(
        x[None, :], bank.prototypes, bank.memberships(), bank.alphas(), bank.gammas()
    )
    return MassFunction.from_singleton_omega(frame, masses[0])


def enn_forward_map(features: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Pixelwise forward over an (H, W, F) feature map.

    Returns (H, W, K+1) masses, ignorance last; each pixel sums to 1.
    """
    features = _check_features(features, bank, 3)
    h, w, f = features.shape
    masses, _ = kernels.enn_forward(
        features.reshape(h * w, f),
        bank.prototypes,
        bank.memberships(),
        bank.alphas(),
        bank.gammas(),
    )
    return masses.reshape(h, w, bank.n_classes + 1)


@dataclass
class BankGradients:
    prototypes: np.ndarray
    memberships_raw: np.ndarray
    alpha_raw: np.ndarray
    gamma_raw: np.ndarray


def _chain_to_raw(bank, du, dalpha, dgamma):
    """Convert derived-parameter gradients to raw-parameter gradients."""
    alpha = bank.alphas()
    dalpha_raw = dalpha * alpha * (1.0 - alpha)
    dgamma_raw = dgamma * 2.0 * bank.gamma_raw

    q = bank.memberships_raw
    totals = (q**2).sum(axis=1)[:, None]
    u = (q**2) / totals
    dmem_raw = (2.0 * q / totals) * (du - (du * u).sum(axis=1)[:, None])
    return dmem_raw, dalpha_raw, dgamma_raw


def enn_backward(x: np.ndarray, bank: PrototypeBank, upstream: np.ndarray):
    """Analytic gradients for one feature vector.

    ``upstream`` is the loss gradient w.r.t. the K+1 output masses. Returns
    ``(grads, dx)`` where grads holds raw-parameter gradients.
    """
    x = _check_features(x, bank, 1)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (bank.n_classes + 1,):
        raise ShapeMismatchError(
            f"expected upstream shape ({bank.n_classes + 1},), got {upstream.shape}"
        )
    grads, dx = enn_backward_map(x[None, None, :], bank, upstream[None, None, :])
    return grads, dx[0, 0]


def enn_backward_map(features: np.ndarray, bank: PrototypeBank, upstream: np.ndarray):
    """Pixelwise backward; parameter gradients are summed over pixels in a
    deterministic order. Returns ``(BankGradients, dfeatures)``."""
    features = _check_features(features, bank, 3)
    h, w, f = features.shape
    if upstream.shape != (h, w, bank.n_classes + 1):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} does not match features {features.shape}"
        )
    dfeats, dprotos, du, dalpha, dgamma = kernels.enn_backward(
        features.reshape(h * w, f),
        bank.prototypes,
        bank.memberships(),
        bank.alphas(),
        bank.gammas(),
        np.asarray(upstream, dtype=float).reshape(h * w, bank.n_classes + 1),
    )
    dmem_raw, dalpha_raw, dgamma_raw = _chain_to_raw(bank, du, dalpha, dgamma)
    grads = BankGradients(dprotos, dmem_raw, dalpha_raw, dgamma_raw)
    return grads, dfeats.reshape(h, w, f)
