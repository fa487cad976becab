"""Semi-supervised trainer.

Schedule: on even iteration counters a labeled image is sampled and every
transformed copy's fused output is scored against the ground truth
(supervised dice+MSE); on odd counters an unlabeled image is sampled and the
original plus transformed fused outputs are scored against each other
(consistency). Gradients flow through the fusion layer into both heads;
plain SGD with separate learning rates for the backbone and the evidential
parameters.

In supervised mode (or when the unlabeled pool is empty, e.g.
labeled_fraction=1.0) every iteration is a supervised step, which makes
``mode="supervised"`` and ``mode="semi", labeled_fraction=1.0`` equivalent
run for run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .backbone import backbone_backward, backbone_forward, extract_patch_features, init_backbone
from .belief import Frame
from .dataio import LABELS, LabeledVolume
from .enn import enn_backward_map, enn_forward_map, kmeans_init
from .errors import DivergenceError, NoLabeledDataError
from .fusion import fuse_map, fuse_map_backward
from .losses import loss1, loss2
from .model import SegModel

LOG_COLUMNS = ("iteration", "parity", "loss", "lr_backbone", "lr_enn")


@dataclass(frozen=True)
class TransformSpec:
    """One image perturbation. ``gaussian_noise`` adds seeded i.i.d. noise
    (labels unchanged); ``horizontal_flip`` mirrors columns and output maps
    must be mirrored back before comparison."""

    kind: str
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian_noise", "horizontal_flip"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.sigma < 0.0:
            raise ValueError("noise sigma must be >= 0")


def default_transforms() -> tuple:
    return (TransformSpec("gaussian_noise", sigma=0.1), TransformSpec("horizontal_flip"))


def apply_transform(image: np.ndarray, spec: TransformSpec):
    """Returns ``(transformed_image, flipped)``; ``flipped`` tells the caller
    how to align output maps back to the original geometry."""
    image = np.asarray(image, dtype=float)
    if spec.kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        return image + rng.normal(0.0, spec.sigma, size=image.shape), False
    return image[:, ::-1, :].copy(), True


def align_map(arr: np.ndarray, flipped: bool) -> np.ndarray:
    """Mirror an output (or gradient) map back to the untransformed geometry.
    The mirror is an involution, so the same call undoes itself."""
    if not flipped:
        return arr
    return arr[:, ::-1, ...].copy()


@dataclass
class TrainConfig:
    mode: str = "semi"  # "semi" | "supervised"
    labeled_fraction: float = 0.5
    epochs: int = 1
    iters_per_epoch: int = 100
    lr_backbone: float = 0.001
    lr_enn: float = 0.01
    transforms: tuple = field(default_factory=default_transforms)
    mse_weight: float = 0.5
    loss_target: str = "fused"  # the loss always scores the fused output
    prototype_count: int = 16
    hidden: tuple = (32, 16)
    patch_radius: int = 1
    kmeans_sample_cap: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("semi", "supervised"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if self.lr_backbone <= 0.0 or self.lr_enn <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.loss_target != "fused":
            raise ValueError("the loss is defined on the fused output only")
        if not self.transforms:
            raise ValueError("need at least one transform")


class LogRow(NamedTuple):
    iteration: int
    parity: int  # 0 = supervised step, 1 = consistency step
    loss: float
    lr_backbone: float
    lr_enn: float


@dataclass
class TrainResult:
    model: SegModel
    log: list
    epoch_losses: list
    labeled_ids: list
    unlabeled_ids: list


def split_dataset(n: int, labeled_fraction: float, seed: int):
    """Deterministic labeled/unlabeled index split."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_labeled = int(round(labeled_fraction * n))
    if n_labeled == 0:
        raise NoLabeledDataError(
            f"labeled fraction {labeled_fraction} of {n} volumes leaves no labeled data"
        )
    return list(perm[:n_labeled]), list(perm[n_labeled:])


def one_hot(labels: np.ndarray, frame: Frame) -> np.ndarray:
    out = np.zeros((*labels.shape, frame.size))
    for k, value in enumerate(frame.labels):
        out[:, :, k] = labels == value
    return out


class _Step(NamedTuple):
    """Cached activations for one transformed copy's forward pass."""

    features: np.ndarray
    backbone_cache: tuple
    probs: np.ndarray
    tap: np.ndarray
    masses: np.ndarray
    fused: np.ndarray
    flipped: bool


def _forward_copy(image, model, flipped):
    features = extract_patch_features(image, model.backbone.patch_radius)
    probs, tap, cache = backbone_forward(features, model.backbone, with_cache=True)
    masses = enn_forward_map(tap, model.bank)
    fused, _, _ = fuse_map(probs, masses)
    return _Step(features, cache, probs, tap, masses, fused, flipped)


def _backward_copy(step, model, dfused):
    dfused = align_map(dfused, step.flipped)  # back to the copy's geometry
    dprobs, dmasses = fuse_map_backward(step.probs, step.masses, dfused)
    bank_grads, dtap = enn_backward_map(step.tap, model.bank, dmasses)
    dweights, dbiases = backbone_backward(
        step.features, model.backbone, dprobs, dtap, cache=step.backbone_cache
    )
    return dweights, dbiases, bank_grads


def _apply_sgd(model, dweights, dbiases, bank_grads, lr_backbone, lr_enn):
    for w, dw in zip(model.backbone.weights, dweights):
        w -= lr_backbone * dw
    for b, db in zip(model.backbone.biases, dbiases):
        b -= lr_backbone * db
    bank = model.bank
    bank.prototypes -= lr_enn * bank_grads.prototypes
    bank.memberships_raw -= lr_enn * bank_grads.memberships_raw
    bank.alpha_raw -= lr_enn * bank_grads.alpha_raw
    bank.gamma_raw -= lr_enn * bank_grads.gamma_raw


def _init_model(volumes, labeled_ids, config) -> SegModel:
    """Seeded backbone init, then k-means prototypes on tap features from a
    warm-up forward pass over the labeled volumes."""
    frame = Frame(LABELS)
    n_channels = volumes[0].image.shape[2]
    backbone = init_backbone(
        n_channels,
        config.patch_radius,
        hidden=tuple(config.hidden),
        n_classes=frame.size,
        seed=config.seed,
    )
    taps = []
    for idx in labeled_ids:
        features = extract_patch_features(volumes[idx].image, config.patch_radius)
        _, tap = backbone_forward(features, backbone)
        taps.append(tap.reshape(-1, backbone.tap_dim))
    all_taps = np.concatenate(taps, axis=0)
    cap = min(config.kmeans_sample_cap, all_taps.shape[0])
    picker = np.random.default_rng(config.seed + 1)
    subset = all_taps[picker.choice(all_taps.shape[0], size=cap, replace=False)]
    bank = kmeans_init(subset, config.prototype_count, frame.size, seed=config.seed + 2)
    return SegModel(frame, backbone, bank)


def train(volumes: list, config: TrainConfig) -> TrainResult:
    """Train on preprocessed labeled volumes; deterministic per config seed.

    Aborts with :class:`DivergenceError` on a non-finite loss.
    """
    if not volumes:
        raise NoLabeledDataError("empty dataset")
    labeled_ids, unlabeled_ids = split_dataset(
        len(volumes), config.labeled_fraction, config.seed
    )
    if config.mode == "supervised":
        unlabeled_ids = []

    model = _init_model(volumes, labeled_ids, config)
    rng = np.random.default_rng(config.seed + 3)

    log: list = []
    epoch_losses = []
    total_iters = config.epochs * config.iters_per_epoch
    onehot_cache: dict = {}

    for iteration in range(total_iters):
        consistency_step = (
            config.mode == "semi" and iteration % 2 == 1 and len(unlabeled_ids) > 0
        )
        if consistency_step:
            vol = volumes[unlabeled_ids[rng.integers(len(unlabeled_ids))]]
        else:
            vol = volumes[labeled_ids[rng.integers(len(labeled_ids))]]

        steps = []
        if consistency_step:
            steps.append(_forward_copy(np.asarray(vol.image, dtype=float), model, False))
        for spec in config.transforms:
            seeded = replace(spec, seed=int(rng.integers(2**63)))
            image_t, flipped = apply_transform(vol.image, seeded)
            steps.append(_forward_copy(image_t, model, flipped))

        aligned = [align_map(s.fused, s.flipped) for s in steps]
        if consistency_step:
            value, grads = loss2(aligned, mse_weight=config.mse_weight)
        else:
            key = id(vol)
            if key not in onehot_cache:
                onehot_cache[key] = one_hot(vol.labels, model.frame)
            value, grads = loss1(aligned, onehot_cache[key], mse_weight=config.mse_weight)

        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss {value!r} at iteration {iteration}")

        acc_w = [np.zeros_like(w) for w in model.backbone.weights]
        acc_b = [np.zeros_like(b) for b in model.backbone.biases]
        acc_bank = None
        for step, dfused in zip(steps, grads):
            dweights, dbiases, bank_grads = _backward_copy(step, model, dfused)
            for a, d in zip(acc_w, dweights):
                a += d
            for a, d in zip(acc_b, dbiases):
                a += d
            if acc_bank is None:
                acc_bank = bank_grads
            else:
                acc_bank.prototypes += bank_grads.prototypes
                acc_bank.memberships_raw += bank_grads.memberships_raw
                acc_bank.alpha_raw += bank_grads.alpha_raw
                acc_bank.gamma_raw += bank_grads.gamma_raw

        _apply_sgd(model, acc_w, acc_b, acc_bank, config.lr_backbone, config.lr_enn)
        log.append(LogRow(iteration, int(consistency_step), float(value),
                          config.lr_backbone, config.lr_enn))

    for epoch in range(config.epochs):
        chunk = log[epoch * config.iters_per_epoch:(epoch + 1) * config.iters_per_epoch]
        epoch_losses.append(float(np.mean([row.loss for row in chunk])) if chunk else 0.0)

    return TrainResult(model, log, epoch_losses,
                       [int(i) for i in labeled_ids], [int(i) for i in unlabeled_ids])


def write_training_log(log: list, path: str):
    """CSV log: iteration, parity (0 = supervised step, 1 = consistency
    step), loss, and the two learning rates."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow([row.iteration, row.parity, repr(row.loss),
                             repr(row.lr_backbone), repr(row.lr_enn)])


def read_training_log(path: str) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(LogRow(int(row["iteration"]), int(row["parity"]),
                               float(row["loss"]), float(row["lr_backbone"]),
                               float(row["lr_enn"])))
    return rows
