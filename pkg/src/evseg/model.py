"""Full segmentation pipeline: backbone -> evidential classifier -> fusion.

Groups the two parameter sets with the class frame and provides the shared
inference path used by the trainer, the evaluator and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .backbone import BackboneParams, backbone_forward, extract_patch_features
from .belief import Frame
from .enn import PrototypeBank, enn_forward_map
from .fusion import fuse_map, segment


@dataclass
class SegModel:
    frame: Frame
    backbone: BackboneParams
    bank: PrototypeBank

    def copy(self) -> "SegModel":
        return SegModel(self.frame, self.backbone.copy(), self.bank.copy())


class ForwardMaps(NamedTuple):
    probabilities: np.ndarray  # (H, W, K) backbone output
    tap: np.ndarray  # (H, W, F) feature map fed to the evidential head
    masses: np.ndarray  # (H, W, K+1) evidential output, ignorance last
    fused: np.ndarray  # (H, W, K) fused probabilities
    kappa: np.ndarray  # (H, W) per-pixel conflict
    n_conflict: int  # pixels that hit total conflict and fell back


def forward_volume(model: SegModel, image: np.ndarray) -> ForwardMaps:
    """Run the whole pipeline on one (H, W, C) image."""
    features = extract_patch_features(image, model.backbone.patch_radius)
    probs, tap = backbone_forward(features, model.backbone)
    masses = enn_forward_map(tap, model.bank)
    fused, kappa, n_conflict = fuse_map(probs, masses)
    return ForwardMaps(probs, tap, masses, fused, kappa, n_conflict)


def segment_volume(model: SegModel, image: np.ndarray, fusion: bool = True) -> np.ndarray:
    """Label map for one image; ``fusion=False`` segments from the backbone
    probabilities alone (the ablation axis)."""
    maps = forward_volume(model, image)
    source = maps.fused if fusion else maps.probabilities
    return segment(source, model.frame.labels)
