"""Belief-function-based semi-supervised image segmentation.

A Dempster-Shafer evidence core, a prototype-based evidential classifier, a
probabilistic backbone, probability/evidence fusion with per-pixel conflict
maps, a consistency-based semi-supervised trainer, and the usual overlap and
surface metrics, exercised on synthetic multi-modality phantoms.
"""

from .belief import (
    CombinationResult,
    Frame,
    MassFunction,
    bayesian_from_probabilities,
    combine_dempster,
    combine_many,
    decide,
    vacuous,
)
from .backbone import BackboneParams, backbone_backward, backbone_forward, \
    extract_patch_features, init_backbone
from .dataio import LabeledVolume, PhantomConfig, generate_phantom, load_volume, \
    preprocess, read_tensor, save_volume, write_pgm, write_tensor
from .enn import PrototypeBank, enn_backward, enn_backward_map, enn_forward, \
    enn_forward_map, kmeans_init
from .fusion import fuse_map, fuse_pixel, segment
from .losses import loss1, loss2
from .metrics import MetricsReport, confusion_counts, dice, evaluate, hausdorff, \
    ppv, region_mask, sensitivity
from .model import SegModel, forward_volume, segment_volume
from .model_io import load_model, save_model
from .semisup import TrainConfig, TransformSpec, apply_transform, train

__version__ = "0.1.0"

__all__ = [
    "BackboneParams", "CombinationResult", "Frame", "LabeledVolume",
    "MassFunction", "MetricsReport", "PhantomConfig", "PrototypeBank",
    "SegModel", "TrainConfig", "TransformSpec", "apply_transform",
    "backbone_backward", "backbone_forward", "bayesian_from_probabilities",
    "combine_dempster", "combine_many", "confusion_counts", "decide", "dice",
    "enn_backward", "enn_backward_map", "enn_forward", "enn_forward_map",
    "evaluate", "extract_patch_features", "forward_volume", "fuse_map",
    "fuse_pixel", "generate_phantom", "hausdorff", "init_backbone",
    "kmeans_init", "load_model", "load_volume", "loss1", "loss2", "ppv",
    "preprocess", "read_tensor", "region_mask", "save_model", "save_volume",
    "segment", "segment_volume", "sensitivity", "train", "vacuous",
    "write_pgm", "write_tensor",
]
