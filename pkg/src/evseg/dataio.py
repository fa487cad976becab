"""Synthetic phantoms, preprocessing, and tensor container I/O.

Phantoms mimic the nested-region layout of brain-tumor ground truth: a
"brain" ellipse of healthy tissue (label 0) containing three nested tumor
ellipses labeled 2 (outer), 1 and 4 (inner), so the WT = {1,2,4} /
TC = {1,4} / ET = {4} region logic is exercised for real. Boundary blur on
the image (never the labels) creates the ambiguous low-contrast pixels the
evidential head is supposed to flag.

The EVT1 container is one tensor per file: 5 magic bytes ``EVT1\\n``, one
JSON header line ``{"dtype": "f32"|"u8", "shape": [...], "order":
"row-major"}``, then the raw little-endian payload.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataFormatError, ShapeMismatchError

log = logging.getLogger(__name__)

EVT_MAGIC = b"EVT1\n"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
MAX_ELEMENTS = 2**32

LABELS = (0, 1, 2, 4)
DEGENERATE_STD = 1e-8


@dataclass
class LabeledVolume:
    """Multi-modality image (H, W, C float32) plus {0,1,2,4} label map."""

    image: np.ndarray
    labels: np.ndarray
    case_id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.image.ndim != 3:
            raise ShapeMismatchError(f"image must be (H, W, C), got {self.image.shape}")
        if self.labels.shape != self.image.shape[:2]:
            raise ShapeMismatchError(
                f"labels {self.labels.shape} do not match image {self.image.shape[:2]}"
            )
        if not np.isfinite(self.image).all():
            raise ValueError("image contains non-finite values")


@dataclass
class PhantomConfig:
    """Geometry and contrast of one synthetic phantom.

    Region radii are fractions of min(H, W); they must be strictly nested.
    ``region_offsets[m][j]`` is the intensity the j-th region (outer 2,
    middle 1, inner 4) adds to modality m on top of its base tissue value.
    """

    size: tuple = (160, 160)
    n_modalities: int = 4
    region_radii: tuple = (0.30, 0.19, 0.10)
    brain_radius: float = 0.46
    base_intensity: tuple = (0.8, 1.0, 0.9, 1.1)
    region_offsets: tuple = (
        (0.9, 0.5, 0.2),
        (-0.3, -0.6, 0.8),
        (0.5, 1.0, -0.2),
        (0.1, -0.3, 1.0),
    )
    blur_sigma: float = 1.5
    noise_sigma: float = 0.05
    center_jitter: float = 0.04
    eccentricity_range: tuple = (0.75, 1.3)
    seed: int = 0

    def __post_init__(self):
        radii = tuple(self.region_radii)
        if not (radii[0] > radii[1] > radii[2] > 0.0):
            raise ValueError(f"region radii must be strictly nested, got {radii}")
        if self.blur_sigma < 0.0:
            raise ValueError("blur sigma must be >= 0")
        h, w = self.size
        # worst case: jittered center plus the widest eccentric outer axis
        reach = self.center_jitter + radii[0] * max(self.eccentricity_range)
        if reach > 0.5 or self.brain_radius > 0.5:
            raise ValueError(
                f"regions do not fit: radius reach {reach:.3f} of min(H, W) exceeds 0.5"
            )
        if min(h, w) * radii[2] < 2.0:
            raise ValueError("image too small: innermost region under 2 pixels")


def _ellipse_mask(h, w, cy, cx, ry, rx, angle):
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def generate_phantom(config: PhantomConfig) -> LabeledVolume:
    """Deterministic per seed. Labels come from the sharp geometry; the image
    gets the boundary blur and in-brain noise."""
    h, w = config.size
    scale = min(h, w)
    rng = np.random.default_rng(config.seed)

    cy = h / 2 + rng.uniform(-1, 1) * config.center_jitter * scale
    cx = w / 2 + rng.uniform(-1, 1) * config.center_jitter * scale

    brain = _ellipse_mask(h, w, h / 2, w / 2, config.brain_radius * scale,
                          config.brain_radius * scale, 0.0)

    region_masks = []
    for frac in config.region_radii:
        ecc = rng.uniform(*config.eccentricity_range)
        angle = rng.uniform(0.0, np.pi)
        jy = cy + rng.uniform(-1, 1) * 0.01 * scale
        jx = cx + rng.uniform(-1, 1) * 0.01 * scale
        r = frac * scale
        region_masks.append(_ellipse_mask(h, w, jy, jx, r * ecc, r / ecc, angle))

    labels = np.zeros((h, w), dtype=np.uint8)
    for mask, value in zip(region_masks, (2, 1, 4)):  # outer to inner
        labels[mask & brain] = value

    image = np.zeros((h, w, config.n_modalities), dtype=float)
    for m in range(config.n_modalities):
        channel = np.where(brain, config.base_intensity[m % len(config.base_intensity)], 0.0)
        offsets = config.region_offsets[m % len(config.region_offsets)]
        for mask, offset in zip(region_masks, offsets):
            channel[mask & brain] += offset
        if config.blur_sigma > 0.0:
            channel = gaussian_filter(channel, config.blur_sigma, mode="constant")
        if config.noise_sigma > 0.0:
            noise = rng.normal(0.0, config.noise_sigma, size=(h, w))
            channel = channel + np.where(brain, noise, 0.0)
        image[:, :, m] = channel

    return LabeledVolume(image.astype(np.float32), labels, case_id=f"phantom_{config.seed}")


def preprocess(volume: LabeledVolume, crop: tuple = (160, 160)) -> LabeledVolume:
    """Z-score each modality over its nonzero ("brain") mask, then center
    crop. Pixels outside the mask stay exactly zero, which keeps the mask
    stable and the operation idempotent. A modality with near-zero spread is
    zeroed with a warning rather than amplified."""
    image = np.asarray(volume.image, dtype=float)
    h, w, c = image.shape
    ch, cw = crop
    if ch > h or cw > w:
        raise ValueError(f"crop {crop} larger than image {(h, w)}")

    out = np.zeros_like(image)
    for m in range(c):
        channel = image[:, :, m]
        mask = channel != 0.0
        if not mask.any():
            log.warning("modality %d is all zero; leaving channel at zero", m)
            continue
        mean = channel[mask].mean()
        std = channel[mask].std()
        if std < DEGENERATE_STD:
            log.warning("modality %d has degenerate spread (std=%g); zeroing channel", m, std)
            continue
        out[:, :, m] = np.where(mask, (channel - mean) / std, 0.0)

    y0 = (h - ch) // 2
    x0 = (w - cw) // 2
    return LabeledVolume(
        out[y0:y0 + ch, x0:x0 + cw].astype(np.float32),
        volume.labels[y0:y0 + ch, x0:x0 + cw],
        case_id=volume.case_id,
    )


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_evseg_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(array: np.ndarray, path: str):
    """Write one tensor as an EVT1 file (f32 or u8 payload only)."""
    array = np.asarray(array)
    if array.dtype == np.float32:
        tag = "f32"
    elif array.dtype == np.uint8:
        tag = "u8"
    else:
        raise ValueError(f"EVT stores f32 or u8 payloads, not {array.dtype}")
    header = {"dtype": tag, "shape": list(array.shape), "order": "row-major"}
    payload = (
        EVT_MAGIC
        + json.dumps(header).encode("utf-8")
        + b"\n"
        + np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()
    )
    _atomic_write(path, payload)


def read_tensor(path: str) -> np.ndarray:
    """Read an EVT1 file. Malformed input raises :class:`DataFormatError`,
    never a crash."""
    with open(path, "rb") as fh:
        magic = fh.read(len(EVT_MAGIC))
        if magic != EVT_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {EVT_MAGIC!r}")
        header_line = fh.readline(1 << 16)
        if not header_line.endswith(b"\n"):
            raise DataFormatError(f"{path}: unterminated header line")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: header is not valid JSON: {exc}") from exc

        tag = header.get("dtype")
        if tag not in _DTYPES:
            raise DataFormatError(f"{path}: unknown dtype tag {tag!r}")
        shape = header.get("shape")
        if (
            not isinstance(shape, list)
            or not shape
            or not all(isinstance(d, int) and d >= 0 for d in shape)
        ):
            raise DataFormatError(f"{path}: bad shape field {shape!r}")
        if header.get("order") != "row-major":
            raise DataFormatError(f"{path}: unsupported order {header.get('order')!r}")
        n_elements = int(np.prod(shape, dtype=object))
        if n_elements > MAX_ELEMENTS:
            raise DataFormatError(f"{path}: shape {shape} overflows element limit")

        dtype = _DTYPES[tag]
        raw = fh.read(n_elements * dtype.itemsize + 1)
        if len(raw) != n_elements * dtype.itemsize:
            raise DataFormatError(
                f"{path}: payload has {len(raw)} bytes, expected exactly "
                f"{n_elements * dtype.itemsize}"
            )
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _labels_path(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}_labels{ext or '.evt'}"


def save_volume(volume: LabeledVolume, path: str):
    """Write the image to ``path`` and the label map to the sibling
    ``<stem>_labels.evt``."""
    write_tensor(volume.image, path)
    write_tensor(volume.labels, _labels_path(path))


def load_volume(path: str) -> LabeledVolume:
    image = read_tensor(path)
    labels = read_tensor(_labels_path(path))
    if image.ndim != 3:
        raise DataFormatError(f"{path}: expected a (H, W, C) image, got shape {image.shape}")
    case_id = os.path.splitext(os.path.basename(path))[0]
    return LabeledVolume(image, labels, case_id=case_id)


def write_pgm(values: np.ndarray, path: str):
    """Write an (H, W) map of reals as binary 8-bit PGM; values are clamped
    to [0, 1] and scaled so 1.0 maps to 255."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ShapeMismatchError(f"PGM expects an (H, W) map, got {values.shape}")
    clipped = np.clip(values, 0.0, 1.0)
    data = np.rint(clipped * 255.0).astype(np.uint8)
    h, w = data.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())
