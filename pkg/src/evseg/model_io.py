"""Trained-model container (.evm).

Same convention as the EVT tensor container — magic line, one JSON header
line, then raw little-endian payloads — but with a section table so several
arrays live in one file, and an "f64" dtype so trained parameters round-trip
bit-exactly. The header also snapshots the training configuration and a
SHA-256 digest of the training log.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict

import numpy as np

from .backbone import BackboneParams
from .belief import Frame
from .enn import PrototypeBank
from .errors import DataFormatError, VersionMismatchError
from .model import SegModel

EVM_MAGIC = b"EVM1\n"
FORMAT_VERSION = 1
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def log_digest(log_path: str) -> str:
    with open(log_path, "rb") as fh:
        return "sha256:" + hashlib.sha256(fh.read()).hexdigest()


def _sections_of(model: SegModel):
    sections = []
    for i, (w, b) in enumerate(zip(model.backbone.weights, model.backbone.biases)):
        sections.append((f"backbone.w{i}", w))
        sections.append((f"backbone.b{i}", b))
    bank = model.bank
    sections.extend([
        ("bank.prototypes", bank.prototypes),
        ("bank.memberships_raw", bank.memberships_raw),
        ("bank.alpha_raw", bank.alpha_raw),
        ("bank.gamma_raw", bank.gamma_raw),
    ])
    return sections


def save_model(model: SegModel, path: str, train_config=None, digest: str = ""):
    sections = _sections_of(model)
    table = [
        {"name": name, "dtype": "f64", "shape": list(np.asarray(a).shape)}
        for name, a in sections
    ]
    config_snapshot = None
    if train_config is not None:
        config_snapshot = asdict(train_config)
        config_snapshot["transforms"] = [asdict(t) for t in train_config.transforms]
    header = {
        "version": FORMAT_VERSION,
        "frame": list(model.frame.labels),
        "patch_radius": model.backbone.patch_radius,
        "n_channels": model.backbone.n_channels,
        "n_layers": len(model.backbone.weights),
        "train_config": config_snapshot,
        "log_digest": digest,
        "sections": table,
    }
    blob = EVM_MAGIC + json.dumps(header).encode("utf-8") + b"\n"
    for _, array in sections:
        blob += np.ascontiguousarray(array, dtype="<f8").tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_evseg_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str):
    """Returns ``(model, header_dict)``."""
    with open(path, "rb") as fh:
        magic = fh.read(len(EVM_MAGIC))
        if magic != EVM_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {EVM_MAGIC!r}")
        header_line = fh.readline(1 << 20)
        if not header_line.endswith(b"\n"):
            raise DataFormatError(f"{path}: unterminated header line")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: header is not valid JSON: {exc}") from exc
        if header.get("version") != FORMAT_VERSION:
            raise VersionMismatchError(
                f"{path}: model format version {header.get('version')!r}, "
                f"supported: {FORMAT_VERSION}"
            )

        arrays = {}
        for section in header.get("sections", []):
            name = section.get("name")
            tag = section.get("dtype")
            shape = section.get("shape")
            if tag not in _DTYPES or not isinstance(shape, list):
                raise DataFormatError(f"{path}: bad section entry {section!r}")
            dtype = _DTYPES[tag]
            n_bytes = int(np.prod(shape, dtype=object)) * dtype.itemsize
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise DataFormatError(f"{path}: truncated payload in section {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(float)

    try:
        n_layers = int(header["n_layers"])
        weights = [arrays[f"backbone.w{i}"] for i in range(n_layers)]
        biases = [arrays[f"backbone.b{i}"] for i in range(n_layers)]
        backbone = BackboneParams(
            int(header["patch_radius"]), int(header["n_channels"]), weights, biases
        )
        bank = PrototypeBank(
            arrays["bank.prototypes"],
            arrays["bank.memberships_raw"],
            arrays["bank.alpha_raw"],
            arrays["bank.gamma_raw"],
        )
        frame = Frame(tuple(header["frame"]))
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing section or header field {exc}") from exc
    return SegModel(frame, backbone, bank), header
