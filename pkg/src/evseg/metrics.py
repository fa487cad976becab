"""Segmentation evaluation: overlap metrics and Hausdorff distance per
nested region (WT, TC, ET).

Conventions for degenerate cases: a rate with a zero denominator is 1.0 when
prediction and truth agree the region is absent, 0.0 otherwise; the Hausdorff
distance of an empty mask is NaN (undefined) and excluded from averages.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from .dataio import LABELS
from .errors import ShapeMismatchError

REGIONS = {
    "WT": frozenset({1, 2, 4}),
    "TC": frozenset({1, 4}),
    "ET": frozenset({4}),
}
REGION_ORDER = ("WT", "TC", "ET")

CSV_COLUMNS = (
    "case_id", "region", "dice", "ppv", "sensitivity", "hausdorff",
    "tp", "fp", "fn", "tn",
)


class Counts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


def region_mask(labels: np.ndarray, region: str) -> np.ndarray:
    """Binary mask of pixels whose label belongs to the region."""
    labels = np.asarray(labels)
    unknown = ~np.isin(labels, LABELS)
    if unknown.any():
        raise ValueError(
            f"unknown label(s) {sorted(set(labels[unknown].tolist()))} (valid: {LABELS})"
        )
    if region not in REGIONS:
        raise KeyError(f"unknown region {region!r} (valid: {tuple(REGIONS)})")
    return np.isin(labels, sorted(REGIONS[region]))


def confusion_counts(pred: np.ndarray, truth: np.ndarray) -> Counts:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    return Counts(tp, fp, fn, tn)


def _safe_rate(numerator, denominator, counts):
    if denominator == 0:
        both_empty = counts.tp + counts.fp == 0 and counts.tp + counts.fn == 0
        return 1.0 if both_empty else 0.0
    return numerator / denominator


def dice(counts: Counts) -> float:
    return _safe_rate(2.0 * counts.tp, counts.fp + 2 * counts.tp + counts.fn, counts)


def ppv(counts: Counts) -> float:
    return _safe_rate(counts.tp, counts.tp + counts.fp, counts)


def sensitivity(counts: Counts) -> float:
    return _safe_rate(counts.tp, counts.tp + counts.fn, counts)


def hausdorff(pred: np.ndarray, truth: np.ndarray) -> float:
    """Symmetric Hausdorff distance between the two foreground point sets in
    Euclidean pixels, exact via distance transforms. NaN if either mask is
    empty (undefined; excluded from averages downstream)."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    if not pred.any() or not truth.any():
        return math.nan
    # distance_transform_edt(~M) holds, per pixel, the exact distance to M
    to_truth = distance_transform_edt(~truth)
    to_pred = distance_transform_edt(~pred)
    return float(max(to_truth[pred].max(), to_pred[truth].max()))


@dataclass
class RegionMetrics:
    dice: float
    ppv: float
    sensitivity: float
    hausdorff: float
    counts: Counts


@dataclass
class MetricsReport:
    """Metrics for all three nested regions of one case."""

    regions: dict  # region name -> RegionMetrics

    def to_rows(self, case_id: str) -> list:
        rows = []
        for name in REGION_ORDER:
            rm = self.regions[name]
            rows.append({
                "case_id": case_id,
                "region": name,
                "dice": rm.dice,
                "ppv": rm.ppv,
                "sensitivity": rm.sensitivity,
                "hausdorff": rm.hausdorff,
                "tp": rm.counts.tp,
                "fp": rm.counts.fp,
                "fn": rm.counts.fn,
                "tn": rm.counts.tn,
            })
        return rows


def evaluate(pred_labels: np.ndarray, truth_labels: np.ndarray) -> MetricsReport:
    """Full report: region mask -> confusion counts -> the four metrics,
    for WT, TC and ET."""
    pred_labels = np.asarray(pred_labels)
    truth_labels = np.asarray(truth_labels)
    if pred_labels.shape != truth_labels.shape:
        raise ShapeMismatchError(
            f"label maps differ in shape: {pred_labels.shape} vs {truth_labels.shape}"
        )
    regions = {}
    for name in REGION_ORDER:
        pm = region_mask(pred_labels, name)
        tm = region_mask(truth_labels, name)
        counts = confusion_counts(pm, tm)
        regions[name] = RegionMetrics(
            dice=dice(counts),
            ppv=ppv(counts),
            sensitivity=sensitivity(counts),
            hausdorff=hausdorff(pm, tm),
            counts=counts,
        )
    return MetricsReport(regions)


def mean_rows(rows: list) -> list:
    """Per-region mean rows over per-case rows (case_id "mean"). NaN
    Hausdorff entries are excluded from the average; counts are summed."""
    out = []
    for name in REGION_ORDER:
        region_rows = [r for r in rows if r["region"] == name]
        if not region_rows:
            continue
        hausdorffs = [r["hausdorff"] for r in region_rows if not math.isnan(r["hausdorff"])]
        out.append({
            "case_id": "mean",
            "region": name,
            "dice": float(np.mean([r["dice"] for r in region_rows])),
            "ppv": float(np.mean([r["ppv"] for r in region_rows])),
            "sensitivity": float(np.mean([r["sensitivity"] for r in region_rows])),
            "hausdorff": float(np.mean(hausdorffs)) if hausdorffs else math.nan,
            "tp": sum(r["tp"] for r in region_rows),
            "fp": sum(r["fp"] for r in region_rows),
            "fn": sum(r["fn"] for r in region_rows),
            "tn": sum(r["tn"] for r in region_rows),
        })
    return out


def write_report_csv(rows: list, path: str):
    """UTF-8 CSV with a header row and '.' decimal separator; floats are
    written with repr-level precision so a read-back round-trips."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row[k]) for k in CSV_COLUMNS})


def read_report_csv(path: str) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            for key in ("dice", "ppv", "sensitivity", "hausdorff"):
                parsed[key] = float(row[key])
            for key in ("tp", "fp", "fn", "tn"):
                parsed[key] = int(row[key])
            rows.append(parsed)
    return rows


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def boundary_band(labels: np.ndarray, width: float = 2.0) -> np.ndarray:
    """Pixels within ``width`` (Euclidean) of a label boundary. A boundary
    pixel is one with a 4-neighbor of a different label."""
    labels = np.asarray(labels)
    boundary = np.zeros(labels.shape, dtype=bool)
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    boundary[1:, :] |= labels[1:, :] != labels[:-1, :]
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    if not boundary.any():
        return boundary
    return distance_transform_edt(~boundary) <= width


def pixel_accuracy(pred_labels, truth_labels, mask=None) -> float:
    """Fraction of (masked) pixels with the correct label."""
    pred_labels = np.asarray(pred_labels)
    truth_labels = np.asarray(truth_labels)
    correct = pred_labels == truth_labels
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return math.nan
        correct = correct[mask]
    return float(correct.mean())
