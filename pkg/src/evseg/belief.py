"""Exact Dempster-Shafer algebra over a small finite frame.

Focal sets are bitmasks over frame indices (bit k set = k-th label in the
frame), which keeps Dempster's rule an exact enumeration over subset pairs.
Everything here is immutable and pure, safe to share across workers. All
arithmetic is in 64-bit floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FrameMismatchError, TotalConflictError

MASS_SUM_TOL = 1e-9
PROB_SUM_TOL = 1e-6
# kappa at or above this makes the 1/(1-kappa) normalization meaningless
TOTAL_CONFLICT_CEIL = 1.0 - 1e-12

MAX_FRAME_SIZE = 16


@dataclass(frozen=True)
class Frame:
    """Ordered frame of discernment: the finite set of class hypotheses."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(set(labels)) != len(labels):
            raise ValueError(f"frame labels must be distinct, got {labels!r}")
        if not 2 <= len(labels) <= MAX_FRAME_SIZE:
            raise ValueError(
                f"frame size must be in [2, {MAX_FRAME_SIZE}], got {len(labels)}"
            )

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def full_mask(self) -> int:
        """Bitmask of the whole frame (total ignorance focal set)."""
        return (1 << self.size) - 1

    def singleton_mask(self, index: int) -> int:
        if not 0 <= index < self.size:
            raise IndexError(f"label index {index} out of range")
        return 1 << index

    def index_of(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"label {label!r} not in frame {self.labels!r}") from None

    def members(self, mask: int) -> tuple:
        """Labels contained in a focal-set bitmask."""
        return tuple(self.labels[k] for k in _bit_indices(mask))


def _bit_indices(mask: int) -> Iterable[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


@dataclass(frozen=True)
class MassFunction:
    """Nonnegative masses over nonempty subsets of the frame, summing to 1.

    ``entries`` maps focal-set bitmasks to masses. The empty set never
    appears; entries with zero mass are dropped on construction.
    """

    frame: Frame
    entries: Mapping[int, float]

    def __post_init__(self):
        full = self.frame.full_mask
        cleaned = {}
        total = 0.0
        for mask, value in self.entries.items():
            mask = int(mask)
            value = float(value)
            if mask == 0:
                raise ValueError("the empty set cannot carry mass")
            if mask & ~full:
                raise ValueError(f"focal set {mask:#x} outside frame mask {full:#x}")
            if value < 0.0:
                raise ValueError(f"negative mass {value!r} on focal set {mask:#x}")
            if value > 0.0:
                cleaned[mask] = cleaned.get(mask, 0.0) + value
            total += value
        if abs(total - 1.0) > MASS_SUM_TOL:
            raise ValueError(f"masses must sum to 1 within {MASS_SUM_TOL}, got {total!r}")
        object.__setattr__(self, "entries", MappingProxyType(cleaned))

    def mass(self, mask: int) -> float:
        return self.entries.get(int(mask), 0.0)

    def focal_sets(self) -> tuple:
        return tuple(self.entries)

    def is_bayesian(self) -> bool:
        """True when all focal sets are singletons."""
        return all(mask & (mask - 1) == 0 for mask in self.entries)

    def to_singleton_omega(self) -> np.ndarray:
        """Pack as K+1 values: one mass per singleton plus the mass on the
        whole frame. Raises if any other composite focal set carries mass."""
        out = np.zeros(self.frame.size + 1)
        full = self.frame.full_mask
        for mask, value in self.entries.items():
            if mask == full:
                out[-1] += value
            elif mask & (mask - 1) == 0:
                out[mask.bit_length() - 1] += value
            else:
                raise ValueError(
                    f"focal set {self.frame.members(mask)!r} is neither a "
                    "singleton nor the whole frame"
                )
        return out

    @classmethod
    def from_singleton_omega(cls, frame: Frame, values: Sequence[float]) -> "MassFunction":
        """Inverse of :meth:`to_singleton_omega`."""
        values = np.asarray(values, dtype=float)
        if values.shape != (frame.size + 1,):
            raise ValueError(f"expected {frame.size + 1} values, got shape {values.shape}")
        entries = {frame.singleton_mask(k): v for k, v in enumerate(values[:-1])}
        entries[frame.full_mask] = values[-1]
        return cls(frame, {m: v for m, v in entries.items() if v > 0.0})


@dataclass(frozen=True)
class CombinationResult:
    """Normalized combined mass plus the degree of conflict kappa."""

    mass: MassFunction
    conflict: float


def vacuous(frame: Frame) -> MassFunction:
    """Total ignorance: all mass on the whole frame. Neutral element of
    Dempster combination."""
    return MassFunction(frame, {frame.full_mask: 1.0})


def bayesian_from_probabilities(frame: Frame, probabilities) -> MassFunction:
    """Read a probability vector as a Bayesian mass function (singleton
    focal sets only). The vector is renormalized if its sum is within 1e-6
    of one, rejected otherwise."""
    p = np.asarray(probabilities, dtype=float)
    if p.shape != (frame.size,):
        raise ValueError(f"expected {frame.size} probabilities, got shape {p.shape}")
    if np.any(p < 0.0):
        raise ValueError(f"negative probability in {p!r}")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(
            f"probabilities must sum to 1 within {PROB_SUM_TOL}, got {total!r}"
        )
    p = p / total
    return MassFunction(
        frame, {frame.singleton_mask(k): v for k, v in enumerate(p) if v > 0.0}
    )


def combine_dempster(m1: MassFunction, m2: MassFunction) -> CombinationResult:
    """Dempster's rule: conjunctive combination renormalized by 1 - kappa.

    kappa is the total mass the two sources place on disjoint focal sets.
    Raises :class:`TotalConflictError` when kappa reaches 1, where the rule
    is undefined.
    """
    if m1.frame != m2.frame:
        raise FrameMismatchError(
            f"cannot combine masses over frames {m1.frame.labels!r} and {m2.frame.labels!r}"
        )
    # fsum-based accumulation: each bucket's products are the same set under
    # argument swap, and fsum is correctly rounded, so combination commutes
    # exactly (including kappa)
    acc: dict[int, list] = {}
    conflicts: list = []
    for b, mb in m1.entries.items():
        for c, mc in m2.entries.items():
            inter = b & c
            product = mb * mc
            if inter:
                acc.setdefault(inter, []).append(product)
            else:
                conflicts.append(product)
    kappa = math.fsum(conflicts)
    if kappa >= TOTAL_CONFLICT_CEIL:
        raise TotalConflictError(
            f"sources are in total conflict (kappa = {kappa!r}); combination undefined"
        )
    norm = 1.0 - kappa
    combined = MassFunction(m1.frame, {a: math.fsum(v) / norm for a, v in acc.items()})
    return CombinationResult(combined, kappa)


def combine_many(masses: Sequence[MassFunction]) -> CombinationResult:
    """Left fold of Dempster's rule over a nonempty list.

    The reported conflict is 1 - prod(1 - kappa_step): the cumulative mass
    that would have landed on the empty set had no intermediate
    renormalization happened.
    """
    if len(masses) == 0:
        raise ValueError("cannot combine an empty list of mass functions")
    acc = masses[0]
    surviving = 1.0
    for m in masses[1:]:
        step = combine_dempster(acc, m)
        acc = step.mass
        surviving *= 1.0 - step.conflict
    return CombinationResult(acc, 1.0 - surviving)


def decide(m: MassFunction) -> tuple:
    """Pignistic decision: split each focal mass equally among its members,
    then take the argmax. Ties break toward the lowest label index.

    Returns ``(label, betp)`` where ``betp`` is the pignistic probability
    vector in frame order.
    """
    betp = np.zeros(m.frame.size)
    for mask, value in m.entries.items():
        members = list(_bit_indices(mask))
        share = value / len(members)
        for k in members:
            betp[k] += share
    return m.frame.labels[int(np.argmax(betp))], betp
