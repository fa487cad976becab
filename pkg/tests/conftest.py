"""Shared test helpers: independent oracles and finite-difference checking."""

import numpy as np
import pytest

from evseg.belief import Frame, MassFunction


def random_mass(rng, frame, bayesian=False, with_omega=True):
    """Random valid mass function: a random choice of focal sets with
    Dirichlet weights."""
    n_subsets = frame.full_mask
    if bayesian:
        candidates = [frame.singleton_mask(k) for k in range(frame.size)]
    else:
        candidates = list(range(1, n_subsets + 1))
    size = int(rng.integers(1, len(candidates) + 1))
    chosen = list(rng.choice(candidates, size=size, replace=False))
    if with_omega and frame.full_mask not in chosen and not bayesian:
        chosen.append(frame.full_mask)
    weights = rng.dirichlet(np.ones(len(chosen)))
    return MassFunction(frame, dict(zip((int(c) for c in chosen), weights)))


def brute_force_combine(m1, m2):
    """Independent oracle for Dempster's rule: dense double loop over every
    nonempty subset pair of the frame. Returns (entries dict, kappa),
    entries normalized."""
    full = m1.frame.full_mask
    acc = {}
    kappa = 0.0
    for b in range(1, full + 1):
        mb = m1.mass(b)
        if mb == 0.0:
            continue
        for c in range(1, full + 1):
            mc = m2.mass(c)
            if mc == 0.0:
                continue
            inter = b & c
            if inter == 0:
                kappa += mb * mc
            else:
                acc[inter] = acc.get(inter, 0.0) + mb * mc
    norm = 1.0 - kappa
    return {a: v / norm for a, v in acc.items()}, kappa


def mass_distance(m1, m2):
    """Largest per-focal-set difference between two mass functions."""
    keys = set(m1.entries) | set(m2.entries)
    return max(abs(m1.mass(k) - m2.mass(k)) for k in keys)


def numerical_gradient(fn, x, h=1e-5):
    """Central finite differences of a scalar function w.r.t. an array."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for idx in range(flat_x.size):
        orig = flat_x[idx]
        flat_x[idx] = orig + h
        f_plus = fn(x)
        flat_x[idx] = orig - h
        f_minus = fn(x)
        flat_x[idx] = orig
        flat_g[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def gradient_rel_error(analytic, numerical):
    """Worst absolute deviation, relative to the gradient's own scale."""
    analytic = np.asarray(analytic, dtype=float)
    numerical = np.asarray(numerical, dtype=float)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numerical).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numerical).max(initial=0.0) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def frame_ab():
    return Frame(("a", "b"))


@pytest.fixture
def frame_brats():
    return Frame((0, 1, 2, 4))
