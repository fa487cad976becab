"""Evidential classifier: worked values, k-means init, gradients, and the
cross-module equivalence with the generic Dempster fold."""

import numpy as np
import pytest

from evseg.belief import Frame, MassFunction, combine_many
from evseg.enn import PrototypeBank, enn_backward, enn_forward, enn_forward_map, kmeans_init
from evseg.errors import ShapeMismatchError

from conftest import gradient_rel_error, numerical_gradient


def logit(p):
    return np.log(p / (1.0 - p))


def make_bank(prototypes, memberships, alphas, gammas):
    """Bank with the given *derived* parameter values."""
    alphas = np.asarray(alphas, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    return PrototypeBank(
        prototypes=np.asarray(prototypes, dtype=float),
        memberships_raw=np.sqrt(np.asarray(memberships, dtype=float)),
        alpha_raw=logit(alphas),
        gamma_raw=np.sqrt(gammas - 1e-6),
    )


def random_bank(rng, count, feat_dim, n_classes):
    return PrototypeBank(
        prototypes=rng.normal(size=(count, feat_dim)),
        memberships_raw=rng.normal(size=(count, n_classes)) + 2.0,
        alpha_raw=rng.normal(size=count),
        gamma_raw=rng.normal(size=count),
    )


class TestKmeansInit:
    def test_one_point_per_prototype(self, rng):
        points = rng.normal(size=(4, 3))
        bank = kmeans_init(points, 4, n_classes=4, seed=7)
        # prototypes equal the points up to permutation
        matched = {tuple(np.round(p, 9)) for p in bank.prototypes}
        assert matched == {tuple(np.round(p, 9)) for p in points}

    def test_two_blobs(self, rng):
        blob_a = rng.normal(0.0, 0.05, size=(100, 2)) + np.array([0.0, 0.0])
        blob_b = rng.normal(0.0, 0.05, size=(100, 2)) + np.array([10.0, 10.0])
        points = np.vstack([blob_a, blob_b])
        bank = kmeans_init(points, 2, n_classes=4, seed=3)
        means = sorted([blob_a.mean(axis=0), blob_b.mean(axis=0)], key=lambda c: c[0])
        centers = sorted(bank.prototypes, key=lambda c: c[0])
        for center, mean in zip(centers, means):
            assert np.abs(center - mean).max() < 1e-3

    def test_deterministic(self, rng):
        points = rng.normal(size=(50, 4))
        a = kmeans_init(points, 5, n_classes=4, seed=11)
        b = kmeans_init(points, 5, n_classes=4, seed=11)
        np.testing.assert_array_equal(a.prototypes, b.prototypes)
        np.testing.assert_array_equal(a.gamma_raw, b.gamma_raw)

    def test_derived_parameter_defaults(self, rng):
        points = rng.normal(size=(30, 2))
        bank = kmeans_init(points, 3, n_classes=4, seed=0)
        np.testing.assert_allclose(bank.alphas(), 0.5)
        np.testing.assert_allclose(bank.memberships(), 0.25)
        assert (bank.gammas() > 0).all()

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError, match="at least"):
            kmeans_init(rng.normal(size=(2, 3)), 5, n_classes=4, seed=0)

    def test_nonfinite_input(self):
        bad = np.array([[0.0, np.nan], [1.0, 2.0]])
        with pytest.raises(ValueError, match="finite"):
            kmeans_init(bad, 1, n_classes=4, seed=0)


class TestEnnForward:
    def test_single_prototype_worked_value(self):
        frame = Frame(("a", "b"))
        bank = make_bank([[0.0]], [[1.0, 0.0]], [0.8], [0.5])
        x = np.array([np.sqrt(2.0)])  # squared distance 2
        m = enn_forward(x, bank, frame)
        s = 0.8 * np.exp(-1.0)
        assert m.mass(1) == pytest.approx(s, abs=1e-9)
        assert m.mass(3) == pytest.approx(1.0 - s, abs=1e-9)
        assert round(s, 5) == 0.29430

    def test_two_prototypes_worked_value(self):
        frame = Frame(("a", "b"))
        bank = make_bank(
            [[0.0], [0.0]], [[1.0, 0.0], [1.0, 0.0]], [0.5, 0.5], [1.0, 1.0]
        )
        m = enn_forward(np.array([0.0]), bank, frame)  # d=0, s=alpha=0.5
        assert m.mass(1) == pytest.approx(0.75, abs=1e-12)
        assert m.mass(3) == pytest.approx(0.25, abs=1e-12)

    def test_far_input_is_vacuous(self, rng):
        frame = Frame((0, 1, 2, 4))
        bank = random_bank(rng, 5, 3, 4)
        m = enn_forward(np.full(3, 1e8), bank, frame)
        assert m.mass(frame.full_mask) == pytest.approx(1.0, abs=1e-9)

    def test_matches_generic_dempster_fold(self, rng):
        # closed-form fold vs belief-core combine_many on per-prototype masses
        frame = Frame(("a", "b", "c"))
        for _ in range(25):
            bank = random_bank(rng, 4, 2, 3)
            x = rng.normal(size=2)
            d2 = ((x - bank.prototypes) ** 2).sum(axis=1)
            s = bank.alphas() * np.exp(-bank.gammas() * d2)
            u = bank.memberships()
            per_prototype = []
            for i in range(4):
                entries = {frame.singleton_mask(c): u[i, c] * s[i] for c in range(3)}
                entries[frame.full_mask] = 1.0 - s[i]
                per_prototype.append(MassFunction(frame, entries))
            expected = combine_many(per_prototype).mass
            got = enn_forward(x, bank, frame)
            for mask in set(expected.entries) | set(got.entries):
                assert got.mass(mask) == pytest.approx(expected.mass(mask), abs=1e-9)

    def test_monotone_ignorance(self):
        frame = Frame(("a", "b"))
        bank = make_bank([[0.0]], [[0.7, 0.3]], [0.9], [1.0])
        omegas, ratios = [], []
        for d in (0.0, 0.5, 1.0, 2.0):
            m = enn_forward(np.array([d]), bank, frame)
            omegas.append(m.mass(3))
            ratios.append(m.mass(1) / m.mass(2))
        assert all(b > a for a, b in zip(omegas, omegas[1:]))
        np.testing.assert_allclose(ratios, ratios[0])  # proportional scaling

    def test_dim_mismatch(self, rng):
        bank = random_bank(rng, 2, 3, 4)
        with pytest.raises(ShapeMismatchError):
            enn_forward(np.zeros(5), bank, Frame((0, 1, 2, 4)))


class TestEnnForwardMap:
    def test_single_pixel_reduces_to_forward(self, rng):
        frame = Frame((0, 1, 2, 4))
        bank = random_bank(rng, 3, 2, 4)
        x = rng.normal(size=2)
        single = enn_forward(x, bank, frame).to_singleton_omega()
        mapped = enn_forward_map(x[None, None, :], bank)
        np.testing.assert_allclose(mapped[0, 0], single, atol=1e-12)

    def test_normalization(self, rng):
        bank = random_bank(rng, 4, 3, 4)
        features = rng.normal(size=(6, 5, 3)) * 3.0
        masses = enn_forward_map(features, bank)
        assert (masses >= 0.0).all()
        np.testing.assert_allclose(masses.sum(axis=2), 1.0, atol=1e-6)

    def test_pixelwise_independence(self, rng):
        bank = random_bank(rng, 4, 3, 4)
        features = rng.normal(size=(4, 5, 3))
        masses = enn_forward_map(features, bank)
        perm = rng.permutation(20)
        permuted = enn_forward_map(features.reshape(20, 1, 3)[perm], bank)
        np.testing.assert_array_equal(permuted[:, 0], masses.reshape(20, 5)[perm])


class TestEnnBackward:
    def test_zero_upstream(self, rng):
        bank = random_bank(rng, 3, 2, 4)
        grads, dx = enn_backward(rng.normal(size=2), bank, np.zeros(5))
        assert not dx.any()
        assert not grads.prototypes.any()
        assert not grads.memberships_raw.any()
        assert not grads.alpha_raw.any()
        assert not grads.gamma_raw.any()

    def test_prototype_gradient_vanishes_at_zero_distance(self, rng):
        bank = random_bank(rng, 1, 3, 4)
        x = bank.prototypes[0].copy()
        grads, dx = enn_backward(x, bank, rng.normal(size=5))
        np.testing.assert_array_equal(grads.prototypes, 0.0)
        np.testing.assert_array_equal(dx, 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_finite_difference_agreement(self, seed):
        rng = np.random.default_rng(1000 + seed)
        count, feat_dim, n_classes = 3, 2, 3
        bank = random_bank(rng, count, feat_dim, n_classes)
        x = rng.normal(size=feat_dim)
        upstream = rng.normal(size=n_classes + 1)
        frame = Frame(tuple(range(n_classes)) if n_classes != 4 else (0, 1, 2, 4))

        def loss_for(bank_arrays=None, x_val=None):
            b = bank if bank_arrays is None else bank_arrays
            inp = x if x_val is None else x_val
            return float(enn_forward(inp, b, frame).to_singleton_omega() @ upstream)

        grads, dx = enn_backward(x, bank, upstream)

        num_dx = numerical_gradient(lambda v: loss_for(x_val=v), x)
        assert gradient_rel_error(dx, num_dx) < 1e-4

        for attr, analytic in [
            ("prototypes", grads.prototypes),
            ("memberships_raw", grads.memberships_raw),
            ("alpha_raw", grads.alpha_raw),
            ("gamma_raw", grads.gamma_raw),
        ]:
            def loss_with(values, attr=attr):
                candidate = bank.copy()
                setattr(candidate, attr, values)
                return loss_for(bank_arrays=candidate)

            numeric = numerical_gradient(loss_with, getattr(bank, attr))
            assert gradient_rel_error(analytic, numeric) < 1e-4, attr
