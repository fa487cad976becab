"""Fusion layer: worked conflict values, cross-module agreement with the
exact Dempster core, fallback behavior, and decision mapping."""

import numpy as np
import pytest

from evseg.belief import Frame, MassFunction, bayesian_from_probabilities, combine_dempster
from evseg.errors import ShapeMismatchError, TotalConflictError
from evseg.fusion import fuse_map, fuse_map_backward, fuse_pixel, segment

from conftest import gradient_rel_error, numerical_gradient


def random_pixel_pair(rng, k):
    p = rng.dirichlet(np.ones(k))
    m = rng.dirichlet(np.ones(k + 1))
    return p, m


class TestFusePixel:
    def test_worked_example(self):
        fused, kappa = fuse_pixel([0.7, 0.3], [0.2, 0.1, 0.7])
        assert kappa == pytest.approx(0.13, abs=1e-12)
        assert fused[0] == pytest.approx(0.72414, abs=5e-6)
        assert fused[1] == pytest.approx(0.27586, abs=5e-6)

    def test_vacuous_mass_is_neutral(self, rng):
        p = rng.dirichlet(np.ones(4))
        fused, kappa = fuse_pixel(p, [0.0, 0.0, 0.0, 0.0, 1.0])
        np.testing.assert_allclose(fused, p, atol=1e-15)
        assert kappa == 0.0

    def test_total_conflict(self):
        with pytest.raises(TotalConflictError):
            fuse_pixel([1.0, 0.0], [0.0, 1.0, 0.0])

    def test_matches_belief_core(self, rng):
        frame = Frame((0, 1, 2, 4))
        for _ in range(100):
            p, m = random_pixel_pair(rng, 4)
            fused, kappa = fuse_pixel(p, m)
            expected = combine_dempster(
                bayesian_from_probabilities(frame, p),
                MassFunction.from_singleton_omega(frame, m),
            )
            assert kappa == pytest.approx(expected.conflict, abs=1e-12)
            np.testing.assert_allclose(
                fused, expected.mass.to_singleton_omega()[:-1], atol=1e-12
            )

    def test_kappa_zero_iff_no_disjoint_mass(self):
        # every disjoint pair has a zero on one side -> kappa is exactly 0
        _, kappa = fuse_pixel([1.0, 0.0], [0.5, 0.0, 0.5])
        assert kappa == 0.0
        # nonzero opposing masses -> strictly positive conflict
        _, kappa = fuse_pixel([0.9, 0.1], [0.5, 0.1, 0.4])
        assert kappa > 0.0


class TestFuseMap:
    def test_vacuous_everywhere(self, rng):
        p = rng.dirichlet(np.ones(4), size=(3, 4))
        m = np.zeros((3, 4, 5))
        m[:, :, 4] = 1.0
        fused, kappa, n_conflict = fuse_map(p, m)
        np.testing.assert_allclose(fused, p, atol=1e-15)
        assert not kappa.any()
        assert n_conflict == 0

    def test_single_pixel_reduces_to_fuse_pixel(self, rng):
        p, m = random_pixel_pair(rng, 4)
        fused_px, kappa_px = fuse_pixel(p, m)
        fused, kappa, _ = fuse_map(p[None, None], m[None, None])
        np.testing.assert_allclose(fused[0, 0], fused_px, atol=1e-15)
        assert kappa[0, 0] == kappa_px

    def test_shapes_preserved_and_rows_valid(self, rng):
        p = rng.dirichlet(np.ones(4), size=(6, 7))
        m = rng.dirichlet(np.ones(5), size=(6, 7))
        fused, kappa, _ = fuse_map(p, m)
        assert fused.shape == (6, 7, 4)
        assert kappa.shape == (6, 7)
        np.testing.assert_allclose(fused.sum(axis=2), 1.0, atol=1e-9)
        assert (kappa >= 0.0).all() and (kappa < 1.0).all()

    def test_total_conflict_pixels_fall_back(self):
        p = np.array([[[1.0, 0.0], [0.5, 0.5]]])
        m = np.array([[[0.0, 1.0, 0.0], [0.2, 0.3, 0.5]]])
        fused, kappa, n_conflict = fuse_map(p, m)
        assert n_conflict == 1
        np.testing.assert_allclose(fused[0, 0], p[0, 0])
        assert kappa[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert kappa[0, 0] < 1.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            fuse_map(rng.dirichlet(np.ones(4), size=(2, 2)),
                     rng.dirichlet(np.ones(5), size=(3, 2)))


class TestFuseMapBackward:
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_agreement(self, seed):
        rng = np.random.default_rng(3000 + seed)
        p = rng.dirichlet(np.ones(3), size=(2, 2))
        m = rng.dirichlet(np.ones(4), size=(2, 2))
        upstream = rng.normal(size=(2, 2, 3))

        dp, dm = fuse_map_backward(p, m, upstream)

        def loss_p(values):
            fused, _, _ = fuse_map(values, m)
            return float((fused * upstream).sum())

        def loss_m(values):
            fused, _, _ = fuse_map(p, values)
            return float((fused * upstream).sum())

        assert gradient_rel_error(dp, numerical_gradient(loss_p, p)) < 1e-4
        assert gradient_rel_error(dm, numerical_gradient(loss_m, m)) < 1e-4

    def test_conflict_pixels_pass_through(self):
        p = np.array([[[1.0, 0.0]]])
        m = np.array([[[0.0, 1.0, 0.0]]])
        upstream = np.array([[[0.3, -0.7]]])
        dp, dm = fuse_map_backward(p, m, upstream)
        np.testing.assert_array_equal(dp, upstream)
        np.testing.assert_array_equal(dm, 0.0)


class TestSegment:
    def test_one_hot_recovery(self):
        fused = np.zeros((2, 2, 4))
        fused[0, 0, 0] = fused[0, 1, 1] = fused[1, 0, 2] = fused[1, 1, 3] = 1.0
        np.testing.assert_array_equal(segment(fused), [[0, 1], [2, 4]])

    def test_uniform_breaks_to_first_label(self):
        fused = np.full((1, 1, 4), 0.25)
        assert segment(fused)[0, 0] == 0

    def test_rescaling_invariance(self, rng):
        fused = rng.dirichlet(np.ones(4), size=(5, 5))
        scaled = fused * rng.uniform(0.5, 3.0, size=(5, 5, 1))
        np.testing.assert_array_equal(segment(fused), segment(scaled))
