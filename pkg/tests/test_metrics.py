import math

import numpy as np
import pytest

import oracles
from voxsplat import (DiffusionSignal, GridMeta, LabeledPointCloud, LossWeights,
                      RenderTarget, appearance_loss, focal_loss, noised_latent,
                      psnr, ssim, v_target, voxel_chamfer, voxelize)


class TestFocalLoss:
    def test_gamma_zero_equals_cross_entropy(self):
        rng = np.random.default_rng(0)
        pred = rng.dirichlet(np.ones(8), 200)
        target = np.zeros_like(pred)
        target[np.arange(200), rng.integers(0, 8, 200)] = 1.0
        ce = float(-np.log((pred * target).sum(axis=1)).mean())
        assert focal_loss(pred, target, gamma=0.0) == pytest.approx(ce, abs=1e-9)

    def test_perfect_prediction_zero_loss(self):
        pred = np.array([[0.0, 1.0, 0.0]])
        target = np.array([[0.0, 1.0, 0.0]])
        assert focal_loss(pred, target, gamma=2.0) == 0.0

    def test_half_probability_gamma_two(self):
        pred = np.array([[0.5, 0.5]])
        target = np.array([[1.0, 0.0]])
        # -(1 - 0.5)^2 * ln(0.5) = 0.25 * ln 2
        assert focal_loss(pred, target, gamma=2.0) == \
            pytest.approx(0.25 * math.log(2.0), abs=1e-12)

    def test_zero_probability_clamped(self):
        pred = np.array([[0.0, 1.0]])
        target = np.array([[1.0, 0.0]])
        value = focal_loss(pred, target, gamma=0.0)
        assert value == pytest.approx(-math.log(1e-12))

    def test_ignored_entries_excluded(self):
        pred = np.array([[0.5, 0.5], [0.9, 0.1]])
        target = np.array([[1.0, 0.0], [1.0, 0.0]])
        ignore = np.array([False, True])
        want = focal_loss(pred[:1], target[:1], gamma=2.0)
        assert focal_loss(pred, target, gamma=2.0, ignore=ignore) == want

    def test_all_ignored_returns_zero(self):
        pred = np.array([[0.5, 0.5]])
        target = np.array([[1.0, 0.0]])
        assert focal_loss(pred, target, ignore=np.array([True])) == 0.0

    def test_class_weights_scale_terms(self):
        pred = np.array([[0.5, 0.5], [0.5, 0.5]])
        target = np.array([[1.0, 0.0], [0.0, 1.0]])
        unweighted = focal_loss(pred, target, gamma=0.0)
        weighted = focal_loss(pred, target, gamma=0.0,
                              class_weights=np.array([2.0, 0.0]))
        assert weighted == pytest.approx(unweighted)

    def test_unnormalized_prediction_rejected(self):
        with pytest.raises(ValueError):
            focal_loss(np.array([[0.5, 0.6]]), np.array([[1.0, 0.0]]))


class TestPsnr:
    def test_identical_images_sentinel(self):
        img = np.random.default_rng(1).uniform(0, 1, (8, 8, 3))
        assert psnr(img, img) == math.inf

    def test_known_mse_values(self):
        img = np.zeros((10, 10))
        assert psnr(img, img + 0.1) == pytest.approx(20.0, abs=1e-12)
        assert psnr(img, img + 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (6, 6))
        b = rng.uniform(0, 1, (6, 6))
        perm = rng.permutation(36)
        assert psnr(a, b) == pytest.approx(
            psnr(a.reshape(-1)[perm].reshape(6, 6),
                 b.reshape(-1)[perm].reshape(6, 6)))


class TestSsim:
    def test_identical_images(self):
        img = np.random.default_rng(3).uniform(0, 1, (16, 16))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_negative_image_scores_below_one(self):
        img = np.random.default_rng(4).uniform(0, 1, (16, 16))
        assert ssim(img, 1.0 - img) < 1.0

    def test_matches_windowed_reference(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 1, (16, 16))
        b = np.clip(a + rng.normal(0, 0.1, (16, 16)), 0, 1)
        assert ssim(a, b) == pytest.approx(oracles.ssim_reference(a, b),
                                           abs=1e-6)

    def test_color_images_average_channels(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (16, 16, 3))
        b = rng.uniform(0, 1, (16, 16, 3))
        per_channel = [ssim(a[..., c], b[..., c]) for c in range(3)]
        assert ssim(a, b) == pytest.approx(float(np.mean(per_channel)))

    def test_small_images_rejected(self):
        img = np.zeros((8, 8))
        with pytest.raises(ValueError):
            ssim(img, img)

    def test_windowed_ssim_depends_on_pixel_layout(self):
        # Unlike PSNR, a windowed metric is sensitive to spatial structure,
        # so an identical shuffle of both images changes the score.
        rng = np.random.default_rng(7)
        rows = np.linspace(0, 1, 16)[:, None]
        a = np.broadcast_to(rows, (16, 16)).copy()
        b = np.clip(a + rng.normal(0, 0.05, (16, 16)), 0, 1)
        perm = rng.permutation(256)
        a_shuffled = a.reshape(-1)[perm].reshape(16, 16)
        b_shuffled = b.reshape(-1)[perm].reshape(16, 16)
        assert ssim(a, b) != pytest.approx(ssim(a_shuffled, b_shuffled),
                                           abs=1e-6)


class TestAppearanceLoss:
    def test_perfect_prediction_zero_total(self):
        rng = np.random.default_rng(7)
        color = rng.uniform(0, 1, (16, 16, 3))
        alpha = rng.uniform(0, 1, (16, 16))
        loss = appearance_loss(RenderTarget(color, alpha), color, alpha)
        assert loss.total == 0.0

    def test_constant_offset_l1_component(self):
        rng = np.random.default_rng(8)
        gt = rng.uniform(0.2, 0.8, (16, 16, 3))
        alpha = np.ones((16, 16))
        loss = appearance_loss(RenderTarget(gt + 0.1, alpha), gt, alpha)
        weights = LossWeights()
        assert loss.l1 == pytest.approx(0.1, abs=1e-12)
        assert weights.l1 * loss.l1 == pytest.approx(0.09, abs=1e-12)

    def test_zero_weights_zero_total(self):
        rng = np.random.default_rng(9)
        weights = LossWeights(l1=0.0, mask=0.0, ssim=0.0, lpips=0.0)
        loss = appearance_loss(
            RenderTarget(rng.uniform(0, 1, (16, 16, 3)), rng.uniform(0, 1, (16, 16))),
            rng.uniform(0, 1, (16, 16, 3)), rng.uniform(0, 1, (16, 16)), weights)
        assert loss.total == 0.0

    def test_lpips_hook_contributes(self):
        rng = np.random.default_rng(10)
        img = rng.uniform(0, 1, (16, 16, 3))
        alpha = np.ones((16, 16))
        loss = appearance_loss(RenderTarget(img, alpha), img, alpha,
                               lpips_hook=lambda a, b: 0.5)
        assert loss.lpips == 0.5
        assert loss.total == pytest.approx(LossWeights().lpips * 0.5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            appearance_loss(RenderTarget(np.zeros((16, 16, 3)), np.zeros((16, 16))),
                            np.zeros((8, 8, 3)), np.zeros((8, 8)))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(l1=-0.1)


class TestVoxelChamfer:
    def grid_at(self, coords, size=0.1):
        coords = np.asarray(coords, dtype=float)
        pts = (coords + 0.5) * size
        return voxelize(LabeledPointCloud(pts), GridMeta(np.zeros(3), size))

    def test_identical_grids_zero(self):
        g = self.grid_at([[0, 0, 0], [1, 2, 3]])
        assert voxel_chamfer(g, g) == 0.0

    def test_three_four_five(self):
        a = self.grid_at([[0, 0, 0]])
        b = self.grid_at([[3, 4, 0]])
        assert voxel_chamfer(a, b) == pytest.approx(5.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        a = self.grid_at(rng.integers(0, 12, (40, 3)))
        b = self.grid_at(rng.integers(0, 12, (25, 3)))
        assert voxel_chamfer(a, b) == pytest.approx(voxel_chamfer(b, a))

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(12)
        a = self.grid_at(rng.integers(0, 20, (300, 3)))
        b = self.grid_at(rng.integers(0, 20, (280, 3)))
        want = oracles.chamfer(a.centroids(), b.centroids(), 0.1)
        assert voxel_chamfer(a, b) == pytest.approx(want, abs=1e-9)

    def test_empty_grid_rejected(self):
        g = self.grid_at([[0, 0, 0]])
        empty = voxelize(LabeledPointCloud.empty(), GridMeta(np.zeros(3), 0.1))
        with pytest.raises(ValueError):
            voxel_chamfer(g, empty)

    def test_mismatched_voxel_size_rejected(self):
        a = self.grid_at([[0, 0, 0]], size=0.1)
        b = self.grid_at([[0, 0, 0]], size=0.2)
        with pytest.raises(ValueError):
            voxel_chamfer(a, b)


class TestVTarget:
    def test_endpoints(self):
        rng = np.random.default_rng(13)
        x = rng.normal(0, 1, (3, 5))
        eps = rng.normal(0, 1, (3, 5))
        assert np.array_equal(v_target(DiffusionSignal(x, eps, 1.0)), eps)
        assert np.array_equal(v_target(DiffusionSignal(x, eps, 0.0)), -x)
        assert np.array_equal(noised_latent(DiffusionSignal(x, eps, 1.0)), x)
        assert np.array_equal(noised_latent(DiffusionSignal(x, eps, 0.0)), eps)

    def test_rotation_identity_on_orthogonal_tensors(self):
        # With <X, eps> = 0, ||x_t||^2 + ||v||^2 = ||X||^2 + ||eps||^2.
        x = np.array([1.0, 0.0, 2.0, 0.0])
        eps = np.array([0.0, 3.0, 0.0, -1.0])
        for ab in (0.0, 0.2, 0.5, 0.9, 1.0):
            sig = DiffusionSignal(x, eps, ab)
            lhs = np.sum(noised_latent(sig) ** 2) + np.sum(v_target(sig) ** 2)
            rhs = np.sum(x**2) + np.sum(eps**2)
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_alpha_bar_out_of_range_rejected(self):
        sig = DiffusionSignal(np.zeros(3), np.zeros(3), 1.5)
        with pytest.raises(ValueError):
            v_target(sig)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            DiffusionSignal(np.zeros(3), np.zeros(4), 0.5)
