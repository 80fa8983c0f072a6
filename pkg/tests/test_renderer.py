import numpy as np
import pytest

import oracles
from voxsplat import (Camera, Gaussian, RenderOptions, RigidTransform,
                      project_gaussian, rasterize, render_depth)
from voxsplat.splats import GaussianCloud


def camera(w=16, h=16, f=32.0, pose=None):
    return Camera(fx=f, fy=f, cx=w / 2, cy=h / 2, width=w, height=h,
                  world_from_camera=pose or RigidTransform.identity())


def random_cloud(rng, n, depth=(2.5, 6.0)):
    means = np.stack([rng.uniform(-0.8, 0.8, n), rng.uniform(-0.8, 0.8, n),
                      rng.uniform(*depth, n)], axis=1)
    return GaussianCloud(means, rng.uniform(0.2, 0.9, n),
                         rng.uniform(0.05, 0.4, (n, 3)),
                         rng.normal(0, 1, (n, 4)) + [2.0, 0, 0, 0],
                         rng.uniform(0, 1, (n, 3)))


class TestProjection:
    def test_on_axis_projection(self):
        cam = Camera(fx=100, fy=100, cx=50, cy=50, width=100, height=100)
        g = Gaussian(np.array([0.0, 0.0, 10.0]), 1.0, 0.01 * np.eye(3),
                     np.zeros(3))
        mean2d, cov2d, depth = project_gaussian(g, cam)
        np.testing.assert_allclose(mean2d, [50.0, 50.0])
        assert depth == 10.0

    def test_isotropic_on_axis_covariance(self):
        cam = Camera(fx=100, fy=100, cx=50, cy=50, width=100, height=100)
        sigma, z = 0.1, 10.0
        g = Gaussian(np.array([0.0, 0.0, z]), 1.0, sigma**2 * np.eye(3),
                     np.zeros(3))
        _, cov2d, _ = project_gaussian(g, cam)
        expected = (cam.fx * sigma / z) ** 2 + 0.3
        np.testing.assert_allclose(cov2d, expected * np.eye(2), atol=1e-12)

    def test_behind_camera_is_absent(self):
        cam = camera()
        g = Gaussian(np.array([0.0, 0.0, -1.0]), 1.0, np.eye(3), np.zeros(3))
        assert project_gaussian(g, cam) is None

    def test_posed_camera_projection(self):
        pose = RigidTransform.from_yaw(0.4, (1.0, 2.0, 0.5))
        cam = camera(pose=pose)
        g = Gaussian(pose.apply(np.array([[0.0, 0.0, 3.0]]))[0], 1.0,
                     0.01 * np.eye(3), np.zeros(3))
        mean2d, _, depth = project_gaussian(g, cam)
        np.testing.assert_allclose(mean2d, [cam.cx, cam.cy], atol=1e-9)
        assert depth == pytest.approx(3.0)


class TestRasterize:
    def test_empty_scene_is_background_bit_exact(self):
        rng = np.random.default_rng(0)
        cam = camera()
        bg = rng.uniform(0, 1, (16, 16, 3))
        out = rasterize(GaussianCloud.empty(), cam, bg)
        assert np.array_equal(out.color, bg)
        assert np.array_equal(out.alpha, np.zeros((16, 16)))

    def test_opaque_gaussian_centered_on_pixel(self):
        cam = camera()
        # Project the pixel-center (8, 8) sample point to depth 4.
        x = (8 + 0.5 - cam.cx) / cam.fx * 4.0
        cloud = GaussianCloud([[x, x, 4.0]], [1.0], [[0.05, 0.05, 0.05]],
                              [[1.0, 0, 0, 0]], [[0.3, 0.8, 0.1]])
        out = rasterize(cloud, cam, np.zeros((16, 16, 3)))
        np.testing.assert_allclose(out.color[8, 8], [0.3, 0.8, 0.1], atol=1e-6)
        assert out.alpha[8, 8] == pytest.approx(1.0)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        cam = camera()
        for _ in range(25):
            cloud = random_cloud(rng, int(rng.integers(1, 9)))
            bg = rng.uniform(0, 1, (16, 16, 3))
            fast = rasterize(cloud, cam, bg)
            color, alpha, _, _ = oracles.composite(cloud, cam, bg)
            np.testing.assert_allclose(fast.color, color, atol=1e-6)
            np.testing.assert_allclose(fast.alpha, alpha, atol=1e-6)

    def test_tile_size_does_not_change_output(self):
        rng = np.random.default_rng(2)
        cam = camera(w=20, h=14)
        cloud = random_cloud(rng, 6)
        bg = rng.uniform(0, 1, (14, 20, 3))
        a = rasterize(cloud, cam, bg, RenderOptions(tile_size=16))
        b = rasterize(cloud, cam, bg, RenderOptions(tile_size=5))
        np.testing.assert_allclose(a.color, b.color, atol=1e-12)

    def test_thread_count_does_not_change_output(self):
        rng = np.random.default_rng(12)
        cam = camera(w=32, h=32)
        cloud = random_cloud(rng, 12)
        bg = rng.uniform(0, 1, (32, 32, 3))
        a = rasterize(cloud, cam, bg, RenderOptions(tile_size=8, threads=1))
        b = rasterize(cloud, cam, bg, RenderOptions(tile_size=8, threads=4))
        assert np.array_equal(a.color, b.color)

    def test_alpha_monotone_under_added_gaussian(self):
        rng = np.random.default_rng(3)
        cam = camera()
        cloud = random_cloud(rng, 5)
        bg = np.zeros((16, 16, 3))
        base = rasterize(cloud, cam, bg).alpha
        extra = random_cloud(rng, 1)
        bigger = GaussianCloud(
            np.concatenate([cloud.means, extra.means]),
            np.concatenate([cloud.alphas, extra.alphas]),
            np.concatenate([cloud.scales, extra.scales]),
            np.concatenate([cloud.quats, extra.quats]),
            np.concatenate([cloud.colors, extra.colors]))
        grown = rasterize(bigger, cam, bg).alpha
        assert np.all(grown >= base - 1e-12)

    def test_energy_bound(self):
        rng = np.random.default_rng(4)
        cam = camera()
        cloud = random_cloud(rng, 8)
        out = rasterize(cloud, cam, np.zeros((16, 16, 3)))
        assert np.all(out.alpha <= 1.0 + 1e-12)
        assert np.all(out.alpha >= 0.0)

    def test_depth_tie_broken_by_index(self):
        cam = camera()
        x = (8 + 0.5 - cam.cx) / cam.fx * 4.0  # on the pixel (8, 8) sample ray
        means = [[x, x, 4.0], [x, x, 4.0]]  # exactly tied depths
        cloud_ab = GaussianCloud(means, [1.0, 1.0], [[0.2] * 3] * 2,
                                 [[1.0, 0, 0, 0]] * 2, [[1, 0, 0], [0, 1, 0.0]])
        out1 = rasterize(cloud_ab, cam, np.zeros((16, 16, 3)))
        out2 = rasterize(cloud_ab, cam, np.zeros((16, 16, 3)))
        assert np.array_equal(out1.color, out2.color)
        np.testing.assert_allclose(out1.color[8, 8], [1, 0, 0], atol=1e-6)

    def test_background_shape_validated(self):
        with pytest.raises(ValueError):
            rasterize(GaussianCloud.empty(), camera(), np.zeros((4, 4, 3)))


class TestRenderDepth:
    def test_single_opaque_gaussian_depth(self):
        cam = camera()
        cloud = GaussianCloud([[0.0, 0.0, 5.0]], [1.0], [[0.2] * 3],
                              [[1.0, 0, 0, 0]], [[1.0, 1.0, 1.0]])
        depth = render_depth(cloud, cam)
        center = depth.values[8, 8]
        assert depth.valid[8, 8]
        assert center == pytest.approx(5.0, abs=1e-3)

    def test_empty_scene_all_invalid(self):
        depth = render_depth(GaussianCloud.empty(), camera())
        assert not depth.valid.any()

    def test_near_gaussian_dominates(self):
        cam = camera()
        x3 = (8 + 0.5 - cam.cx) / cam.fx * 3.0
        x6 = (8 + 0.5 - cam.cx) / cam.fx * 6.0
        cloud = GaussianCloud([[x3, x3, 3.0], [x6, x6, 6.0]], [1.0, 1.0],
                              [[0.2] * 3] * 2, [[1.0, 0, 0, 0]] * 2,
                              [[1, 1, 1.0]] * 2)
        depth = render_depth(cloud, cam)
        assert depth.values[8, 8] == pytest.approx(3.0, abs=1e-2)

    def test_depth_matches_oracle_weights(self):
        rng = np.random.default_rng(5)
        cam = camera()
        cloud = random_cloud(rng, 6)
        got = render_depth(cloud, cam)
        _, _, num, den = oracles.composite(cloud, cam, np.zeros((16, 16, 3)))
        valid = den >= 1e-3
        np.testing.assert_array_equal(got.valid, valid)
        np.testing.assert_allclose(got.values[valid], num[valid] / den[valid],
                                   atol=1e-9)
