import numpy as np
import pytest

from voxsplat import (Camera, RigidTransform, build_panorama, dir_to_pixel,
                      pixel_to_dir, sample_background, sample_panorama)
from voxsplat.sky import SkyPanorama

SIZE = (64, 128)

# World-from-camera rotation that points the optical axis (+z cam) down
# world +x, with camera up = world up.
LOOK_PLUS_X = np.array([[0.0, 0.0, 1.0],
                        [-1.0, 0.0, 0.0],
                        [0.0, -1.0, 0.0]])


def cam_looking_plus_x(translation=(0.0, 0.0, 0.0), f=8.0, size=16):
    pose = RigidTransform(LOOK_PLUS_X, np.asarray(translation, dtype=float))
    return Camera(fx=f, fy=f, cx=size / 2, cy=size / 2, width=size,
                  height=size, world_from_camera=pose)


class TestEquirectMapping:
    def test_plus_x_maps_to_center(self):
        uv = dir_to_pixel(np.array([1.0, 0.0, 0.0]), SIZE)
        np.testing.assert_allclose(uv, [SIZE[1] / 2, SIZE[0] / 2])

    def test_zenith_maps_to_top_row(self):
        uv = dir_to_pixel(np.array([0.0, 0.0, 1.0]), SIZE)
        assert uv[1] == 0.0

    def test_nadir_maps_to_bottom_row(self):
        uv = dir_to_pixel(np.array([0.0, 0.0, -1.0]), SIZE)
        assert uv[1] == SIZE[0]

    def test_round_trip_random_directions(self):
        rng = np.random.default_rng(0)
        d = rng.normal(0, 1, (1000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d = d[np.abs(d[:, 2]) < 0.999]  # asin loses precision at the poles
        back = pixel_to_dir(dir_to_pixel(d, SIZE), SIZE)
        assert np.abs(back - d).max() < 1e-6

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            dir_to_pixel(np.zeros(3), SIZE)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            dir_to_pixel(np.array([1.0, 1.0, 0.0]), SIZE)


class TestBuildPanorama:
    def test_constant_transport_inside_fov(self):
        color = np.array([0.1, 0.6, 0.9])
        image = np.broadcast_to(color, (16, 16, 3)).copy()
        mask = np.ones((16, 16), dtype=bool)
        pano = build_panorama([(image, mask, cam_looking_plus_x())], (32, 64))
        assert pano.coverage.any() and not pano.coverage.all()
        covered = pano.data[pano.coverage]
        np.testing.assert_array_equal(covered,
                                      np.broadcast_to(color, covered.shape))

    def test_translation_invariance_bit_exact(self):
        rng = np.random.default_rng(1)
        image = rng.uniform(0, 1, (16, 16, 3))
        mask = rng.uniform(0, 1, (16, 16)) > 0.3
        a = build_panorama([(image, mask, cam_looking_plus_x())], (32, 64))
        b = build_panorama([(image, mask, cam_looking_plus_x((7.0, -2.0, 11.0)))],
                           (32, 64))
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.coverage, b.coverage)

    def test_overlapping_views_average(self):
        c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
        img1 = np.broadcast_to(c1, (16, 16, 3)).copy()
        img2 = np.broadcast_to(c2, (16, 16, 3)).copy()
        mask = np.ones((16, 16), dtype=bool)
        cam = cam_looking_plus_x()
        pano = build_panorama([(img1, mask, cam), (img2, mask, cam)], (32, 64))
        covered = pano.data[pano.coverage]
        np.testing.assert_allclose(covered,
                                   np.broadcast_to((c1 + c2) / 2, covered.shape))

    def test_mask_excludes_non_sky(self):
        image = np.ones((16, 16, 3))
        mask = np.zeros((16, 16), dtype=bool)
        pano = build_panorama([(image, mask, cam_looking_plus_x())], (32, 64))
        assert not pano.coverage.any()

    def test_uncovered_pixels_use_fill_value(self):
        image = np.ones((16, 16, 3))
        mask = np.ones((16, 16), dtype=bool)
        pano = build_panorama([(image, mask, cam_looking_plus_x())], (32, 64),
                              uncovered_value=0.25)
        assert np.all(pano.data[~pano.coverage] == 0.25)

    def test_no_views_rejected(self):
        with pytest.raises(ValueError):
            build_panorama([], (32, 64))


class TestSampleBackground:
    def test_constant_panorama_samples_constant(self):
        pano = SkyPanorama(np.full((32, 64, 3), 0.77))
        out = sample_background(pano, cam_looking_plus_x())
        np.testing.assert_allclose(out, 0.77)

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        pano = SkyPanorama(rng.uniform(0, 1, (32, 64, 3)))
        a = sample_background(pano, cam_looking_plus_x())
        b = sample_background(pano, cam_looking_plus_x((3.0, 4.0, -5.0)))
        assert np.array_equal(a, b)

    def test_yawed_camera_samples_opposite_half(self):
        # Panorama left half (azimuth < 0) red, right half green.
        data = np.zeros((32, 64, 3))
        data[:, :32, 0] = 1.0
        data[:, 32:, 1] = 1.0
        pano = SkyPanorama(data)
        fwd = cam_looking_plus_x()  # +x is the azimuth-0 column (u = W/2)
        flipped_rot = RigidTransform.from_yaw(np.pi).rotation @ LOOK_PLUS_X
        back = Camera(fx=8, fy=8, cx=8, cy=8, width=16, height=16,
                      world_from_camera=RigidTransform(flipped_rot, np.zeros(3)))
        sample_fwd = sample_background(pano, fwd)
        sample_back = sample_background(pano, back)
        # Forward-facing pixels straddle the half boundary at u = W/2; the
        # 180-degree yaw looks at the seam between the halves instead.
        assert sample_fwd[8, 4].tolist() != sample_fwd[8, 12].tolist()
        assert np.argmax(sample_fwd[8, 4]) != np.argmax(sample_back[8, 4])

    def test_seam_continuity(self):
        rng = np.random.default_rng(3)
        pano = SkyPanorama(rng.uniform(0, 1, (32, 64, 3)))
        eps = 1e-4
        left = pixel_to_dir(np.array([64.0 - eps, 16.0]), (32, 64))
        right = pixel_to_dir(np.array([eps, 16.0]), (32, 64))
        a = sample_panorama(pano, left)
        b = sample_panorama(pano, right)
        assert np.abs(a - b).max() < 1e-2  # within one interpolation step

    def test_multichannel_panorama(self):
        rng = np.random.default_rng(4)
        pano = SkyPanorama(rng.uniform(0, 1, (16, 32, 8)))
        out = sample_background(pano, cam_looking_plus_x())
        assert out.shape == (16, 16, 8)
        assert np.all(np.isfinite(out))
