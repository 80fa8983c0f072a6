"""Built-in oracle suite behind ``voxsplat selftest``.

Each check pits a fast implementation against an independent brute-force
computation or an analytically forced value, prints one line per check, and
the whole suite is deterministic for a given seed.
"""

from __future__ import annotations

import math

import numpy as np

from . import (Camera, DiffusionSignal, GaussianCloud, GridMeta,
               LabeledPointCloud, RigidTransform, build_panorama, coarsen,
               decode_scene, deserialize, dir_to_pixel, focal_loss,
               lid_bin_edges, noised_latent, pixel_to_dir, psnr, rasterize,
               rasterize_backward, raymarch_first_hit, sample_background,
               serialize, ssim, trace_ray, unproject_features, v_target,
               voxel_chamfer, voxelize)
from .conditioning import PixelFeatureMap
from .lidar import GaussianRayTracer
from .splats import decode_gaussian


def _brute_composite(cloud, cam, background, cutoff_sigma=3.0, z_clip=0.01,
                     reg=0.3):
    """Scalar per-pixel compositing oracle (no tiling)."""
    n = len(cloud)
    covs = cloud.covariances()
    w_rot = cam.rotation.T
    entries = []
    for i in range(n):
        p = w_rot @ (cloud.means[i] - cam.origin)
        if p[2] <= z_clip:
            continue
        z = p[2]
        jac = np.array([[cam.fx / z, 0, -cam.fx * p[0] / z**2],
                        [0, cam.fy / z, -cam.fy * p[1] / z**2]])
        cov2d = jac @ w_rot @ covs[i] @ w_rot.T @ jac.T + reg * np.eye(2)
        mean2d = np.array([cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy])
        entries.append((z, i, mean2d, np.linalg.inv(cov2d)))
    entries.sort(key=lambda e: (e[0], e[1]))

    color = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    cut2 = cutoff_sigma**2
    for row in range(cam.height):
        for col in range(cam.width):
            pix = np.array([col + 0.5, row + 0.5])
            trans = 1.0
            acc = np.zeros(3)
            for z, i, mean2d, conic in entries:
                d = pix - mean2d
                maha = d @ conic @ d
                if maha > cut2:
                    continue
                w = min(cloud.alphas[i] * math.exp(-0.5 * maha), 1.0)
                acc += trans * w * cloud.colors[i]
                trans *= 1.0 - w
            color[row, col] = acc + trans * background[row, col]
            alpha[row, col] = 1.0 - trans
    return color, alpha


def _random_cloud(rng, n, depth_span=(2.5, 6.0)):
    means = np.stack([rng.uniform(-0.8, 0.8, n), rng.uniform(-0.8, 0.8, n),
                      rng.uniform(*depth_span, n)], axis=1)
    return GaussianCloud(means, rng.uniform(0.2, 0.9, n),
                         rng.uniform(0.05, 0.4, (n, 3)),
                         rng.normal(0, 1, (n, 4)) + np.array([2.0, 0, 0, 0]),
                         rng.uniform(0, 1, (n, 3)))


def _check_voxelize(rng):
    pts = LabeledPointCloud(rng.uniform(0, 1, (1000, 3)),
                            rng.integers(0, 5, 1000))
    meta = GridMeta(np.zeros(3), 0.5)
    grid = voxelize(pts, meta)
    expected = set(map(tuple, np.floor(pts.positions / 0.5).astype(int).tolist()))
    got = set(map(tuple, grid.coords.tolist()))
    assert got == expected, "voxel occupancy disagrees with brute-force bucketing"
    parent = coarsen(grid, 2)
    for c in grid.coords:
        assert tuple(c // 2) in parent, "hierarchy containment violated"


def _check_raymarch(rng):
    pts = LabeledPointCloud(rng.uniform(-2, 2, (60, 3)))
    grid = voxelize(pts, GridMeta(np.zeros(3), 0.25))
    s = grid.meta.voxel_size
    for _ in range(50):
        origin = rng.uniform(-4, 4, 3)
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        hit = raymarch_first_hit(grid, origin, d)
        best = None
        for c in grid.coords:
            lo = grid.meta.origin + c * s
            hi = lo + s
            t0, t1 = 0.0, np.inf
            ok = True
            for a in range(3):
                if d[a] == 0:
                    if origin[a] < lo[a] or origin[a] >= hi[a]:
                        ok = False
                        break
                    continue
                ta, tb = (lo[a] - origin[a]) / d[a], (hi[a] - origin[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                t0, t1 = max(t0, ta), min(t1, tb)
            if ok and t0 <= t1 and (best is None or t0 < best[1]):
                best = (tuple(c), t0)
        if best is None:
            assert hit is None, "ray march hit where the oracle misses"
        else:
            assert hit is not None, "ray march missed where the oracle hits"
            assert abs(hit[1] - best[1]) < 1e-9, "entry distance mismatch"


def _check_decode(rng):
    g = decode_gaussian(np.concatenate([np.zeros(7), [1, 0, 0, 0], [0.5] * 3]),
                        np.array([1.0, 2.0, 3.0]), 0.3)
    assert np.allclose(g.mean, [1, 2, 3]) and g.alpha == 0.5
    assert np.allclose(g.cov, np.eye(3))
    grid = voxelize(LabeledPointCloud(rng.uniform(0, 1, (50, 3))),
                    GridMeta(np.zeros(3), 0.1))
    raw = rng.normal(0, 2, (len(grid), 2, 14))
    scene = decode_scene(raw, grid)
    offsets = scene.gaussians.means - np.repeat(grid.centroids(), 2, axis=0)
    assert np.abs(offsets).max() < scene.confinement_radius, \
        "decoded center escaped its confinement radius"


def _check_conditioning(rng):
    bins = lid_bin_edges(0.1, 90.0, 64)
    assert bins.edges[0] == 0.1 and bins.edges[-1] == 90.0
    assert np.all(np.diff(bins.widths) > 0), "bin widths must strictly increase"
    cam = Camera(fx=40, fy=40, cx=4, cy=4, width=8, height=8)
    feats = rng.uniform(-1, 1, (8, 8, 3))
    logits = rng.normal(0, 1, (8, 8, 4))
    probs = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
    small = lid_bin_edges(1.0, 3.0, 4)
    meta = GridMeta(np.array([-10.0, -10.0, 0.0]), 0.5, (40, 40, 10))
    cond = unproject_features([PixelFeatureMap(feats, probs)], [cam], small, meta)
    assert cond.dropped_samples == 0, "test scene must be fully inside the grid"
    np.testing.assert_allclose(cond.total_feature(), feats.sum(axis=(0, 1)),
                               rtol=1e-9)


def _check_rasterizer(rng):
    for _ in range(20):
        n = int(rng.integers(1, 9))
        cloud = _random_cloud(rng, n)
        cam = Camera(fx=24, fy=24, cx=6, cy=6, width=12, height=12)
        bg = rng.uniform(0, 1, (12, 12, 3))
        fast = rasterize(cloud, cam, bg)
        color, alpha = _brute_composite(cloud, cam, bg)
        assert np.abs(fast.color - color).max() < 1e-6, "tiled vs oracle color"
        assert np.abs(fast.alpha - alpha).max() < 1e-6, "tiled vs oracle alpha"


def _check_gradients(rng):
    cam = Camera(fx=18, fy=18, cx=4, cy=4, width=8, height=8)
    for _ in range(5):
        n = int(rng.integers(1, 4))
        cloud = _random_cloud(rng, n, depth_span=(3.0, 5.0))
        bg = rng.uniform(0, 1, (8, 8, 3))
        ref = rng.uniform(0, 1, (8, 8, 3))

        def params():
            return np.concatenate([cloud.means, cloud.alphas[:, None],
                                   cloud.scales, cloud.quats, cloud.colors],
                                  axis=1)

        def loss(p):
            c = GaussianCloud(p[:, :3], p[:, 3], p[:, 4:7], p[:, 7:11], p[:, 11:14])
            return float(np.mean((rasterize(c, cam, bg).color - ref) ** 2))

        p0 = params()
        img = rasterize(cloud, cam, bg).color
        grads = rasterize_backward(cloud, cam, bg, 2 * (img - ref) / img.size)
        flat = np.concatenate([grads.d_means, grads.d_alphas[:, None],
                               grads.d_scales, grads.d_quats, grads.d_colors],
                              axis=1)
        h = 1e-5
        for i in range(n):
            for j in range(14):
                hi_p, lo_p = p0.copy(), p0.copy()
                hi_p[i, j] += h
                lo_p[i, j] -= h
                fd = (loss(hi_p) - loss(lo_p)) / (2 * h)
                err = abs(flat[i, j] - fd)
                assert err <= max(1e-3 * abs(fd), 1e-6), \
                    f"gradient mismatch at ({i},{j}): {flat[i, j]} vs {fd}"


def _check_sky(rng):
    for _ in range(5):
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        if abs(d[2]) > 0.99:
            continue
        uv = dir_to_pixel(d, (64, 128))
        back = pixel_to_dir(uv, (64, 128))
        assert np.abs(back - d).max() < 1e-6, "equirect round trip"
    rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    img = np.full((16, 16, 3), 0.25)
    mask = np.ones((16, 16), dtype=bool)
    views_a = [(img, mask, Camera(fx=8, fy=8, cx=8, cy=8, width=16, height=16,
                                  world_from_camera=RigidTransform(rot, np.zeros(3))))]
    views_b = [(img, mask, Camera(fx=8, fy=8, cx=8, cy=8, width=16, height=16,
                                  world_from_camera=RigidTransform(rot, np.array([5., -3., 2.]))))]
    pa = build_panorama(views_a, (32, 64))
    pb = build_panorama(views_b, (32, 64))
    assert np.array_equal(pa.data, pb.data), "panorama must ignore translation"
    sa = sample_background(pa, views_a[0][2])
    sb = sample_background(pa, views_b[0][2])
    assert np.array_equal(sa, sb), "background sampling must ignore translation"


def _check_lidar(rng):
    meta = GridMeta(np.zeros(3), 0.1)
    grid = voxelize(LabeledPointCloud(np.array([[5.05, 0.05, 0.05]])), meta)
    raw = np.zeros((1, 1, 14))
    raw[0, 0, 4:7] = np.log(0.05)
    raw[0, 0, 7] = 1.0
    scene = decode_scene(raw, grid, r=0.3)
    ret = trace_ray(scene, np.array([5.05, 0.05, -10.0]), np.array([0.0, 0.0, 1.0]),
                    max_range=50.0)
    expected = (0.05 - 2 * 0.05) + 10.0  # center z minus 2 sigma, from z=-10
    assert ret.hit and abs(ret.range - expected) < 1e-3, "analytic lidar range"

    cloud_pts = LabeledPointCloud(rng.uniform(0, 2, (30, 3)))
    grid2 = voxelize(cloud_pts, GridMeta(np.zeros(3), 0.25))
    raw2 = rng.normal(0, 0.5, (len(grid2), 1, 14))
    scene2 = decode_scene(raw2, grid2)
    tracer = GaussianRayTracer(scene2)
    covs = scene2.gaussians.covariances()
    precs = np.linalg.inv(covs)
    for _ in range(30):
        origin = rng.uniform(-3, 3, 3)
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        fast = tracer.trace(origin, d, 100.0)
        best = math.inf
        for i in range(len(scene2.gaussians)):
            rel = origin - scene2.gaussians.means[i]
            a = d @ precs[i] @ d
            b = 2 * (d @ precs[i] @ rel)
            c = rel @ precs[i] @ rel - 4.0
            disc = b * b - 4 * a * c
            if disc < 0:
                continue
            t_in = (-b - math.sqrt(disc)) / (2 * a)
            t_out = (-b + math.sqrt(disc)) / (2 * a)
            if t_out >= 0:
                best = min(best, max(t_in, 0.0))
        if best > 100.0:
            assert not fast.hit, "scaffold hit where brute force misses"
        else:
            assert fast.hit and abs(fast.range - best) < 1e-9, \
                "scaffold vs brute-force range"


def _check_metrics(rng):
    a = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 0.05]])),
                 GridMeta(np.zeros(3), 0.1))
    b = voxelize(LabeledPointCloud(np.array([[0.35, 0.45, 0.05]])),
                 GridMeta(np.zeros(3), 0.1))
    assert voxel_chamfer(a, b) == 5.0, "3-4-5 chamfer"
    pred = rng.dirichlet(np.ones(6), 100)
    target = np.zeros_like(pred)
    target[np.arange(100), rng.integers(0, 6, 100)] = 1.0
    ce = -np.log(np.maximum((pred * target).sum(1), 1e-12)).mean()
    assert abs(focal_loss(pred, target, gamma=0.0) - ce) < 1e-9, "focal(0) == CE"
    img = rng.uniform(0, 1, (16, 16))
    assert psnr(img, img) == math.inf
    assert abs(psnr(img, img + 0.1) - 20.0) < 1e-9, "PSNR of MSE 0.01"
    assert ssim(img, img) == 1.0, "SSIM of identical images"
    x = rng.normal(0, 1, (4, 4))
    eps = rng.normal(0, 1, (4, 4))
    assert np.array_equal(v_target(DiffusionSignal(x, eps, 1.0)), eps)
    assert np.array_equal(v_target(DiffusionSignal(x, eps, 0.0)), -x)
    assert np.array_equal(noised_latent(DiffusionSignal(x, eps, 1.0)), x)


def _check_serialization(rng):
    pts = LabeledPointCloud(rng.uniform(-5, 5, (300, 3)), rng.integers(0, 7, 300))
    grid = voxelize(pts, GridMeta(np.array([-5.0, -5.0, -5.0]), 0.4))
    grid = grid.with_channel("feature", rng.normal(0, 1, (len(grid), 8)))
    assert deserialize(serialize(grid)).equals(grid), "grid round trip"
    blob = bytearray(serialize(grid))
    blob[0] = 0x58
    try:
        deserialize(bytes(blob))
    except ValueError:
        pass
    else:
        raise AssertionError("corrupted magic must raise a parse error")


CHECKS = [
    ("voxelize vs brute-force bucketing + hierarchy", _check_voxelize),
    ("ray march vs AABB oracle", _check_raymarch),
    ("activation decode fixed points + confinement", _check_decode),
    ("depth bins + feature-mass conservation", _check_conditioning),
    ("tiled rasterizer vs per-pixel oracle", _check_rasterizer),
    ("analytic gradients vs finite differences", _check_gradients),
    ("sky round trip + translation invariance", _check_sky),
    ("lidar analytic + scaffold vs brute force", _check_lidar),
    ("metric forced values", _check_metrics),
    ("grid serialization round trip", _check_serialization),
]


def run_selftest(seed: int = 0, out=print) -> bool:
    """Run every check; returns True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            fn(np.random.default_rng(seed))
            out(f"[PASS] {name}")
        except Exception as exc:  # report and continue: the table is the point
            all_ok = False
            out(f"[FAIL] {name}: {exc}")
    return all_ok
