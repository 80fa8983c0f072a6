"""Fit raw Gaussian parameters to reference views with analytic gradients.

A ground-truth scene renders three reference images; a second scene with the
same voxel scaffold but randomized raw parameters is then optimized by plain
gradient descent through the rasterizer's backward pass, chaining image-space
gradients (color and opacity-vs-mask) all the way back to the raw 14-vectors.
"""

import pathlib

import numpy as np

from voxsplat import (Camera, GridMeta, LabeledPointCloud, LossWeights,
                      RigidTransform, appearance_loss, decode_scene, psnr,
                      rasterize, rasterize_backward, voxelize)
from voxsplat.io import write_png
from voxsplat.splats import RAW_WIDTH

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

rng = np.random.default_rng(2)

pts = rng.uniform(-0.6, 0.6, (40, 3))
pts[:, 2] = rng.uniform(2.5, 4.0, 40)
grid = voxelize(LabeledPointCloud(pts), GridMeta(np.array([-1.0, -1.0, 2.0]),
                                                 0.25))

def make_cameras():
    cams = []
    for dx in (-0.3, 0.0, 0.3):
        cams.append(Camera(fx=60, fy=60, cx=16, cy=16, width=32, height=32,
                           world_from_camera=RigidTransform(np.eye(3),
                                                            [dx, 0.0, 0.0])))
    return cams

cams = make_cameras()
bg = np.zeros((32, 32, 3))

gt_raw = rng.normal(0, 0.5, (len(grid), 1, RAW_WIDTH))
gt_raw[:, :, 3] = 1.5
gt_raw[:, :, 4:7] = np.log(0.12)
gt_raw[:, :, 11:14] = rng.uniform(0.2, 0.9, (len(grid), 1, 3))
gt_scene = decode_scene(gt_raw, grid)
references = [rasterize(gt_scene, cam, bg) for cam in cams]
write_png(OUT / "fit_target.png", references[1].color)

raw = gt_raw + rng.normal(0, 0.6, gt_raw.shape)
weights = LossWeights()
step = 4.0
print("iter   total    L1      mask    1-SSIM   PSNR(center)")
for it in range(120):
    grad_raw = np.zeros_like(raw)
    total = 0.0
    scene = decode_scene(raw, grid)
    for cam, ref in zip(cams, references):
        out = rasterize(scene, cam, bg)
        loss = appearance_loss(out, ref.color, ref.alpha, weights)
        total += loss.total / len(cams)
        # d(weighted L1)/d(color); the SSIM term is monitored, not descended.
        color_grad = weights.l1 * np.sign(out.color - ref.color) \
            / out.color.size
        alpha_grad = weights.mask * np.sign(out.alpha - ref.alpha) \
            / out.alpha.size
        grads = rasterize_backward(scene, cam, bg, color_grad, alpha_grad)
        grad_raw += grads.to_raw(raw, scene.confinement_radius) / len(cams)
    raw -= step * grad_raw
    if it % 20 == 0 or it == 119:
        center = rasterize(decode_scene(raw, grid), cams[1], bg)
        loss = appearance_loss(center, references[1].color,
                               references[1].alpha, weights)
        print(f"{it:4d}  {loss.total:7.4f} {loss.l1:7.4f} {loss.mask_l1:7.4f} "
              f"{loss.dssim:7.4f}   {psnr(center.color, references[1].color):6.2f} dB")

final = rasterize(decode_scene(raw, grid), cams[1], bg)
write_png(OUT / "fit_result.png", final.color)
print(f"wrote {OUT / 'fit_target.png'} and {OUT / 'fit_result.png'}")
