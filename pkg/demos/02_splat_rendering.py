"""Decode per-voxel Gaussians and rasterize them over a sky background.

A colored box scene is voxelized, every voxel gets hand-crafted raw Gaussian
parameters (color by semantic label), and the decoded scene is rendered from
an orbiting camera with a gradient sky panorama composited behind it.
"""

import pathlib

import numpy as np

from voxsplat import (Camera, GridMeta, LabeledPointCloud, RigidTransform,
                      decode_scene, export_ply, rasterize, render_depth,
                      voxelize)
from voxsplat.io import write_pfm, write_png
from voxsplat.sky import SkyPanorama, sample_background
from voxsplat.splats import RAW_WIDTH

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

rng = np.random.default_rng(1)

# Checkerboard floor and two boxes.
floor = np.stack([rng.uniform(-3, 3, 6000), rng.uniform(-3, 3, 6000),
                  np.zeros(6000)], axis=1)
box_a = rng.uniform(0, 1, (1500, 3)) * [0.8, 0.8, 1.2] + [-1.5, 0.2, 0.0]
box_b = rng.uniform(0, 1, (1500, 3)) * [1.0, 0.6, 0.7] + [0.8, -1.0, 0.0]
labels = np.concatenate([np.zeros(6000), np.ones(1500), np.full(1500, 2)])
cloud = LabeledPointCloud(np.concatenate([floor, box_a, box_b]),
                          labels.astype(np.int32))

grid = voxelize(cloud, GridMeta(origin=np.array([-4.0, -4.0, -0.2]),
                                voxel_size=0.2))
print(f"{len(grid)} occupied voxels")

# Raw parameters: slightly jittered centers, near-voxel-size scales, colors
# keyed by the voxel's majority label.
palette = np.array([[0.55, 0.55, 0.5], [0.85, 0.3, 0.25], [0.2, 0.45, 0.8]])
m_per_voxel = 2
raw = np.zeros((len(grid), m_per_voxel, RAW_WIDTH))
raw[:, :, 0:3] = rng.normal(0, 0.3, (len(grid), m_per_voxel, 3))
raw[:, :, 3] = 2.0                        # sigmoid(2) ~ 0.88 opacity
raw[:, :, 4:7] = np.log(0.08)             # ~8 cm scales
raw[:, :, 7:11] = rng.normal(0, 1, (len(grid), m_per_voxel, 4))
voxel_labels = grid.channels["semantic_logits"].argmax(axis=1)
raw[:, :, 11:14] = palette[voxel_labels][:, None, :]

scene = decode_scene(raw, grid)  # confinement radius = 3 * voxel size
export = OUT / "scene_splats.ply"
export.write_bytes(export_ply(scene))
print(f"decoded {len(scene.gaussians)} Gaussians -> {export}")

# Simple vertical-gradient sky.
v = np.linspace(0, 1, 64)[:, None]
sky_rgb = (1 - v) * np.array([0.35, 0.55, 0.9]) + v * np.array([0.9, 0.85, 0.7])
pano = SkyPanorama(np.broadcast_to(sky_rgb[:, None, :], (64, 128, 3)).copy())

look_down = np.array([[0.0, -0.31622777, 0.9486833],
                      [-1.0, 0.0, 0.0],
                      [0.0, -0.9486833, -0.31622777]])
cam = Camera(fx=140, fy=140, cx=80, cy=60, width=160, height=120,
             world_from_camera=RigidTransform(look_down, [-5.0, 0.0, 2.0]))

background = sample_background(pano, cam)
target = rasterize(scene, cam, background)
depth = render_depth(scene, cam)

write_png(OUT / "render.png", target.color)
write_pfm(OUT / "render_alpha.pfm", target.alpha)
write_pfm(OUT / "render_depth.pfm", np.where(depth.valid, depth.values, -1.0))
print(f"rendered {cam.width}x{cam.height}; "
      f"mean opacity {target.alpha.mean():.3f}; "
      f"median visible depth {np.median(depth.values[depth.valid]):.2f} m")
print(f"outputs in {OUT}")
