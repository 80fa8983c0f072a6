"""Ground-truth processing: accumulate, label, re-insert dynamics, chunk.

Synthesizes three sensor frames of a scene with one moving car, runs the full
pipeline (dynamic removal during accumulation, nearest-neighbor semantic
propagation, surface re-sampling of the car at the target frame, forward-
biased chunk crop), voxelizes the chunk at 0.1 m / 0.4 m, and reports how much
of the fine grid is occluded from a front camera rig.
"""

import pathlib

import numpy as np

from voxsplat import (Camera, ChunkSpec, DynamicBox, LabeledPointCloud,
                      RigidTransform, accumulate, crop_chunk, insert_dynamic,
                      make_training_pair, propagate_semantics,
                      voxel_visibility)
from voxsplat.io import write_point_ply

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

rng = np.random.default_rng(5)


def sense_frame(ego_x, car_x):
    """One sensor frame in the sensor frame: static world + the car."""
    ground = np.stack([rng.uniform(-10, 30, 3000) - ego_x,
                       rng.uniform(-8, 8, 3000),
                       np.full(3000, 0.0)], axis=1)
    building = np.stack([rng.uniform(5, 15, 1200) - ego_x,
                         rng.uniform(6.0, 7.0, 1200),
                         rng.uniform(0, 6, 1200)], axis=1)
    car = np.stack([rng.uniform(-2, 2, 500) * 0.9 + (car_x - ego_x),
                    rng.uniform(-0.9, 0.9, 500),
                    rng.uniform(0, 1.5, 500)], axis=1)
    pts = np.concatenate([ground, building, car])
    # Only ~15% of points carry annotations, as if from a sparse labeler.
    labels = np.concatenate([np.zeros(3000), np.ones(1200),
                             np.full(500, 2)]).astype(np.int32)
    keep = rng.uniform(0, 1, len(labels)) < 0.15
    labels = np.where(keep, labels, -1).astype(np.int32)
    return LabeledPointCloud(pts, labels,
                             frame_ids=np.full(len(pts), 0, dtype=np.int32))


frames = []
boxes = []
for f, (ego_x, car_x) in enumerate([(0.0, 8.0), (2.0, 12.0), (4.0, 16.0)]):
    cloud = sense_frame(ego_x, car_x)
    cloud.frame_ids[:] = f
    pose = RigidTransform(np.eye(3), np.array([ego_x, 0.0, 1.8]))
    frames.append((cloud, pose))
    boxes.append(DynamicBox(center=np.array([car_x, 0.0, 2.55]),
                            half_extent=np.array([2.2, 1.1, 0.9]),
                            yaw=0.0, frame_id=f, object_id=1, label=2))

world = accumulate(frames, boxes)
print(f"accumulated {sum(len(c) for c, _ in frames)} points -> "
      f"{len(world)} after dynamic removal")

labeled_before = (world.labels >= 0).mean()
world = propagate_semantics(world)
print(f"semantics: {labeled_before:.0%} annotated -> "
      f"{(world.labels >= 0).mean():.0%} after propagation")

target = 2
world = insert_dynamic(world, [b for b in boxes if b.frame_id == target],
                       samples_per_box=800, seed=0)
print(f"re-inserted car at frame {target}: {len(world)} points")

spec = ChunkSpec(ego_pose=frames[target][1], side=51.2, height=51.2,
                 forward_fraction=0.75, height_floor=-5.0)
chunk = crop_chunk(world, spec)
write_point_ply(OUT / "chunk.ply", chunk)
lo, hi = spec.bounds()
print(f"chunk: kept {len(chunk)} points in "
      f"[{lo[0]:.1f}, {hi[0]:.1f}) x [{lo[1]:.1f}, {hi[1]:.1f}) m")

pair = make_training_pair(chunk, spec.grid_meta(0.1), spec.grid_meta(0.4))
print(f"training pair: {len(pair.fine)} fine voxels (0.1 m), "
      f"{len(pair.coarse)} coarse voxels (0.4 m), factor {pair.factor}")

cams = [Camera(fx=400, fy=400, cx=320, cy=240, width=640, height=480,
               world_from_camera=RigidTransform(
                   RigidTransform.from_yaw(yaw).rotation
                   @ np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0],
                               [0.0, -1.0, 0.0]]),
                   np.array([0.0, 0.0, 2.0])))
        for yaw in (-0.6, 0.0, 0.6)]
visible, occluded_fraction = voxel_visibility(pair.coarse, cams)
print(f"coarse-voxel visibility from 3 front cameras: "
      f"{occluded_fraction:.0%} occluded / out of view")
