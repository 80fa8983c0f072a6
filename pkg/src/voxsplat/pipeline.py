"""Ground-truth processing: accumulation, semantics, dynamic objects, chunking.

The stages mirror how an autonomous-driving capture becomes a training
sample: per-frame points are moved to world space with dynamic objects cut
out by their boxes, unlabeled points inherit the label of their nearest
annotated neighbor, dynamic objects are re-inserted as surface samples at a
chosen target frame, and a forward-biased square chunk around the ego pose is
cropped and voxelized at two resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .camera import Camera, RigidTransform
from .grid import (GridHierarchy, GridMeta, SparseVoxelGrid, coarsen,
                   raymarch_first_hit, voxelize)
from .points import LabeledPointCloud, concatenate

DEFAULT_CHUNK_SIDE = 102.4
DEFAULT_FORWARD_FRACTION = 0.75
DEFAULT_HEIGHT_FLOOR = -10.0


@dataclass
class DynamicBox:
    """Yaw-rotated world-space bounding box of a dynamic object."""

    center: np.ndarray       # (3,) meters
    half_extent: np.ndarray  # (3,) meters, all > 0
    yaw: float = 0.0         # radians about world z
    frame_id: int = 0
    object_id: int = 0
    label: int = -1          # semantic class used when re-inserting samples

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extent = np.asarray(self.half_extent, dtype=np.float64).reshape(3)
        if np.any(self.half_extent <= 0):
            raise ValueError("box half-extents must be > 0")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inclusive point-in-box test in the box's yaw-aligned frame."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        rel = points - self.center
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        local = np.stack([c * rel[:, 0] + s * rel[:, 1],
                          -s * rel[:, 0] + c * rel[:, 1],
                          rel[:, 2]], axis=1)
        return np.all(np.abs(local) <= self.half_extent, axis=1)


@dataclass
class ChunkSpec:
    """Forward-biased square crop around an ego pose.

    The kept region, in the ego frame (x forward, y left/lateral, z up), is

        x in [-(1 - f) * side, f * side)
        y in [-side / 2, side / 2)
        z in [height_floor, height_floor + height)
    """

    ego_pose: RigidTransform
    side: float = DEFAULT_CHUNK_SIDE
    height: float = DEFAULT_CHUNK_SIDE
    forward_fraction: float = DEFAULT_FORWARD_FRACTION
    height_floor: float = DEFAULT_HEIGHT_FLOOR

    def __post_init__(self):
        if self.side <= 0 or self.height <= 0:
            raise ValueError("chunk side and height must be > 0")
        if not 0.0 < self.forward_fraction < 1.0:
            raise ValueError("forward_fraction must be in (0, 1)")

    def bounds(self):
        """(lo, hi) of the kept half-open box in the ego frame."""
        lo = np.array([-(1.0 - self.forward_fraction) * self.side,
                       -0.5 * self.side, self.height_floor])
        hi = np.array([self.forward_fraction * self.side,
                       0.5 * self.side, self.height_floor + self.height])
        return lo, hi

    def grid_meta(self, voxel_size: float) -> GridMeta:
        """Grid placement whose origin is the chunk's minimum corner; a
        102.4 m chunk at 0.1 m yields a 1024-voxel side."""
        lo, hi = self.bounds()
        extent = tuple(int(round((h - l) / voxel_size)) for l, h in zip(lo, hi))
        return GridMeta(lo, voxel_size, extent)


def accumulate(frames: Sequence[tuple[LabeledPointCloud, RigidTransform]],
               boxes: Sequence[DynamicBox] = ()) -> LabeledPointCloud:
    """World-space concatenation with per-frame dynamic points removed.

    A point is dropped iff it falls inside a box whose ``frame_id`` matches
    the point's frame.  Points keep their labels/timestamps; frame ids are
    assigned from the frame index when a cloud does not carry them.
    """
    out = []
    for index, (cloud, world_from_sensor) in enumerate(frames):
        world = world_from_sensor.apply(cloud.positions)
        frame_ids = cloud.frame_ids
        if frame_ids is None:
            frame_ids = np.full(len(cloud), index, dtype=np.int32)
        keep = np.ones(len(cloud), dtype=bool)
        for box in boxes:
            affected = frame_ids == box.frame_id
            if affected.any():
                keep &= ~(affected & box.contains(world))
        moved = LabeledPointCloud(world, cloud.labels, cloud.timestamps, frame_ids)
        out.append(moved.select(keep))
    return concatenate(out)


def propagate_semantics(cloud: LabeledPointCloud) -> LabeledPointCloud:
    """Give every unlabeled point its Euclidean-nearest labeled neighbor's
    label; exact distance ties go to the smallest labeled point index."""
    if cloud.labels is None:
        raise ValueError("cloud carries no labels to propagate")
    labels = cloud.labels.copy()
    unlabeled = labels < 0
    if not unlabeled.any():
        return LabeledPointCloud(cloud.positions.copy(), labels,
                                 cloud.timestamps, cloud.frame_ids)
    labeled_idx = np.flatnonzero(~unlabeled)
    if len(labeled_idx) == 0:
        raise ValueError("no labeled points to propagate from")

    tree = cKDTree(cloud.positions[labeled_idx])
    queries = cloud.positions[unlabeled]
    dists, nearest = tree.query(queries)
    for qi, (point, d0) in enumerate(zip(queries, dists)):
        ties = tree.query_ball_point(point, d0)
        if len(ties) > 1:
            nearest[qi] = min(ties)
    labels[unlabeled] = labels[labeled_idx[np.atleast_1d(nearest)]]
    return LabeledPointCloud(cloud.positions.copy(), labels,
                             None if cloud.timestamps is None else cloud.timestamps.copy(),
                             None if cloud.frame_ids is None else cloud.frame_ids.copy())


def _face_allocation(areas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` samples proportional to area."""
    share = areas / areas.sum() * total
    counts = np.floor(share).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _stratified_unit_square(n: int, rng: np.random.Generator) -> np.ndarray:
    """n jittered samples on a near-square grid over [0, 1)^2."""
    gx = int(np.ceil(np.sqrt(n)))
    gy = int(np.ceil(n / gx))
    cells = np.stack(np.meshgrid(np.arange(gx), np.arange(gy)),
                     axis=-1).reshape(-1, 2)[:n]
    jitter = rng.random((n, 2))
    return (cells + jitter) / np.array([gx, gy])


def insert_dynamic(cloud: LabeledPointCloud, boxes_at_target: Sequence[DynamicBox],
                   samples_per_box: int, seed: int = 0) -> LabeledPointCloud:
    """Append deterministic stratified surface samples of each target-frame box.

    Samples are split over the six faces proportionally to face area
    (largest-remainder rule) and stratified on a jittered grid within each
    face; they carry the box's class label.
    """
    if samples_per_box < 0:
        raise ValueError("samples_per_box must be >= 0")
    if samples_per_box == 0 or not boxes_at_target:
        return cloud
    rng = np.random.default_rng(seed)
    added_pos, added_lab = [], []
    for box in boxes_at_target:
        ex, ey, ez = box.half_extent * 2.0
        # Face order: -x, +x, -y, +y, -z, +z.
        areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
        counts = _face_allocation(areas, samples_per_box)
        local = []
        for face, n in enumerate(counts):
            if n == 0:
                continue
            uv = _stratified_unit_square(int(n), rng) - 0.5
            axis = face // 2
            sign = -1.0 if face % 2 == 0 else 1.0
            pts = np.empty((int(n), 3))
            others = [a for a in range(3) if a != axis]
            pts[:, axis] = sign * box.half_extent[axis]
            pts[:, others[0]] = uv[:, 0] * 2.0 * box.half_extent[others[0]]
            pts[:, others[1]] = uv[:, 1] * 2.0 * box.half_extent[others[1]]
            local.append(pts)
        local = np.concatenate(local)
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        world = np.stack([c * local[:, 0] - s * local[:, 1],
                          s * local[:, 0] + c * local[:, 1],
                          local[:, 2]], axis=1) + box.center
        added_pos.append(world)
        added_lab.append(np.full(len(world), box.label, dtype=np.int32))

    additions = LabeledPointCloud(
        np.concatenate(added_pos),
        np.concatenate(added_lab) if cloud.labels is not None else None,
        np.zeros(sum(map(len, added_pos))) if cloud.timestamps is not None else None,
        np.full(sum(map(len, added_pos)),
                boxes_at_target[0].frame_id, dtype=np.int32)
        if cloud.frame_ids is not None else None,
    )
    return concatenate([cloud, additions])


def crop_chunk(cloud: LabeledPointCloud, spec: ChunkSpec) -> LabeledPointCloud:
    """Points inside the chunk, re-expressed in the ego (chunk) frame."""
    ego = spec.ego_pose.apply_inverse(cloud.positions)
    lo, hi = spec.bounds()
    keep = np.all((ego >= lo) & (ego < hi), axis=1)
    return cloud.transformed(ego).select(keep)


def make_training_pair(cloud: LabeledPointCloud, meta_fine: GridMeta,
                       meta_coarse: GridMeta,
                       num_classes: Optional[int] = None) -> GridHierarchy:
    """Voxelize a chunk at the fine scale and derive the coarse level.

    ``meta_coarse`` must share the fine origin and use exactly four times the
    fine voxel size; the coarse grid is produced by ``coarsen`` so the
    hierarchy containment holds by construction.
    """
    ratio = meta_coarse.voxel_size / meta_fine.voxel_size
    if abs(ratio - 4.0) > 1e-9:
        raise ValueError(f"coarse voxel size must be 4x fine, got ratio {ratio}")
    if not np.allclose(meta_coarse.origin, meta_fine.origin):
        raise ValueError("grid levels must share an origin")
    fine = voxelize(cloud, meta_fine, num_classes)
    return GridHierarchy(coarsen(fine, 4), fine)


def voxel_visibility(grid: SparseVoxelGrid, cams: Sequence[Camera]):
    """Per-voxel visibility from a camera set plus the occluded fraction.

    A voxel is visible iff its centroid projects inside some image and the
    first-hit ray march through that pixel reaches the voxel first
    (self-occlusion aware).  Returns ((n,) bool aligned with grid.coords,
    occluded fraction in [0, 1]).
    """
    n = len(grid)
    visible = np.zeros(n, dtype=bool)
    if n == 0:
        return visible, 0.0
    centroids = grid.centroids()
    for cam in cams:
        uv, z = cam.project(centroids)
        in_frame = ((z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width)
                    & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height))
        for row in np.flatnonzero(in_frame & ~visible):
            col_px = int(np.floor(uv[row, 0]))
            row_px = int(np.floor(uv[row, 1]))
            ray = cam.pixel_ray_world(row_px, col_px)
            hit = raymarch_first_hit(grid, cam.origin, ray)
            if hit is not None and grid.row_of(hit[0]) == row:
                visible[row] = True
    fraction = float((~visible).sum()) / n
    return visible, fraction
