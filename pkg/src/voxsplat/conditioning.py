"""Depth-binned unprojection of image features into a voxel grid.

Per-pixel features are distributed along the pixel ray according to a
softmax depth distribution: the feature lands at the midpoint depth of each
bin, weighted by that bin's probability, and contributions from all
(image, pixel, bin) triples are summed per voxel.  Bin widths increase
linearly from near to far.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import Camera
from .grid import GridMeta, SparseVoxelGrid

DEFAULT_EXTENT = (256, 256, 256)
_PROB_TOL = 1e-5


@dataclass
class DepthBins:
    """Monotone partition of [z_near, z_far) into D depth bins."""

    z_near: float
    z_far: float
    edges: np.ndarray  # (D + 1,) meters, edges[0] = z_near, edges[-1] = z_far

    @property
    def count(self) -> int:
        return len(self.edges) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def lid_bin_edges(z_near: float, z_far: float, count: int) -> DepthBins:
    """Linearly-increasing-depth bins: bin d (1-based) has width d * delta.

    delta solves sum_{d=1..D} d*delta = z_far - z_near, i.e.
    delta = 2 (z_far - z_near) / (D (D + 1)).
    """
    if not 0 <= z_near < z_far:
        raise ValueError(f"need 0 <= z_near < z_far, got ({z_near}, {z_far})")
    if count < 1:
        raise ValueError(f"need at least one bin, got {count}")
    delta = 2.0 * (z_far - z_near) / (count * (count + 1))
    edges = z_near + np.cumsum(np.concatenate([[0.0], np.arange(1, count + 1) * delta]))
    edges[-1] = z_far  # pin the far plane exactly against cumsum drift
    return DepthBins(float(z_near), float(z_far), edges)


@dataclass
class PixelFeatureMap:
    """Per-pixel feature vectors plus a normalized depth distribution."""

    features: np.ndarray     # (H, W, C)
    depth_probs: np.ndarray  # (H, W, D), rows sum to 1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.depth_probs = np.asarray(self.depth_probs, dtype=np.float64)
        if self.features.ndim != 3 or self.depth_probs.ndim != 3:
            raise ValueError("features and depth_probs must be (H, W, *)")
        if self.features.shape[:2] != self.depth_probs.shape[:2]:
            raise ValueError("features and depth_probs disagree on image size")
        if not (np.all(np.isfinite(self.features))
                and np.all(np.isfinite(self.depth_probs))):
            raise ValueError("feature maps must be finite")
        sums = self.depth_probs.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > _PROB_TOL):
            raise ValueError("depth distributions must be softmax-normalized "
                             f"(max deviation {np.abs(sums - 1.0).max():.2e})")


@dataclass
class ConditionGrid:
    """Dense per-voxel feature accumulator over a capped extent."""

    meta: GridMeta
    features: np.ndarray        # (nx, ny, nz, C)
    sample_counts: np.ndarray   # (nx, ny, nz) number of contributing samples
    dropped_samples: int = 0    # (image, pixel, bin) samples outside the extent
    dropped_mass: float = 0.0   # total probability mass of dropped samples

    def total_feature(self) -> np.ndarray:
        """Element-wise sum of all voxel features (conservation diagnostics)."""
        return self.features.sum(axis=(0, 1, 2))

    def to_sparse_grid(self, channel: str = "feature") -> SparseVoxelGrid:
        """Sparse grid over voxels that received at least one sample."""
        occupied = np.argwhere(self.sample_counts > 0)
        data = self.features[occupied[:, 0], occupied[:, 1], occupied[:, 2]]
        return SparseVoxelGrid(self.meta, occupied, {channel: data})


def unproject_features(images: list[PixelFeatureMap], cameras: list[Camera],
                       bins: DepthBins, meta: GridMeta,
                       extent: Optional[tuple[int, int, int]] = None) -> ConditionGrid:
    """Scatter depth-weighted pixel features into voxels and sum.

    For image i, pixel j and bin d, the world point at the bin's midpoint
    depth along pixel j's ray receives probs[d] * features[j].  Samples whose
    voxel falls outside the grid extent are dropped and tallied.
    """
    if len(images) != len(cameras):
        raise ValueError("need one camera per feature map")
    if extent is None:
        extent = meta.extent if meta.extent is not None else DEFAULT_EXTENT
    meta = GridMeta(meta.origin, meta.voxel_size, extent)
    nx, ny, nz = extent
    c_dim = images[0].features.shape[2] if images else 0

    features = np.zeros((nx, ny, nz, c_dim), dtype=np.float64)
    counts = np.zeros((nx, ny, nz), dtype=np.int64)
    dropped = 0
    dropped_mass = 0.0
    mids = bins.midpoints

    for fmap, cam in zip(images, cameras):
        h, w, d_dim = fmap.depth_probs.shape
        if (h, w) != (cam.height, cam.width):
            raise ValueError("feature map and camera disagree on image size")
        if fmap.features.shape[2] != c_dim:
            raise ValueError("feature channel count differs between images")
        if d_dim != bins.count:
            raise ValueError(f"depth distribution has {d_dim} bins, "
                             f"expected {bins.count}")
        for d in range(d_dim):
            pts = cam.points_at_depth(mids[d]).reshape(-1, 3)
            ijk = meta.point_to_voxel(pts)
            weights = fmap.depth_probs[:, :, d].reshape(-1)
            inside = np.all((ijk >= 0) & (ijk < np.array(extent)), axis=1)
            out = ~inside
            dropped += int(out.sum())
            dropped_mass += float(weights[out].sum())
            idx = ijk[inside]
            contrib = weights[inside, None] * fmap.features.reshape(-1, c_dim)[inside]
            np.add.at(features, (idx[:, 0], idx[:, 1], idx[:, 2]), contrib)
            np.add.at(counts, (idx[:, 0], idx[:, 1], idx[:, 2]), 1)

    return ConditionGrid(meta, features, counts, dropped, dropped_mass)


def depth_supervision_target(gt_depth: np.ndarray, bins: DepthBins):
    """One-hot depth-bin target per pixel plus an ignore mask.

    A pixel with depth in [edges[d], edges[d+1]) is one-hot at bin d; pixels
    outside [z_near, z_far) are flagged ignore with an all-zero row.
    """
    depth = np.asarray(gt_depth, dtype=np.float64)
    idx = np.searchsorted(bins.edges, depth, side="right") - 1
    valid = (depth >= bins.z_near) & (depth < bins.z_far)
    idx = np.clip(idx, 0, bins.count - 1)
    onehot = np.zeros(depth.shape + (bins.count,), dtype=np.float64)
    flat = onehot.reshape(-1, bins.count)
    flat[np.arange(flat.shape[0])[valid.reshape(-1)],
         idx.reshape(-1)[valid.reshape(-1)]] = 1.0
    return onehot, ~valid
