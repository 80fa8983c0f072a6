"""Labeled point clouds shared by the voxelization and data pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

UNLABELED = -1


@dataclass
class LabeledPointCloud:
    """Points with optional per-point semantic labels, timestamps and frame ids.

    All side arrays are parallel to ``positions``.  Labels use ``UNLABELED``
    (-1) for points that have not been annotated yet.
    """

    positions: np.ndarray                      # (N, 3) float64, meters
    labels: Optional[np.ndarray] = None        # (N,) int32, -1 = unlabeled
    timestamps: Optional[np.ndarray] = None    # (N,) float64, seconds
    frame_ids: Optional[np.ndarray] = None     # (N,) int32

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        n = len(self.positions)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
            if self.labels.shape != (n,):
                raise ValueError("labels must be parallel to positions")
            if self.labels.size and self.labels.min() < UNLABELED:
                raise ValueError("labels must be >= -1")
        if self.timestamps is not None:
            self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.float64)
            if self.timestamps.shape != (n,):
                raise ValueError("timestamps must be parallel to positions")
        if self.frame_ids is not None:
            self.frame_ids = np.ascontiguousarray(self.frame_ids, dtype=np.int32)
            if self.frame_ids.shape != (n,):
                raise ValueError("frame_ids must be parallel to positions")

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty() -> "LabeledPointCloud":
        return LabeledPointCloud(np.zeros((0, 3)))

    def select(self, mask: np.ndarray) -> "LabeledPointCloud":
        """New cloud restricted to ``mask`` (bool array or index array)."""
        return LabeledPointCloud(
            self.positions[mask],
            None if self.labels is None else self.labels[mask],
            None if self.timestamps is None else self.timestamps[mask],
            None if self.frame_ids is None else self.frame_ids[mask],
        )

    def transformed(self, positions: np.ndarray) -> "LabeledPointCloud":
        """Same side data over new positions (rigid motion of the same points)."""
        return LabeledPointCloud(positions, self.labels, self.timestamps, self.frame_ids)


def concatenate(clouds: list[LabeledPointCloud]) -> LabeledPointCloud:
    """Concatenate clouds; a side channel is kept only if every input has it."""
    if not clouds:
        return LabeledPointCloud.empty()
    positions = np.concatenate([c.positions for c in clouds])

    def merge(attr):
        parts = [getattr(c, attr) for c in clouds]
        if any(p is None for p in parts):
            return None
        return np.concatenate(parts)

    return LabeledPointCloud(positions, merge("labels"), merge("timestamps"),
                             merge("frame_ids"))
