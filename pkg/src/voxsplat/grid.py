"""Sparse voxel grids: occupancy indexing, attributes, hierarchy, serialization.

A grid is an immutable set of occupied integer voxel coordinates at a fixed
voxel size, plus named fixed-width attribute channels (one row per voxel).
Coordinates are stored sorted lexicographically so that every derived product
(serialization, decoded Gaussian order, renders) is canonical.

Voxel ``(i, j, k)`` covers the half-open cube
``[origin + (i,j,k)*s, origin + (i,j,k+1)*s)``;  the voxel of a point is
``floor((p - origin) / s)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .points import LabeledPointCloud

SEMANTIC_CHANNEL = "semantic_logits"

MAGIC = b"SVG2"
FORMAT_VERSION = 1
_MAX_CHANNEL_NAME = 255
_MAX_CHANNEL_WIDTH = 65536


class GridFormatError(ValueError):
    """Raised on malformed grid bytes; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class VoxelCoord:
    i: int
    j: int
    k: int

    def as_array(self) -> np.ndarray:
        return np.array([self.i, self.j, self.k], dtype=np.int64)


@dataclass
class GridMeta:
    """Placement of a voxel grid in world space.

    ``origin`` is the minimum corner of voxel (0, 0, 0); ``extent``, when set,
    documents the grid size in voxels (valid coordinates in [0, extent)).
    """

    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    voxel_size: float = 0.1
    extent: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(self.voxel_size)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be > 0")
        if self.extent is not None:
            self.extent = tuple(int(e) for e in self.extent)
            if any(e < 1 for e in self.extent):
                raise ValueError("extent entries must be >= 1")

    def coarsened(self, factor: int) -> "GridMeta":
        extent = None
        if self.extent is not None:
            extent = tuple(-(-e // factor) for e in self.extent)
        return GridMeta(self.origin.copy(), self.voxel_size * factor, extent)

    def point_to_voxel(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel coordinates of world points (half-open convention)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.floor((points - self.origin) / self.voxel_size).astype(np.int64)

    def voxel_centroids(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        return self.origin + (coords + 0.5) * self.voxel_size


class SparseVoxelGrid:
    """Immutable sparse grid: sorted coordinates plus per-voxel channels."""

    def __init__(self, meta: GridMeta, coords: np.ndarray,
                 channels: Optional[dict[str, np.ndarray]] = None):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        channels = {} if channels is None else dict(channels)

        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        coords = coords[order]
        if len(coords) > 1 and np.any(np.all(np.diff(coords, axis=0) == 0, axis=1)):
            raise ValueError("duplicate voxel coordinates")

        self.meta = meta
        self.coords = coords
        self.channels: dict[str, np.ndarray] = {}
        for name, data in channels.items():
            data = np.asarray(data, dtype=np.float64)
            if data.ndim == 1:
                data = data[:, None]
            if data.shape[0] != len(coords):
                raise ValueError(f"channel {name!r} has {data.shape[0]} rows, "
                                 f"expected {len(coords)}")
            self.channels[name] = np.ascontiguousarray(data[order])
        self._index = {tuple(c): i for i, c in enumerate(coords.tolist())}

    def __len__(self) -> int:
        return len(self.coords)

    def __contains__(self, coord) -> bool:
        return self._coord_key(coord) in self._index

    @staticmethod
    def _coord_key(coord) -> tuple:
        if isinstance(coord, VoxelCoord):
            return (coord.i, coord.j, coord.k)
        return tuple(int(c) for c in coord)

    def row_of(self, coord) -> Optional[int]:
        return self._index.get(self._coord_key(coord))

    def query(self, coord) -> Optional[dict[str, np.ndarray]]:
        """Attribute record of a voxel, or None when unoccupied."""
        row = self.row_of(coord)
        if row is None:
            return None
        return {name: data[row].copy() for name, data in self.channels.items()}

    def centroids(self) -> np.ndarray:
        return self.meta.voxel_centroids(self.coords)

    def with_channel(self, name: str, data: np.ndarray) -> "SparseVoxelGrid":
        """New grid with one channel added/replaced (rows follow sorted coords)."""
        channels = dict(self.channels)
        channels[name] = data
        return SparseVoxelGrid(self.meta, self.coords, channels)

    def bounds(self) -> Optional[tuple[np.ndarray, np.ndarray]]:
        """(min_ijk, max_ijk) over occupied voxels, or None when empty."""
        if len(self) == 0:
            return None
        return self.coords.min(axis=0), self.coords.max(axis=0)

    # -- equality used by round-trip tests ---------------------------------

    def equals(self, other: "SparseVoxelGrid") -> bool:
        if self.meta.voxel_size != other.meta.voxel_size:
            return False
        if not np.array_equal(self.meta.origin, other.meta.origin):
            return False
        if not np.array_equal(self.coords, other.coords):
            return False
        if set(self.channels) != set(other.channels):
            return False
        return all(np.array_equal(self.channels[n], other.channels[n])
                   for n in self.channels)


def _majority_onehot(labels: np.ndarray, groups: np.ndarray, n_groups: int,
                     num_classes: int) -> np.ndarray:
    """Per-group one-hot of the majority label; ties go to the smallest id."""
    counts = np.zeros((n_groups, num_classes), dtype=np.int64)
    np.add.at(counts, (groups, labels), 1)
    winners = counts.argmax(axis=1)  # argmax takes the first (smallest) maximum
    onehot = np.zeros((n_groups, num_classes), dtype=np.float64)
    onehot[np.arange(n_groups), winners] = 1.0
    return onehot


def voxelize(points: LabeledPointCloud, meta: GridMeta,
             num_classes: Optional[int] = None) -> SparseVoxelGrid:
    """Bucket points into voxels; occupied iff a voxel holds >= 1 point.

    When the cloud carries labels, a ``semantic_logits`` channel is added with
    the one-hot majority label per voxel (ties broken by smallest label id).
    Unlabeled points (-1) do not vote; a voxel whose points are all unlabeled
    gets an all-zero row.
    """
    if len(points) == 0:
        return SparseVoxelGrid(meta, np.zeros((0, 3), dtype=np.int64))

    ijk = meta.point_to_voxel(points.positions)
    coords, inverse = np.unique(ijk, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    channels = {}
    if points.labels is not None:
        labeled = points.labels >= 0
        if num_classes is None:
            num_classes = int(points.labels.max()) + 1 if labeled.any() else 1
        logits = np.zeros((len(coords), num_classes), dtype=np.float64)
        if labeled.any():
            lab = points.labels[labeled].astype(np.int64)
            if lab.max() >= num_classes:
                raise ValueError("label id exceeds num_classes")
            grp = inverse[labeled]
            voted = np.unique(grp)
            maj = _majority_onehot(lab, grp, len(coords), num_classes)
            logits[voted] = maj[voted]
        channels[SEMANTIC_CHANNEL] = logits

    return SparseVoxelGrid(meta, coords, channels)


def coarsen(fine: SparseVoxelGrid, factor: int) -> SparseVoxelGrid:
    """Parent grid at ``factor``-times the voxel size.

    A coarse voxel is occupied iff any child is.  Semantic logits are combined
    by majority (argmax of the child sum, ties to the smallest id); any other
    channel is mean-pooled over children.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    meta = fine.meta.coarsened(factor)
    if factor == 1:
        return SparseVoxelGrid(meta, fine.coords, fine.channels)

    parent = np.floor_divide(fine.coords, factor)
    coords, inverse = np.unique(parent, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(coords)).astype(np.float64)

    channels = {}
    for name, data in fine.channels.items():
        pooled = np.zeros((len(coords), data.shape[1]), dtype=np.float64)
        np.add.at(pooled, inverse, data)
        if name == SEMANTIC_CHANNEL:
            winners = pooled.argmax(axis=1)
            onehot = np.zeros_like(pooled)
            voted = pooled.sum(axis=1) > 0
            onehot[np.arange(len(coords))[voted], winners[voted]] = 1.0
            channels[name] = onehot
        else:
            channels[name] = pooled / counts[:, None]
    return SparseVoxelGrid(meta, coords, channels)


@dataclass
class GridHierarchy:
    """Coarse/fine pair where every fine voxel has an occupied coarse parent."""

    coarse: SparseVoxelGrid
    fine: SparseVoxelGrid

    def __post_init__(self):
        ratio = self.coarse.meta.voxel_size / self.fine.meta.voxel_size
        factor = round(ratio)
        if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
            raise ValueError("coarse voxel size must be an integer multiple "
                             "of the fine voxel size")
        self.factor = factor
        if not np.allclose(self.coarse.meta.origin, self.fine.meta.origin):
            raise ValueError("hierarchy levels must share an origin")
        parents = np.floor_divide(self.fine.coords, factor)
        for p in np.unique(parents, axis=0):
            if tuple(p) not in self.coarse:
                raise ValueError(f"fine voxels under coarse {tuple(p)} have no "
                                 "occupied parent")


def raymarch_first_hit(grid: SparseVoxelGrid, ray_origin: np.ndarray,
                       ray_dir: np.ndarray,
                       max_t: float = np.inf) -> Optional[tuple[VoxelCoord, float]]:
    """First occupied voxel along a ray, with its parametric entry distance.

    Integer DDA traversal limited to the bounding box of occupied voxels.
    Returns None on a miss.  ``ray_dir`` must be unit length (1e-6 tolerance),
    so the distance is in meters.
    """
    origin = np.asarray(ray_origin, dtype=np.float64).reshape(3)
    d = np.asarray(ray_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be a unit vector")
    b = grid.bounds()
    if b is None:
        return None
    lo_v, hi_v = b
    s = grid.meta.voxel_size
    box_lo = grid.meta.origin + lo_v * s
    box_hi = grid.meta.origin + (hi_v + 1) * s

    # Slab test against the occupied bounding box.
    t0, t1 = 0.0, max_t
    for a in range(3):
        if d[a] == 0.0:
            if origin[a] < box_lo[a] or origin[a] >= box_hi[a]:
                return None
            continue
        ta = (box_lo[a] - origin[a]) / d[a]
        tb = (box_hi[a] - origin[a]) / d[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return None

    entry = origin + t0 * d
    voxel = np.floor((entry - grid.meta.origin) / s).astype(np.int64)
    np.clip(voxel, lo_v, hi_v, out=voxel)

    step = np.where(d > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0, s / np.abs(d), np.inf)
        next_boundary = grid.meta.origin + (voxel + (d > 0)) * s
        t_max = np.where(d != 0, (next_boundary - origin) / d, np.inf)

    t_enter = t0
    while t_enter <= t1:
        if tuple(voxel) in grid._index:
            return VoxelCoord(*(int(c) for c in voxel)), float(t_enter)
        axis = int(np.argmin(t_max))
        t_enter = t_max[axis]
        voxel[axis] += step[axis]
        if voxel[axis] < lo_v[axis] or voxel[axis] > hi_v[axis]:
            return None
        t_max[axis] += t_delta[axis]
    return None


# ---------------------------------------------------------------------------
# Binary serialization (.svg2)
#
# Little-endian layout:
#   magic "SVG2" | u32 version | f64 voxel_size | 3 x f64 origin
#   | u32 channel count | per channel: u16 name length, name bytes, u32 width
#   | u64 voxel count | count x 3 i32 coords (sorted) | per channel:
#   count x width f64
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise GridFormatError(f"truncated payload while reading {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))


def serialize(grid: SparseVoxelGrid) -> bytes:
    coords32 = grid.coords.astype(np.int32)
    if not np.array_equal(coords32, grid.coords):
        raise ValueError("voxel coordinates exceed int32 range")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<d", grid.meta.voxel_size),
             struct.pack("<3d", *grid.meta.origin),
             struct.pack("<I", len(grid.channels))]
    for name in sorted(grid.channels):
        raw = name.encode("utf-8")
        if not 0 < len(raw) <= _MAX_CHANNEL_NAME:
            raise ValueError(f"channel name {name!r} not serializable")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", grid.channels[name].shape[1]))
    parts.append(struct.pack("<Q", len(grid)))
    parts.append(np.ascontiguousarray(coords32).tobytes())
    for name in sorted(grid.channels):
        parts.append(np.ascontiguousarray(grid.channels[name],
                                          dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize(blob: bytes) -> SparseVoxelGrid:
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise GridFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("I", "version")
    if version != FORMAT_VERSION:
        raise GridFormatError(f"unsupported format version {version}", 4)
    (voxel_size,) = r.unpack("d", "voxel_size")
    if not np.isfinite(voxel_size) or voxel_size <= 0:
        raise GridFormatError(f"invalid voxel_size {voxel_size}", 8)
    origin = np.array(r.unpack("3d", "origin"))

    (n_channels,) = r.unpack("I", "channel count")
    table = []
    for _ in range(n_channels):
        at = r.pos
        (name_len,) = r.unpack("H", "channel name length")
        if not 0 < name_len <= _MAX_CHANNEL_NAME:
            raise GridFormatError(f"invalid channel name length {name_len}", at)
        raw = r.take(name_len, "channel name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise GridFormatError("channel name is not valid UTF-8", at + 2)
        (width,) = r.unpack("I", "channel width")
        if not 0 < width <= _MAX_CHANNEL_WIDTH:
            raise GridFormatError(f"invalid width {width} for channel {name!r}", at)
        table.append((name, width))

    (count,) = r.unpack("Q", "voxel count")
    at = r.pos
    coords = np.frombuffer(r.take(count * 12, "coordinates"),
                           dtype="<i4").reshape(count, 3).astype(np.int64)
    channels = {}
    for name, width in table:
        at = r.pos
        data = np.frombuffer(r.take(count * width * 8, f"channel {name!r}"),
                             dtype="<f8")
        channels[name] = data.reshape(count, width).copy()
    if r.pos != len(blob):
        raise GridFormatError(f"{len(blob) - r.pos} trailing bytes", r.pos)
    return SparseVoxelGrid(GridMeta(origin, voxel_size), coords, channels)
