"""Per-voxel Gaussian parameters and their activation decoding.

Each occupied voxel carries M raw records of 14 numbers laid out as
(mu_bar[3], alpha_bar, s_bar[3], q_bar[4], rgb[3]).  Decoding maps them to
render-ready Gaussians:

    mu    = r * tanh(mu_bar) + centroid        (confined to +- r of the voxel)
    alpha = sigmoid(alpha_bar)
    s     = exp(s_bar)
    R     = quat2rot(q_bar / |q_bar|)
    Sigma = R diag(s)^2 R^T

``r`` defaults to three times the voxel size.  Colors are stored directly in
[0, 1]; only view-independent color is supported.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .grid import SparseVoxelGrid

RAW_WIDTH = 14
RAW_CHANNEL = "raw_gaussians"
DEFAULT_RANGE_FACTOR = 3.0

# 0th-order spherical-harmonics basis constant used by splat PLY tooling.
SH_C0 = 0.28209479177387814

_QUAT_EPS = 1e-8


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat2rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from scalar-first quaternions ((..., 4) -> (..., 3, 3)).

    Quaternions are normalized internally; a zero quaternion is degenerate.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm < _QUAT_EPS):
        raise ValueError("degenerate quaternion (norm below 1e-8)")
    w, x, y, z = np.moveaxis(q / norm[..., None], -1, 0)
    rot = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return rot.reshape(q.shape[:-1] + (3, 3))


@dataclass
class Gaussian:
    """A single render-ready Gaussian."""

    mean: np.ndarray   # (3,) meters
    alpha: float       # opacity in [0, 1]
    cov: np.ndarray    # (3, 3) symmetric positive definite, meters^2
    color: np.ndarray  # (3,) RGB in [0, 1]


class GaussianCloud:
    """Struct-of-arrays Gaussian set keeping the covariance factors.

    The rotation/scale factorization is retained (rather than only the
    assembled covariance) because the renderer's backward pass differentiates
    through it.
    """

    def __init__(self, means, alphas, scales, quats, colors):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.alphas = np.ascontiguousarray(alphas, dtype=np.float64).reshape(n)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        quats = np.ascontiguousarray(quats, dtype=np.float64).reshape(n, 4)
        if n and np.any(np.linalg.norm(quats, axis=1) < _QUAT_EPS):
            raise ValueError("degenerate quaternion (norm below 1e-8)")
        self.quats = quats  # normalized at use, so gradients see the raw norm
        self.colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(n, 3)
        self._covs: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.means)

    @staticmethod
    def empty() -> "GaussianCloud":
        z = np.zeros((0, 3))
        return GaussianCloud(z, np.zeros(0), z, np.zeros((0, 4)), z)

    def covariances(self) -> np.ndarray:
        """(N, 3, 3) covariances R diag(s)^2 R^T (cached)."""
        if self._covs is None:
            rot = quat2rot(self.quats)
            m = rot * self.scales[:, None, :]
            self._covs = m @ np.swapaxes(m, 1, 2)
        return self._covs

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.means[i].copy(), float(self.alphas[i]),
                        self.covariances()[i].copy(), self.colors[i].copy())


def _split_raw(raw: np.ndarray):
    return (raw[..., 0:3], raw[..., 3], raw[..., 4:7], raw[..., 7:11],
            raw[..., 11:14])


def decode_gaussian(raw: np.ndarray, center: np.ndarray, r: float) -> Gaussian:
    """Decode a single 14-vector anchored at a voxel centroid."""
    if r <= 0:
        raise ValueError("range r must be > 0")
    raw = np.asarray(raw, dtype=np.float64).reshape(RAW_WIDTH)
    mu_bar, a_bar, s_bar, q_bar, rgb = _split_raw(raw)
    mean = r * np.tanh(mu_bar) + np.asarray(center, dtype=np.float64)
    rot = quat2rot(q_bar)
    scale = np.exp(s_bar)
    m = rot * scale[None, :]
    return Gaussian(mean, float(sigmoid(a_bar)), m @ m.T, rgb.copy())


@dataclass
class VoxSplatScene:
    """A fine grid plus its raw and decoded per-voxel Gaussians."""

    grid: SparseVoxelGrid
    raw: np.ndarray             # (n_voxels, M, 14)
    gaussians: GaussianCloud    # len == n_voxels * M, in sorted-voxel order
    range_factor: float         # r / voxel_size

    @property
    def gaussians_per_voxel(self) -> int:
        return self.raw.shape[1] if self.raw.ndim == 3 else 0

    @property
    def confinement_radius(self) -> float:
        return self.range_factor * self.grid.meta.voxel_size

    def voxel_of_gaussian(self, gaussian_index: int) -> int:
        """Row in ``grid.coords`` that anchors a decoded Gaussian."""
        return gaussian_index // max(self.gaussians_per_voxel, 1)


def decode_scene(raw: np.ndarray, grid: SparseVoxelGrid,
                 r: Optional[float] = None) -> VoxSplatScene:
    """Decode M Gaussians per occupied voxel in sorted-coordinate order.

    ``raw`` is (n_voxels, M, 14) aligned with ``grid.coords``; ``r`` defaults
    to ``DEFAULT_RANGE_FACTOR`` times the voxel size.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 2:
        raw = raw[:, None, :]
    if raw.ndim != 3 or raw.shape[2] != RAW_WIDTH:
        raise ValueError(f"raw parameters must be (n, M, {RAW_WIDTH})")
    if raw.shape[0] != len(grid):
        raise ValueError(f"raw covers {raw.shape[0]} voxels, grid has {len(grid)}")
    if r is None:
        r = DEFAULT_RANGE_FACTOR * grid.meta.voxel_size
    if r <= 0:
        raise ValueError("range r must be > 0")

    n, m = raw.shape[0], raw.shape[1]
    flat = raw.reshape(n * m, RAW_WIDTH)
    mu_bar, a_bar, s_bar, q_bar, rgb = _split_raw(flat)
    centers = np.repeat(grid.centroids(), m, axis=0)
    cloud = GaussianCloud(
        means=r * np.tanh(mu_bar) + centers,
        alphas=sigmoid(a_bar),
        scales=np.exp(s_bar),
        quats=q_bar,
        colors=rgb,
    ) if n else GaussianCloud.empty()
    return VoxSplatScene(grid, raw, cloud, r / grid.meta.voxel_size)


def scene_from_grid_channel(grid: SparseVoxelGrid, channel: str = RAW_CHANNEL,
                            r: Optional[float] = None) -> VoxSplatScene:
    """Decode a scene whose raw parameters live in a grid attribute channel."""
    if channel not in grid.channels:
        raise ValueError(f"grid has no {channel!r} channel")
    data = grid.channels[channel]
    if data.shape[1] % RAW_WIDTH:
        raise ValueError(f"channel width {data.shape[1]} is not a multiple "
                         f"of {RAW_WIDTH}")
    m = data.shape[1] // RAW_WIDTH
    return decode_scene(data.reshape(len(grid), m, RAW_WIDTH), grid, r)


# ---------------------------------------------------------------------------
# Splat PLY interchange (binary little-endian, float32 properties)
# ---------------------------------------------------------------------------

_PLY_FIELDS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
_ALPHA_CLIP = 1e-9  # keeps the opacity logit finite for alpha in {0, 1}


def export_ply(scene: Union[VoxSplatScene, GaussianCloud]) -> bytes:
    """Conventional splat PLY: 0th-order SH color, logit opacity, log scales."""
    cloud = scene.gaussians if isinstance(scene, VoxSplatScene) else scene
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {f}" for f in _PLY_FIELDS]
    header.append("end_header")

    rec = np.zeros((n, len(_PLY_FIELDS)), dtype="<f4")
    rec[:, 0:3] = cloud.means
    rec[:, 6:9] = (cloud.colors - 0.5) / SH_C0
    rec[:, 9] = logit(np.clip(cloud.alphas, _ALPHA_CLIP, 1.0 - _ALPHA_CLIP))
    rec[:, 10:13] = np.log(cloud.scales)
    rec[:, 13:17] = cloud.quats / np.linalg.norm(cloud.quats, axis=1,
                                                 keepdims=True)
    return ("\n".join(header) + "\n").encode("ascii") + rec.tobytes()


class PlyFormatError(ValueError):
    pass


def import_ply(blob: bytes) -> GaussianCloud:
    """Parse a splat PLY back into decoded Gaussians."""
    stream = io.BytesIO(blob)
    line = stream.readline().strip()
    if line != b"ply":
        raise PlyFormatError("not a PLY file (missing 'ply' magic)")
    fmt = None
    count = None
    props: list[str] = []
    while True:
        line = stream.readline()
        if not line:
            raise PlyFormatError("unterminated PLY header")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            if tokens[1] != "vertex":
                raise PlyFormatError(f"unsupported element {tokens[1]!r}")
            count = int(tokens[2])
        elif tokens[0] == "property":
            if tokens[1] != "float":
                raise PlyFormatError(f"unsupported property type {tokens[1]!r}")
            props.append(tokens[2])
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported PLY format {fmt!r}")
    if count is None:
        raise PlyFormatError("missing vertex element")
    for needed in _PLY_FIELDS:
        if needed in ("nx", "ny", "nz"):
            continue
        if needed not in props:
            raise PlyFormatError(f"missing required property {needed!r}")

    payload = stream.read()
    expected = count * len(props) * 4
    if len(payload) < expected:
        raise PlyFormatError(f"truncated payload: {len(payload)} bytes, "
                             f"expected {expected}")
    rec = np.frombuffer(payload[:expected], dtype="<f4").reshape(count, len(props))
    col = {name: rec[:, i].astype(np.float64) for i, name in enumerate(props)}

    means = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = np.stack([col[f"f_dc_{i}"] for i in range(3)], axis=1) * SH_C0 + 0.5
    alphas = sigmoid(col["opacity"])
    scales = np.exp(np.stack([col[f"scale_{i}"] for i in range(3)], axis=1))
    quats = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    return GaussianCloud(means, alphas, scales, quats, colors)
