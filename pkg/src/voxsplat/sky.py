"""Equirectangular sky panorama built from masked views, sampled for novel views.

Only the view direction determines sky appearance, so every camera is used
with its translation zeroed; panoramas and background samples are therefore
bit-identical under any change of camera position.

Convention (world up is +z): azimuth phi = atan2(y, x) in (-pi, pi] maps to
the horizontal axis, elevation psi = asin(z) in [-pi/2, pi/2] maps to the
vertical axis with the zenith at row 0:

    u = (phi + pi) / (2 pi) * W_p        v = (pi/2 - psi) / pi * H_p
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .camera import Camera

DEFAULT_SIZE = (1024, 2048)  # (H_p, W_p) used at inference time
CONVENTION = "equirect-az-u-elev-v-zup"


@dataclass
class SkyPanorama:
    data: np.ndarray                     # (H_p, W_p, C_p)
    coverage: Optional[np.ndarray] = None  # (H_p, W_p) bool, None = all covered
    uncovered_value: float = 0.5

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or min(self.data.shape[:2]) < 1:
            raise ValueError("panorama data must be (H_p, W_p, C_p)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("panorama data must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def dir_to_pixel(d: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Continuous (u, v) panorama coordinates of unit directions (..., 3)."""
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm < 1e-12):
        raise ValueError("zero direction vector")
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("directions must be unit length")
    h_p, w_p = size
    u = (np.arctan2(d[..., 1], d[..., 0]) + np.pi) / (2.0 * np.pi) * w_p
    v = (np.pi / 2.0 - np.arcsin(np.clip(d[..., 2], -1.0, 1.0))) / np.pi * h_p
    return np.stack([u, v], axis=-1)


def pixel_to_dir(uv: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Unit directions of continuous (u, v) panorama coordinates."""
    uv = np.asarray(uv, dtype=np.float64)
    h_p, w_p = size
    phi = uv[..., 0] / w_p * 2.0 * np.pi - np.pi
    psi = np.pi / 2.0 - uv[..., 1] / h_p * np.pi
    cos_psi = np.cos(psi)
    return np.stack([cos_psi * np.cos(phi), cos_psi * np.sin(phi),
                     np.sin(psi)], axis=-1)


def _panorama_directions(size: tuple[int, int]) -> np.ndarray:
    """(H_p, W_p, 3) unit direction of each panorama pixel center."""
    h_p, w_p = size
    u, v = np.meshgrid(np.arange(w_p) + 0.5, np.arange(h_p) + 0.5)
    return pixel_to_dir(np.stack([u, v], axis=-1), size)


def build_panorama(views: Sequence[tuple[np.ndarray, np.ndarray, Camera]],
                   size: tuple[int, int] = DEFAULT_SIZE,
                   uncovered_value: float = 0.5) -> SkyPanorama:
    """Average masked view colors into the panorama.

    Each view is (image (H, W, C), sky_mask (H, W) bool, camera).  A panorama
    pixel receives a view's nearest image pixel when its direction, projected
    with the camera translation zeroed, lands in-frame on a masked-sky pixel.
    Overlapping views are averaged; uncovered pixels are set to
    ``uncovered_value`` and flagged in the coverage mask.
    """
    if not views:
        raise ValueError("build_panorama needs at least one view")
    dirs = _panorama_directions(size)
    channels = np.asarray(views[0][0]).shape[2]
    accum = np.zeros(size + (channels,), dtype=np.float64)
    count = np.zeros(size, dtype=np.int64)

    for image, mask, cam in views:
        image = np.asarray(image, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if image.shape[:2] != (cam.height, cam.width) or mask.shape != image.shape[:2]:
            raise ValueError("image/mask dimensions must match the camera")
        d_cam = dirs @ cam.rotation  # rotation only: translation is zeroed
        z = d_cam[..., 2]
        front = z > 0
        zs = np.where(front, z, 1.0)
        u = cam.fx * d_cam[..., 0] / zs + cam.cx
        v = cam.fy * d_cam[..., 1] / zs + cam.cy
        ix = np.floor(u).astype(np.int64)
        iy = np.floor(v).astype(np.int64)
        hit = front & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
        ix_c = np.clip(ix, 0, cam.width - 1)
        iy_c = np.clip(iy, 0, cam.height - 1)
        hit &= mask[iy_c, ix_c]
        accum[hit] += image[iy_c[hit], ix_c[hit]]
        count[hit] += 1

    covered = count > 0
    data = np.full(size + (channels,), float(uncovered_value))
    data[covered] = accum[covered] / count[covered][:, None]
    return SkyPanorama(data, covered, uncovered_value)


def sample_panorama(pano: SkyPanorama, dirs: np.ndarray) -> np.ndarray:
    """Bilinear panorama lookup of unit directions (..., 3) -> (..., C_p).

    Horizontal lookups wrap across the azimuth seam; vertical lookups clamp
    at the poles.
    """
    size = (pano.height, pano.width)
    uv = dir_to_pixel(dirs, size)
    gx = uv[..., 0] - 0.5  # pixel-center grid coordinates
    gy = np.clip(uv[..., 1] - 0.5, 0.0, pano.height - 1.0)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    x0m = np.mod(x0, pano.width)
    x1m = np.mod(x0 + 1, pano.width)
    y1 = np.minimum(y0 + 1, pano.height - 1)
    d = pano.data
    top = d[y0, x0m] * (1 - fx[..., None]) + d[y0, x1m] * fx[..., None]
    bot = d[y1, x0m] * (1 - fx[..., None]) + d[y1, x1m] * fx[..., None]
    return top * (1 - fy[..., None]) + bot * fy[..., None]


def sample_background(pano: SkyPanorama, cam: Camera) -> np.ndarray:
    """(H, W, C_p) background raster for a camera (rotation only)."""
    dirs = cam.pixel_directions_world()
    return sample_panorama(pano, dirs)
