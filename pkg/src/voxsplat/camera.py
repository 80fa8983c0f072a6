"""Rigid transforms and the pinhole camera model.

Conventions used throughout the package:

* camera frame: +x right, +y down, +z forward (optical axis);
* ``world_from_camera`` maps camera-frame points into world space;
* continuous image coordinates put the center of pixel ``(row, col)`` at
  ``(col + 0.5, row + 0.5)``;
* world up is +z (the sky module relies on this).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


def _check_rotation(r: np.ndarray, tol: float = _ORTHO_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise ValueError("rotation must have determinant +1")
    return r


@dataclass
class RigidTransform:
    """Rotation + translation; ``apply`` maps local points to the parent frame."""

    rotation: np.ndarray       # (3, 3)
    translation: np.ndarray    # (3,)

    def __post_init__(self):
        self.rotation = _check_rotation(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return RigidTransform(rot, np.asarray(translation, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def to_json(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(obj["rotation"], dtype=np.float64),
                              np.asarray(obj["translation"], dtype=np.float64))


@dataclass
class Camera:
    """Pinhole intrinsics plus a rigid world-from-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_from_camera: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def origin(self) -> np.ndarray:
        return self.world_from_camera.translation

    @property
    def rotation(self) -> np.ndarray:
        """World-from-camera rotation."""
        return self.world_from_camera.rotation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.world_from_camera.apply_inverse(points)

    def project(self, points_world: np.ndarray):
        """Project world points; returns ((..., 2) pixel coords, (...,) depth).

        Depth is the camera-frame z coordinate; callers decide what to do with
        points at or behind the camera (depth <= 0 yields unusable pixels).
        """
        p = np.atleast_2d(self.world_to_camera(points_world))
        z = p[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * p[..., 0] / z + self.cx
            v = self.fy * p[..., 1] / z + self.cy
        uv = np.stack([u, v], axis=-1)
        return uv, z

    def pixel_directions_camera(self) -> np.ndarray:
        """(H, W, 3) unit ray directions through every pixel center, camera frame."""
        cols = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        rows = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        x, y = np.meshgrid(cols, rows)
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def pixel_directions_world(self) -> np.ndarray:
        """(H, W, 3) unit ray directions through every pixel center, world frame."""
        d = self.pixel_directions_camera()
        return d @ self.rotation.T

    def pixel_ray_world(self, row: int, col: int) -> np.ndarray:
        """Unit world-frame direction through the center of pixel (row, col)."""
        x = (col + 0.5 - self.cx) / self.fx
        y = (row + 0.5 - self.cy) / self.fy
        d = np.array([x, y, 1.0])
        d /= np.linalg.norm(d)
        return self.rotation @ d

    def points_at_depth(self, depth: np.ndarray) -> np.ndarray:
        """World points at camera z-depth ``depth`` ((H, W) or scalar) per pixel."""
        cols = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        rows = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        x, y = np.meshgrid(cols, rows)
        depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), x.shape)
        p_cam = np.stack([x * depth, y * depth, depth], axis=-1)
        return self.world_from_camera.apply(p_cam.reshape(-1, 3)).reshape(p_cam.shape)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "world_from_camera": self.world_from_camera.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "Camera":
        pose = obj.get("world_from_camera")
        return Camera(
            fx=float(obj["fx"]), fy=float(obj["fy"]),
            cx=float(obj["cx"]), cy=float(obj["cy"]),
            width=int(obj["width"]), height=int(obj["height"]),
            world_from_camera=(RigidTransform.from_json(pose) if pose
                               else RigidTransform.identity()),
        )
