"""Build an equirectangular sky panorama from masked views and resample it.

Three synthetic cameras on a moving rig photograph an analytic sky (azimuth
hue, elevation brightness).  Because only view direction matters, the rig
translation is zeroed during the build; the demo verifies that moving the rig
does not change a single bit of the panorama, then renders a novel view.
"""

import pathlib

import numpy as np

from voxsplat import (Camera, RigidTransform, build_panorama,
                      sample_background)
from voxsplat.io import save_panorama, write_png

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)


def analytic_sky(direction):
    """RGB as a smooth function of a view direction."""
    az = np.arctan2(direction[..., 1], direction[..., 0])
    el = np.arcsin(np.clip(direction[..., 2], -1, 1))
    r = 0.5 + 0.4 * np.sin(az)
    g = 0.5 + 0.4 * np.sin(2 * az + 1.0)
    b = 0.6 + 0.35 * np.sin(el * 2.0)
    return np.clip(np.stack([r, g, b], axis=-1), 0, 1)


def rig(yaw, translation):
    # Optical axis horizontal, camera up = world up, rotated by yaw.
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    pose = RigidTransform.from_yaw(yaw).rotation @ base
    return Camera(fx=40, fy=40, cx=32, cy=32, width=64, height=64,
                  world_from_camera=RigidTransform(pose, translation))


def shoot(cam):
    dirs = cam.pixel_directions_world()
    image = analytic_sky(dirs)
    mask = dirs[..., 2] > -0.05  # mask out the "ground" half
    return image, mask, cam


YAWS = (-2.4, -1.6, -0.8, 0.0, 0.8, 1.6, 2.4)
views = [shoot(rig(yaw, np.array([5.0, -2.0, 1.5]))) for yaw in YAWS]
pano = build_panorama(views, size=(128, 256))
print(f"panorama 128x256 built from {len(views)} views; "
      f"coverage {pano.coverage.mean():.1%}")

moved = build_panorama([shoot(rig(yaw, np.array([-40.0, 13.0, 7.0])))
                        for yaw in YAWS], size=(128, 256))
assert np.array_equal(pano.data, moved.data)
print("rig moved 50 m: panorama bit-identical (translation invariant)")

save_panorama(OUT / "sky.pfm", pano)
write_png(OUT / "sky_panorama.png", pano.data)

novel = rig(0.4, np.array([100.0, 100.0, 0.0]))
background = sample_background(pano, novel)
write_png(OUT / "sky_novel_view.png", background)

# Compare sampled sky against the analytic truth on covered directions only
# (pixels looking below the masked horizon have no sky data).
dirs = novel.pixel_directions_world()
truth = analytic_sky(dirs)
covered = dirs[..., 2] > 0.0
err = np.abs(background - truth)[covered].mean()
print(f"novel view sampled; mean abs error vs analytic sky = {err:.4f} "
      f"on covered directions (interpolation + nearest-pixel build)")
print(f"outputs in {OUT}")
