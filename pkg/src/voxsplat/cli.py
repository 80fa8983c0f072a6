"""Unified ``voxsplat`` command line.

Subcommands: voxelize, condition, decode, render, sky (build/sample), lidar,
pipeline, metrics, selftest.  Exit codes: 0 success, 1 user error (bad flags,
missing/malformed files), 2 internal error.  All commands are deterministic
given their inputs and ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import io as vio
from .camera import Camera, RigidTransform
from .conditioning import PixelFeatureMap, lid_bin_edges, unproject_features
from .config import Config, ConfigError, load_config
from .grid import GridFormatError, GridMeta, deserialize, serialize, voxelize
from .lidar import ScanPattern, simulate_scan
from .metrics import LossWeights, appearance_loss, psnr, ssim
from .pipeline import (ChunkSpec, DynamicBox, accumulate, crop_chunk,
                       insert_dynamic, make_training_pair, propagate_semantics)
from .points import LabeledPointCloud
from .renderer import RenderOptions, RenderTarget, rasterize, render_depth
from .selftest import run_selftest
from .sky import build_panorama, sample_background
from .splats import RAW_CHANNEL, RAW_WIDTH, export_ply, scene_from_grid_channel


class UserError(Exception):
    """Invalid invocation or input; reported without a traceback."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{message}\n{self.format_usage()}".rstrip())


def _parse_vec3(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise UserError(f"expected x,y,z triple, got {text!r}")
    return np.array([float(p) for p in parts])


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UserError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UserError(f"{path} is not valid JSON: {exc}")


def _load_cameras(path: str) -> list[Camera]:
    data = _load_json(path)
    if isinstance(data, dict):
        data = [data]
    try:
        return [Camera.from_json(entry) for entry in data]
    except (KeyError, ValueError, TypeError) as exc:
        raise UserError(f"bad camera description in {path}: {exc}")


def _load_grid(path: str):
    try:
        return deserialize(Path(path).read_bytes())
    except FileNotFoundError:
        raise UserError(f"file not found: {path}")
    except GridFormatError as exc:
        raise UserError(f"{path}: {exc}")


def _load_scene(args, cfg: Config):
    grid = _load_grid(args.scene)
    r = args.range_factor if args.range_factor else cfg.gaussians.range_factor
    try:
        return scene_from_grid_channel(grid, r=r * grid.meta.voxel_size)
    except ValueError as exc:
        raise UserError(f"{args.scene}: {exc}")


def _render_options(cfg: Config, threads: int) -> RenderOptions:
    return RenderOptions(tile_size=cfg.render.tile_size,
                         z_clip=cfg.render.z_clip,
                         cov_regularizer=cfg.render.cov_regularizer,
                         cutoff_sigma=cfg.render.cutoff_sigma,
                         threads=threads)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file (defaults match the "
                        "published training setup)")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for any randomized step (default 0)")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("VOXSPLAT_THREADS", "1")),
                        help="worker thread cap (or VOXSPLAT_THREADS)")


# -- subcommand bodies -------------------------------------------------------


def _cmd_voxelize(args, cfg: Config) -> int:
    cloud, _ = vio.read_point_ply(args.in_path)
    voxel_size = args.voxel_size or cfg.grid.voxel_size
    meta = GridMeta(_parse_vec3(args.origin) if args.origin
                    else np.asarray(cfg.grid.origin, dtype=np.float64), voxel_size)
    grid = voxelize(cloud, meta, args.num_classes)
    Path(args.out).write_bytes(serialize(grid))
    print(json.dumps({"voxels": len(grid), "voxel_size": voxel_size,
                      "channels": sorted(grid.channels)}))
    return 0


def _cmd_condition(args, cfg: Config) -> int:
    tensor = vio.read_raster_tensor(args.features)
    if tensor.ndim != 4:
        raise UserError(f"feature tensor must be (images, H, W, C+D), "
                        f"got shape {tensor.shape}")
    cameras = _load_cameras(args.cameras)
    if len(cameras) != tensor.shape[0]:
        raise UserError(f"{tensor.shape[0]} feature maps but "
                        f"{len(cameras)} cameras")
    d = args.bins or cfg.depth_bins.count
    c = args.feature_channels or cfg.conditioning.feature_channels
    if tensor.shape[3] != c + d:
        raise UserError(f"feature tensor has {tensor.shape[3]} channels, "
                        f"expected C+D = {c}+{d}")
    maps = []
    for i in range(tensor.shape[0]):
        feats = tensor[i, :, :, :c].astype(np.float64)
        probs = tensor[i, :, :, c:].astype(np.float64)
        try:
            maps.append(PixelFeatureMap(feats, probs))
        except ValueError as exc:
            raise UserError(f"feature map {i}: {exc} "
                            "(softmax-normalize the depth channels)")
    bins = lid_bin_edges(args.z_near if args.z_near is not None
                         else cfg.depth_bins.z_near,
                         args.z_far if args.z_far is not None
                         else cfg.depth_bins.z_far, d)
    extent = (tuple(int(v) for v in args.extent.split(","))
              if args.extent else tuple(cfg.conditioning.extent))
    if len(extent) != 3:
        raise UserError("--extent must be nx,ny,nz")
    meta = GridMeta(_parse_vec3(args.origin) if args.origin
                    else np.asarray(cfg.grid.origin, dtype=np.float64),
                    args.voxel_size or cfg.grid.voxel_size, extent)
    cond = unproject_features(maps, cameras, bins, meta)
    Path(args.out).write_bytes(serialize(cond.to_sparse_grid()))
    print(json.dumps({"occupied": int((cond.sample_counts > 0).sum()),
                      "dropped_samples": cond.dropped_samples,
                      "dropped_mass": cond.dropped_mass}))
    return 0


def _cmd_decode(args, cfg: Config) -> int:
    grid = _load_grid(args.grid)
    if RAW_CHANNEL not in grid.channels:
        if args.zeros is None:
            raise UserError(f"{args.grid} has no {RAW_CHANNEL!r} channel; "
                            "pass --zeros M to decode all-zero parameters")
        # An all-zero quaternion is degenerate; make it the identity.
        raw = np.zeros((len(grid), args.zeros, RAW_WIDTH))
        raw[:, :, 7] = 1.0
        grid = grid.with_channel(RAW_CHANNEL, raw.reshape(len(grid), -1))
    r_factor = args.range_factor or cfg.gaussians.range_factor
    scene = scene_from_grid_channel(grid, r=r_factor * grid.meta.voxel_size)
    Path(args.out).write_bytes(export_ply(scene))
    if args.write_grid:
        Path(args.write_grid).write_bytes(serialize(grid))
    print(json.dumps({"gaussians": len(scene.gaussians),
                      "per_voxel": scene.gaussians_per_voxel,
                      "confinement_radius": scene.confinement_radius}))
    return 0


def _cmd_render(args, cfg: Config) -> int:
    scene = _load_scene(args, cfg)
    cams = _load_cameras(args.camera)
    if len(cams) != 1:
        raise UserError("--camera must name a single camera")
    cam = cams[0]
    if args.sky:
        pano = vio.load_panorama(args.sky)
        if pano.channels != 3:
            raise UserError("sky panorama must store RGB to be rendered")
        background = sample_background(pano, cam)
    else:
        background = np.broadcast_to(
            _parse_vec3(args.bg) if args.bg else np.zeros(3),
            (cam.height, cam.width, 3)).copy()
    options = _render_options(cfg, args.threads)
    target = rasterize(scene, cam, background, options)
    vio.write_png(args.out, target.color)
    if args.alpha_out:
        vio.write_pfm(args.alpha_out, target.alpha)
    if args.depth_out:
        depth = render_depth(scene, cam, options)
        vio.write_pfm(args.depth_out, np.where(depth.valid, depth.values, -1.0))
    print(json.dumps({"gaussians": len(scene.gaussians),
                      "mean_alpha": float(target.alpha.mean())}))
    return 0


def _cmd_sky(args, cfg: Config) -> int:
    if args.sky_command == "build":
        image_paths = args.images.split(",")
        mask_paths = args.masks.split(",") if args.masks else []
        cameras = _load_cameras(args.cameras)
        if len(cameras) != len(image_paths):
            raise UserError(f"{len(image_paths)} images but "
                            f"{len(cameras)} cameras")
        if mask_paths and len(mask_paths) != len(image_paths):
            raise UserError("need one mask per image")
        views = []
        for i, path in enumerate(image_paths):
            image = vio.read_png(path)
            if image.ndim == 2:
                image = np.repeat(image[:, :, None], 3, axis=2)
            image = image[:, :, :3]
            mask = (vio.read_png(mask_paths[i]) > 0.5 if mask_paths
                    else np.ones(image.shape[:2], dtype=bool))
            if mask.ndim == 3:
                mask = mask[:, :, 0]
            views.append((image, mask, cameras[i]))
        if args.size:
            h, w = (int(v) for v in args.size.split("x"))
        else:
            h, w = cfg.sky.height, cfg.sky.width
        pano = build_panorama(views, (h, w), cfg.sky.uncovered_value)
        vio.save_panorama(args.out, pano)
        covered = float(pano.coverage.mean()) if pano.coverage is not None else 1.0
        print(json.dumps({"height": h, "width": w, "coverage": covered}))
        return 0

    pano = vio.load_panorama(args.pano)
    cams = _load_cameras(args.camera)
    if len(cams) != 1:
        raise UserError("--camera must name a single camera")
    sampled = sample_background(pano, cams[0])
    if sampled.shape[2] == 3:
        vio.write_png(args.out, sampled)
    else:
        vio.write_pfm(args.out, sampled.reshape(sampled.shape[0], -1))
    print(json.dumps({"channels": pano.channels}))
    return 0


def _cmd_lidar(args, cfg: Config) -> int:
    scene = _load_scene(args, cfg)
    pose = RigidTransform.from_json(_load_json(args.pose))
    if args.pattern:
        spec = _load_json(args.pattern)
        if "directions" in spec:
            pattern = ScanPattern(np.asarray(spec["directions"], dtype=np.float64),
                                  float(spec.get("max_range", cfg.lidar.max_range)))
        else:
            pattern = ScanPattern.spinning(
                int(spec.get("elevation_count", cfg.lidar.elevation_count)),
                int(spec.get("azimuth_count", cfg.lidar.azimuth_count)),
                tuple(spec.get("elevation_range_deg",
                               cfg.lidar.elevation_range_deg)),
                float(spec.get("max_range", cfg.lidar.max_range)))
    else:
        pattern = ScanPattern.spinning(cfg.lidar.elevation_count,
                                       cfg.lidar.azimuth_count,
                                       tuple(cfg.lidar.elevation_range_deg),
                                       cfg.lidar.max_range)
    lam = args.lam_hit or cfg.lidar.lam_hit
    cloud = simulate_scan(scene, pose, pattern, lam)
    ranges = np.linalg.norm(cloud.positions - pose.translation, axis=1)
    vio.write_point_ply(args.out, cloud, ranges)
    print(json.dumps({"rays": len(pattern.directions), "returns": len(cloud)}))
    return 0


def _cmd_pipeline(args, cfg: Config) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise UserError(f"file not found: {args.manifest}")
    frames = []
    boxes = []
    for line_no, line in enumerate(manifest_path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UserError(f"{args.manifest}:{line_no}: not valid JSON: {exc}")
        cloud, _ = vio.read_point_ply(manifest_path.parent / entry["points"])
        frame_id = int(entry.get("frame_id", len(frames)))
        if cloud.frame_ids is None:
            cloud = LabeledPointCloud(cloud.positions, cloud.labels,
                                      cloud.timestamps,
                                      np.full(len(cloud), frame_id,
                                              dtype=np.int32))
        frames.append((frame_id, cloud, RigidTransform.from_json(entry["pose"])))
        for b in entry.get("boxes", []):
            boxes.append(DynamicBox(np.asarray(b["center"], dtype=np.float64),
                                    np.asarray(b["half_extent"], dtype=np.float64),
                                    float(b.get("yaw", 0.0)),
                                    int(b.get("frame_id", frame_id)),
                                    int(b.get("object_id", 0)),
                                    int(b.get("label", -1))))
    if not frames:
        raise UserError("manifest holds no frames")
    target_frame = args.target_frame if args.target_frame is not None \
        else frames[-1][0]
    by_id = {fid: pose for fid, _, pose in frames}
    if target_frame not in by_id:
        raise UserError(f"target frame {target_frame} not in manifest")

    world = accumulate([(cloud, pose) for _, cloud, pose in frames], boxes)
    if world.labels is not None and (world.labels >= 0).any():
        world = propagate_semantics(world)
    samples = (args.samples_per_box if args.samples_per_box is not None
               else cfg.pipeline.samples_per_box)
    world = insert_dynamic(world, [b for b in boxes if b.frame_id == target_frame],
                           samples, seed=args.seed)
    spec = ChunkSpec(by_id[target_frame], cfg.pipeline.chunk_side,
                     cfg.pipeline.chunk_height, cfg.pipeline.forward_fraction,
                     cfg.pipeline.height_floor)
    chunk = crop_chunk(world, spec)
    meta_fine = spec.grid_meta(cfg.grid.voxel_size)
    meta_coarse = spec.grid_meta(cfg.grid.voxel_size * cfg.grid.coarse_factor)
    pair = make_training_pair(chunk, meta_fine, meta_coarse)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vio.write_point_ply(out_dir / "chunk.ply", chunk)
    (out_dir / "fine.svg2").write_bytes(serialize(pair.fine))
    (out_dir / "coarse.svg2").write_bytes(serialize(pair.coarse))
    summary = {"points": len(chunk), "fine_voxels": len(pair.fine),
               "coarse_voxels": len(pair.coarse), "target_frame": target_frame}
    (out_dir / "summary.json").write_text(json.dumps(summary))
    print(json.dumps(summary))
    return 0


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


def _cmd_metrics(args, cfg: Config) -> int:
    pred = vio.read_png(args.pred)[:, :, :3]
    gt = vio.read_png(args.gt)[:, :, :3]
    if pred.shape != gt.shape:
        raise UserError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    report = {"psnr": _json_float(psnr(pred, gt)), "ssim": ssim(pred, gt),
              "l1": float(np.mean(np.abs(pred - gt)))}
    if args.mask:
        mask = vio.read_png(args.mask)
        if mask.ndim == 3:
            mask = mask[:, :, 0]
        alpha = (vio.read_pfm(args.alpha) if args.alpha
                 else np.ones(mask.shape))
        weights = LossWeights(depth=cfg.loss.depth, l1=cfg.loss.l1,
                              mask=cfg.loss.mask, ssim=cfg.loss.ssim,
                              lpips=cfg.loss.lpips)
        loss = appearance_loss(RenderTarget(pred, alpha), gt, mask, weights)
        report["appearance"] = {"total": loss.total, "l1": loss.l1,
                                "mask_l1": loss.mask_l1, "dssim": loss.dssim}
    print(json.dumps(report))
    return 0


def _cmd_selftest(args, cfg: Config) -> int:
    return 0 if run_selftest(args.seed) else 1


# -- argument wiring ---------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="voxsplat", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("voxelize", help="bucket a point cloud into a grid")
    p.add_argument("--in", dest="in_path", required=True, metavar="POINTS.ply")
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--origin", help="grid origin as x,y,z (use --origin=-1,0,0 "
                   "for negative values)")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", required=True, metavar="GRID.svg2")
    _add_common(p)
    p.set_defaults(func=_cmd_voxelize)

    p = sub.add_parser("condition",
                       help="unproject image features into a voxel grid")
    p.add_argument("--features", required=True,
                   metavar="FEATS.vxrt", help="raster tensor (N, H, W, C+D)")
    p.add_argument("--cameras", required=True, metavar="CAMS.json")
    p.add_argument("--bins", type=int, help="depth bin count D")
    p.add_argument("--feature-channels", type=int, help="feature channels C")
    p.add_argument("--z-near", type=float)
    p.add_argument("--z-far", type=float)
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--origin")
    p.add_argument("--extent", help="grid extent as nx,ny,nz")
    p.add_argument("--out", required=True, metavar="COND.svg2")
    _add_common(p)
    p.set_defaults(func=_cmd_condition)

    p = sub.add_parser("decode", help="decode per-voxel Gaussians to splat PLY")
    p.add_argument("--grid", required=True, metavar="GRID.svg2")
    p.add_argument("--zeros", type=int, metavar="M",
                   help="attach M all-zero parameter sets when the grid has none")
    p.add_argument("--range-factor", type=float)
    p.add_argument("--write-grid", metavar="SCENE.svg2",
                   help="also save the grid with its raw-parameter channel")
    p.add_argument("--out", required=True, metavar="SCENE.ply")
    _add_common(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("render", help="rasterize a scene to an image")
    p.add_argument("--scene", required=True, metavar="SCENE.svg2")
    p.add_argument("--camera", required=True, metavar="CAM.json")
    p.add_argument("--sky", metavar="PANO.pfm")
    p.add_argument("--bg", help="constant background color r,g,b")
    p.add_argument("--range-factor", type=float)
    p.add_argument("--depth-out", metavar="DEPTH.pfm")
    p.add_argument("--alpha-out", metavar="ALPHA.pfm")
    p.add_argument("--out", required=True, metavar="IMG.png")
    _add_common(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("sky", help="build or sample the sky panorama")
    sky_sub = p.add_subparsers(dest="sky_command", metavar="build|sample")
    b = sky_sub.add_parser("build")
    b.add_argument("--images", required=True, help="comma-separated PNGs")
    b.add_argument("--masks", help="comma-separated sky-mask PNGs")
    b.add_argument("--cameras", required=True, metavar="CAMS.json")
    b.add_argument("--size", help="panorama size HxW")
    b.add_argument("--out", required=True, metavar="PANO.pfm")
    _add_common(b)
    b.set_defaults(func=_cmd_sky)
    s = sky_sub.add_parser("sample")
    s.add_argument("--pano", required=True, metavar="PANO.pfm")
    s.add_argument("--camera", required=True, metavar="CAM.json")
    s.add_argument("--out", required=True, metavar="BG.png")
    _add_common(s)
    s.set_defaults(func=_cmd_sky)

    p = sub.add_parser("lidar", help="simulate a LiDAR scan of a scene")
    p.add_argument("--scene", required=True, metavar="SCENE.svg2")
    p.add_argument("--pose", required=True, metavar="POSE.json")
    p.add_argument("--pattern", metavar="PATTERN.json")
    p.add_argument("--lam-hit", type=float)
    p.add_argument("--range-factor", type=float)
    p.add_argument("--out", required=True, metavar="SCAN.ply")
    _add_common(p)
    p.set_defaults(func=_cmd_lidar)

    p = sub.add_parser("pipeline", help="ground-truth processing of a manifest")
    p.add_argument("--manifest", required=True, metavar="SCENES.jsonl")
    p.add_argument("--target-frame", type=int)
    p.add_argument("--samples-per-box", type=int)
    p.add_argument("--out-dir", required=True, metavar="DIR")
    _add_common(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("metrics", help="image metrics as a JSON report")
    p.add_argument("--pred", required=True, metavar="A.png")
    p.add_argument("--gt", required=True, metavar="B.png")
    p.add_argument("--mask", metavar="M.png")
    p.add_argument("--alpha", metavar="ALPHA.pfm")
    _add_common(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("selftest", help="run the built-in oracle suite")
    _add_common(p)
    p.set_defaults(func=_cmd_selftest)

    return parser


def run(argv=None) -> int:
    """Parse and execute; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            print(parser.format_usage().rstrip(), file=sys.stderr)
            return 1
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UserError as exc:
        print(f"voxsplat: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, vio.FormatError, GridFormatError, ValueError) as exc:
        print(f"voxsplat: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"voxsplat: error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run())
