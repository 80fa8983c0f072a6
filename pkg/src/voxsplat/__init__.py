"""Voxel-scaffolded Gaussian splatting toolkit.

Sparse voxel grids with a dual-resolution hierarchy, per-voxel Gaussian
decoding and CPU rasterization with sky compositing, depth-binned image
feature unprojection, hard-intersection LiDAR simulation, ground-truth data
processing, and the associated losses and geometry metrics.
"""

from .camera import Camera, RigidTransform
from .conditioning import (ConditionGrid, DepthBins, PixelFeatureMap,
                           depth_supervision_target, lid_bin_edges,
                           unproject_features)
from .config import Config, ConfigError, load_config
from .grid import (GridFormatError, GridHierarchy, GridMeta, SparseVoxelGrid,
                   VoxelCoord, coarsen, deserialize, raymarch_first_hit,
                   serialize, voxelize)
from .lidar import (GaussianRayTracer, LidarReturn, ScanPattern, simulate_scan,
                    trace_ray)
from .metrics import (AppearanceLoss, DiffusionSignal, LossWeights,
                      appearance_loss, focal_loss, noised_latent, psnr, ssim,
                      v_target, voxel_chamfer)
from .pipeline import (ChunkSpec, DynamicBox, accumulate, crop_chunk,
                       insert_dynamic, make_training_pair, propagate_semantics,
                       voxel_visibility)
from .points import LabeledPointCloud
from .renderer import (DepthMap, RenderGradients, RenderOptions, RenderTarget,
                       project_gaussian, rasterize, rasterize_backward,
                       render_depth)
from .sky import (SkyPanorama, build_panorama, dir_to_pixel, pixel_to_dir,
                  sample_background, sample_panorama)
from .splats import (Gaussian, GaussianCloud, VoxSplatScene, decode_gaussian,
                     decode_scene, export_ply, import_ply, quat2rot,
                     scene_from_grid_channel)

__version__ = "0.1.0"
