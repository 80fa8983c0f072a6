"""Losses and evaluation metrics.

Includes the multi-class focal loss used for depth-bin supervision, the
appearance loss assembly (L1 color + L1 opacity-vs-sky-mask + SSIM, with an
optional perceptual hook), PSNR/SSIM image metrics, the voxel Chamfer
distance, and the diffusion v-parametrization target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import convolve
from scipy.spatial import cKDTree

from .grid import SparseVoxelGrid
from .renderer import RenderTarget

_LOG_CLAMP = 1e-12


@dataclass
class LossWeights:
    """Appearance/depth loss weights; defaults follow the training recipe."""

    depth: float = 1.0
    l1: float = 0.9
    mask: float = 1.0
    ssim: float = 0.1
    lpips: float = 0.6

    def __post_init__(self):
        for name in ("depth", "l1", "mask", "ssim", "lpips"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name!r} must be >= 0")


@dataclass
class DiffusionSignal:
    """Latent stand-in, matching noise, and the schedule factor at step t."""

    latent: np.ndarray
    noise: np.ndarray
    alpha_bar: float
    t: int = 0

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        self.noise = np.asarray(self.noise, dtype=np.float64)
        if self.latent.shape != self.noise.shape:
            raise ValueError("latent and noise must share a shape")


def focal_loss(pred_dist: np.ndarray, target_onehot: np.ndarray,
               gamma: float = 2.0, ignore: Optional[np.ndarray] = None,
               class_weights: Optional[np.ndarray] = None) -> float:
    """Multi-class focal loss -(1 - p_t)^gamma log(p_t), averaged.

    ``pred_dist`` holds per-entry probability rows (last axis sums to 1);
    ``target_onehot`` selects the target class; ``ignore`` flags entries to
    exclude.  p_t is clamped to 1e-12 before the log.  Returns 0.0 when every
    entry is ignored.
    """
    pred = np.asarray(pred_dist, dtype=np.float64)
    target = np.asarray(target_onehot, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    sums = pred.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        raise ValueError("predicted distributions must sum to 1")

    flat_p = pred.reshape(-1, pred.shape[-1])
    flat_t = target.reshape(-1, pred.shape[-1])
    keep = np.ones(len(flat_p), dtype=bool)
    if ignore is not None:
        keep &= ~np.asarray(ignore, dtype=bool).reshape(-1)
    if not keep.any():
        return 0.0
    p_t = (flat_p * flat_t).sum(axis=1)[keep]
    p_t = np.maximum(p_t, _LOG_CLAMP)
    losses = -((1.0 - p_t) ** gamma) * np.log(p_t)
    if class_weights is not None:
        cw = np.asarray(class_weights, dtype=np.float64)
        losses = losses * cw[flat_t.argmax(axis=1)[keep]]
    return float(losses.mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; +inf when equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, window: np.ndarray,
                  c1: float, c2: float) -> float:
    half = window.shape[0] // 2

    def valid(img):
        full = convolve(img, window, mode="constant")
        return full[half:img.shape[0] - half, half:img.shape[1] - half]

    mu_a = valid(a)
    mu_b = valid(b)
    var_a = valid(a * a) - mu_a**2
    var_b = valid(b * b) - mu_b**2
    cov = valid(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, c1: float = 0.01**2, c2: float = 0.03**2) -> float:
    """Gaussian-windowed SSIM on unit-range images, averaged over channels.

    Windows are 'valid' (no padding); images must be at least the window size
    on both axes.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if a.shape[0] < window_size or a.shape[1] < window_size:
        raise ValueError(f"images must be at least {window_size} pixels per axis")
    window = _gaussian_window(window_size, sigma)
    if a.ndim == 2:
        return _ssim_channel(a, b, window, c1, c2)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], window, c1, c2)
                          for c in range(a.shape[2])]))


@dataclass
class AppearanceLoss:
    """Weighted total plus the raw (unweighted) components."""

    total: float
    l1: float
    mask_l1: float
    dssim: float       # 1 - SSIM
    lpips: float = 0.0


def appearance_loss(pred: RenderTarget, gt_image: np.ndarray,
                    sky_mask: np.ndarray, weights: LossWeights = LossWeights(),
                    lpips_hook: Optional[Callable[[np.ndarray, np.ndarray], float]]
                    = None) -> AppearanceLoss:
    """Assemble the appearance loss against a ground-truth view.

    ``sky_mask`` marks non-sky pixels with 1 so that it pairs with the
    renderer's accumulated-opacity map.  The perceptual term is an external
    hook (it needs a pretrained network) and contributes 0 when absent.
    """
    gt = np.asarray(gt_image, dtype=np.float64)
    mask = np.asarray(sky_mask, dtype=np.float64)
    if pred.color.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    if pred.alpha.shape != mask.shape:
        raise ValueError("alpha map and sky mask shapes differ")
    l1 = float(np.mean(np.abs(pred.color - gt)))
    mask_l1 = float(np.mean(np.abs(pred.alpha - mask)))
    dssim = 1.0 - ssim(pred.color, gt)
    lpips = float(lpips_hook(pred.color, gt)) if lpips_hook is not None else 0.0
    total = (weights.l1 * l1 + weights.mask * mask_l1
             + weights.ssim * dssim + weights.lpips * lpips)
    return AppearanceLoss(total, l1, mask_l1, dssim, lpips)


def voxel_chamfer(pred: SparseVoxelGrid, gt: SparseVoxelGrid) -> float:
    """Symmetric mean nearest-neighbor distance between occupied-voxel
    centroids, in units of the (shared) voxel size."""
    if abs(pred.meta.voxel_size - gt.meta.voxel_size) > 1e-12:
        raise ValueError("grids must share a voxel size")
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("voxel Chamfer distance needs non-empty grids")
    a = pred.centroids()
    b = gt.centroids()
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(0.5 * (d_ab.mean() + d_ba.mean()) / pred.meta.voxel_size)


def _check_alpha_bar(alpha_bar: float) -> float:
    if not 0.0 <= alpha_bar <= 1.0:
        raise ValueError(f"alpha_bar must be in [0, 1], got {alpha_bar}")
    return float(alpha_bar)


def v_target(sig: DiffusionSignal) -> np.ndarray:
    """v-parametrization target sqrt(a_t) eps - sqrt(1 - a_t) X."""
    ab = _check_alpha_bar(sig.alpha_bar)
    return math.sqrt(ab) * sig.noise - math.sqrt(1.0 - ab) * sig.latent


def noised_latent(sig: DiffusionSignal) -> np.ndarray:
    """Companion forward noising x_t = sqrt(a_t) X + sqrt(1 - a_t) eps."""
    ab = _check_alpha_bar(sig.alpha_bar)
    return math.sqrt(ab) * sig.latent + math.sqrt(1.0 - ab) * sig.noise
