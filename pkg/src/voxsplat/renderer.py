"""CPU tile-based Gaussian splat rasterizer with analytic gradients.

Forward model, per pixel and Gaussian (front-to-back in depth order, ties
broken by Gaussian index):

    w_n   = alpha_n * exp(-1/2 d^T cov2d^-1 d),  zero beyond the cutoff
            Mahalanobis radius, clamped into [0, 1]
    color = sum_n w_n T_n rgb_n + prod_n (1 - w_n) * background
    T_n   = prod_{m<n} (1 - w_m)
    alpha = 1 - prod_n (1 - w_n)

The Mahalanobis cutoff (default 3 sigma) is part of the compositing
definition, so tile culling by the projected cutoff radius is exact rather
than approximate.  The backward pass re-walks each tile and uses a
division-free two-pass formulation: with B_n the color composited strictly
behind Gaussian n (background included),

    d color / d w_n = T_n * (rgb_n - B_n).

Gradients are reported against the decoded parameters (mean, alpha, scale,
quaternion, color) and can be chained to raw parameters via
``RenderGradients.to_raw``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .camera import Camera
from .splats import GaussianCloud, VoxSplatScene, quat2rot, sigmoid


@dataclass
class RenderOptions:
    tile_size: int = 16
    z_clip: float = 0.01            # near clipping depth, meters
    cov_regularizer: float = 0.3    # px^2 added to the 2D covariance diagonal
    cutoff_sigma: float = 3.0       # Mahalanobis radius beyond which w = 0
    threads: int = 1


DEFAULT_OPTIONS = RenderOptions()


@dataclass
class RenderTarget:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W) accumulated opacity in [0, 1]


@dataclass
class DepthMap:
    values: np.ndarray  # (H, W) opacity-weighted expected depth, meters
    valid: np.ndarray   # (H, W) bool; False where accumulated opacity < 1e-3


@dataclass
class RenderGradients:
    """Partials of a scalar loss w.r.t. decoded per-Gaussian parameters."""

    d_means: np.ndarray   # (N, 3)
    d_alphas: np.ndarray  # (N,)
    d_scales: np.ndarray  # (N, 3)
    d_quats: np.ndarray   # (N, 4)
    d_colors: np.ndarray  # (N, 3)

    def to_raw(self, raw: np.ndarray, r: float) -> np.ndarray:
        """Chain through the activation decode back to (n, M, 14) raw params."""
        raw = np.asarray(raw, dtype=np.float64)
        shape = raw.shape
        flat = raw.reshape(-1, 14)
        out = np.zeros_like(flat)
        th = np.tanh(flat[:, 0:3])
        out[:, 0:3] = self.d_means * r * (1.0 - th * th)
        sig = sigmoid(flat[:, 3])
        out[:, 3] = self.d_alphas * sig * (1.0 - sig)
        out[:, 4:7] = self.d_scales * np.exp(flat[:, 4:7])
        # Decoding passes q_bar through unchanged (normalization happens at
        # use), so the quaternion gradient maps one-to-one.
        out[:, 7:11] = self.d_quats
        out[:, 11:14] = self.d_colors
        return out.reshape(shape)


def _as_cloud(scene: Union[VoxSplatScene, GaussianCloud]) -> GaussianCloud:
    return scene.gaussians if isinstance(scene, VoxSplatScene) else scene


def _map_ordered(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def project_gaussian(gaussian, cam: Camera,
                     options: RenderOptions = DEFAULT_OPTIONS):
    """Perspective projection of one Gaussian.

    Returns (mean2d, cov2d, depth) or None when the mean is at or behind the
    near clip.  cov2d = J W Sigma W^T J^T + regularizer, with W the
    world-to-camera rotation and J the projection Jacobian at the mean.
    """
    w_rot = cam.rotation.T
    p = w_rot @ (np.asarray(gaussian.mean, dtype=np.float64) - cam.origin)
    z = p[2]
    if z <= options.z_clip:
        return None
    jac = np.array([[cam.fx / z, 0.0, -cam.fx * p[0] / z**2],
                    [0.0, cam.fy / z, -cam.fy * p[1] / z**2]])
    mean2d = np.array([cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy])
    cov2d = jac @ w_rot @ gaussian.cov @ w_rot.T @ jac.T
    cov2d += options.cov_regularizer * np.eye(2)
    return mean2d, cov2d, float(z)


class _Projected:
    """Screen-space quantities for every Gaussian of a cloud."""

    def __init__(self, cloud: GaussianCloud, cam: Camera, options: RenderOptions):
        n = len(cloud)
        w_rot = cam.rotation.T
        self.p_cam = (cloud.means - cam.origin) @ w_rot.T          # (N, 3)
        self.depth = self.p_cam[:, 2]
        self.valid = self.depth > options.z_clip

        z = np.where(self.valid, self.depth, 1.0)
        x, y = self.p_cam[:, 0], self.p_cam[:, 1]
        self.jac = np.zeros((n, 2, 3))
        self.jac[:, 0, 0] = cam.fx / z
        self.jac[:, 0, 2] = -cam.fx * x / z**2
        self.jac[:, 1, 1] = cam.fy / z
        self.jac[:, 1, 2] = -cam.fy * y / z**2
        self.mean2d = np.stack([cam.fx * x / z + cam.cx,
                                cam.fy * y / z + cam.cy], axis=1)

        self.vrk = np.einsum("ab,nbc,dc->nad", w_rot, cloud.covariances(), w_rot)
        cov2d = np.einsum("nab,nbc,ndc->nad", self.jac, self.vrk, self.jac)
        cov2d[:, 0, 0] += options.cov_regularizer
        cov2d[:, 1, 1] += options.cov_regularizer
        self.cov2d = cov2d

        a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
        det = a * c - b * b
        self.conic = np.stack([c / det, -b / det, a / det], axis=1)  # (N, 3)
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        self.radius = options.cutoff_sigma * np.sqrt(lam_max)

        # Global front-to-back order over valid Gaussians; stable sort keeps
        # index order on depth ties so renders are reproducible.
        idx = np.flatnonzero(self.valid)
        self.order = idx[np.argsort(self.depth[idx], kind="stable")]


def _tile_ranges(extent: int, tile: int):
    return [(t, min(t + tile, extent)) for t in range(0, extent, tile)]


def _gaussians_in_tile(proj: _Projected, x0, x1, y0, y1) -> np.ndarray:
    """Front-to-back Gaussian indices whose cutoff disc meets the tile."""
    g = proj.order
    if len(g) == 0:
        return g
    mx, my = proj.mean2d[g, 0], proj.mean2d[g, 1]
    rad = proj.radius[g]
    keep = ((mx + rad >= x0 + 0.5) & (mx - rad <= x1 - 0.5)
            & (my + rad >= y0 + 0.5) & (my - rad <= y1 - 0.5))
    return g[keep]


def _tile_weights(proj: _Projected, alphas: np.ndarray, g: np.ndarray,
                  xs: np.ndarray, ys: np.ndarray, cutoff2: float):
    """Per-(pixel, Gaussian) weights for one tile; pixels flattened to P."""
    dx = xs[:, None] - proj.mean2d[g, 0][None, :]
    dy = ys[:, None] - proj.mean2d[g, 1][None, :]
    ca, cb, cc = proj.conic[g, 0], proj.conic[g, 1], proj.conic[g, 2]
    maha = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
    gval = np.exp(-0.5 * maha)
    gval[maha > cutoff2] = 0.0
    w = alphas[g][None, :] * gval
    clamped = w > 1.0
    np.minimum(w, 1.0, out=w)
    return w, gval, clamped, dx, dy


def _pixel_grid(x0, x1, y0, y1):
    xs, ys = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
    return xs.reshape(-1), ys.reshape(-1)


def rasterize(scene: Union[VoxSplatScene, GaussianCloud], cam: Camera,
              background: np.ndarray,
              options: RenderOptions = DEFAULT_OPTIONS) -> RenderTarget:
    """Render the Gaussians over a background image."""
    cloud = _as_cloud(scene)
    background = np.asarray(background, dtype=np.float64)
    if background.shape != (cam.height, cam.width, 3):
        raise ValueError(f"background must be ({cam.height}, {cam.width}, 3), "
                         f"got {background.shape}")
    color = background.copy()
    alpha = np.zeros((cam.height, cam.width))
    if len(cloud) == 0:
        return RenderTarget(color, alpha)

    proj = _Projected(cloud, cam, options)
    cutoff2 = options.cutoff_sigma**2
    tiles = [(y0, y1, x0, x1)
             for y0, y1 in _tile_ranges(cam.height, options.tile_size)
             for x0, x1 in _tile_ranges(cam.width, options.tile_size)]

    def run_tile(tile):
        y0, y1, x0, x1 = tile
        g = _gaussians_in_tile(proj, x0, x1, y0, y1)
        if len(g) == 0:
            return None
        xs, ys = _pixel_grid(x0, x1, y0, y1)
        w, _, _, _, _ = _tile_weights(proj, cloud.alphas, g, xs, ys, cutoff2)
        trans = np.cumprod(1.0 - w, axis=1)
        t_excl = np.concatenate([np.ones((len(xs), 1)), trans[:, :-1]], axis=1)
        shape = (y1 - y0, x1 - x0)
        return (((w * t_excl) @ cloud.colors[g]).reshape(shape + (3,)),
                trans[:, -1].reshape(shape))

    # Tiles are independent; results are merged in tile order so the render
    # is identical for any thread count.
    for tile, result in zip(tiles, _map_ordered(run_tile, tiles, options.threads)):
        if result is None:
            continue
        y0, y1, x0, x1 = tile
        tile_color, tile_trans = result
        color[y0:y1, x0:x1] = tile_color + tile_trans[..., None] * \
            background[y0:y1, x0:x1]
        alpha[y0:y1, x0:x1] = 1.0 - tile_trans
    return RenderTarget(color, alpha)


def render_depth(scene: Union[VoxSplatScene, GaussianCloud], cam: Camera,
                 options: RenderOptions = DEFAULT_OPTIONS,
                 min_alpha: float = 1e-3) -> DepthMap:
    """Opacity-weighted expected depth under the same compositing weights."""
    cloud = _as_cloud(scene)
    num = np.zeros((cam.height, cam.width))
    den = np.zeros((cam.height, cam.width))
    if len(cloud) == 0:
        return DepthMap(num, den >= min_alpha)

    proj = _Projected(cloud, cam, options)
    cutoff2 = options.cutoff_sigma**2
    for y0, y1 in _tile_ranges(cam.height, options.tile_size):
        for x0, x1 in _tile_ranges(cam.width, options.tile_size):
            g = _gaussians_in_tile(proj, x0, x1, y0, y1)
            if len(g) == 0:
                continue
            xs, ys = _pixel_grid(x0, x1, y0, y1)
            w, _, _, _, _ = _tile_weights(proj, cloud.alphas, g, xs, ys, cutoff2)
            trans = np.cumprod(1.0 - w, axis=1)
            t_excl = np.concatenate([np.ones((len(xs), 1)), trans[:, :-1]], axis=1)
            wt = w * t_excl
            shape = (y1 - y0, x1 - x0)
            num[y0:y1, x0:x1] = (wt @ proj.depth[g]).reshape(shape)
            den[y0:y1, x0:x1] = wt.sum(axis=1).reshape(shape)
    valid = den >= min_alpha
    values = np.zeros_like(num)
    np.divide(num, den, out=values, where=valid)
    return DepthMap(values, valid)


def rasterize_backward(scene: Union[VoxSplatScene, GaussianCloud], cam: Camera,
                       background: np.ndarray, loss_grad: np.ndarray,
                       alpha_grad: Optional[np.ndarray] = None,
                       options: RenderOptions = DEFAULT_OPTIONS) -> RenderGradients:
    """Backpropagate image-space gradients to decoded Gaussian parameters.

    ``loss_grad`` is dL/d(color image), (H, W, 3); ``alpha_grad`` optionally
    supplies dL/d(alpha map) for losses that supervise accumulated opacity.
    Must be called with the same scene/camera/background as the forward pass.
    """
    cloud = _as_cloud(scene)
    n = len(cloud)
    grads = RenderGradients(np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)),
                            np.zeros((n, 4)), np.zeros((n, 3)))
    if n == 0:
        return grads
    background = np.asarray(background, dtype=np.float64)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (cam.height, cam.width, 3):
        raise ValueError("loss_grad must match the rendered image shape")
    if alpha_grad is not None:
        alpha_grad = np.asarray(alpha_grad, dtype=np.float64)

    proj = _Projected(cloud, cam, options)
    cutoff2 = options.cutoff_sigma**2
    d_mean2d = np.zeros((n, 2))
    d_cov2d = np.zeros((n, 2, 2))

    for y0, y1 in _tile_ranges(cam.height, options.tile_size):
        for x0, x1 in _tile_ranges(cam.width, options.tile_size):
            g = _gaussians_in_tile(proj, x0, x1, y0, y1)
            n_g = len(g)
            if n_g == 0:
                continue
            xs, ys = _pixel_grid(x0, x1, y0, y1)
            n_p = len(xs)
            w, gval, clamped, dx, dy = _tile_weights(proj, cloud.alphas, g,
                                                     xs, ys, cutoff2)
            t_excl = np.concatenate(
                [np.ones((n_p, 1)), np.cumprod(1.0 - w, axis=1)[:, :-1]], axis=1)
            go = loss_grad[y0:y1, x0:x1].reshape(n_p, 3)
            bg = background[y0:y1, x0:x1].reshape(n_p, 3)

            # Back-to-front sweep: color composited strictly behind each
            # Gaussian (background included) and the suffix transmittance.
            behind = np.empty((n_p, n_g, 3))
            suffix = np.empty((n_p, n_g))
            run_color = bg.copy()
            run_trans = np.ones(n_p)
            for gi in range(n_g - 1, -1, -1):
                behind[:, gi] = run_color
                suffix[:, gi] = run_trans
                wg = w[:, gi][:, None]
                run_color = wg * cloud.colors[g[gi]] + (1.0 - wg) * run_color
                run_trans = run_trans * (1.0 - w[:, gi])

            colors_g = cloud.colors[g]
            d_w = np.einsum("pc,pgc->pg", go, t_excl[:, :, None]
                            * (colors_g[None, :, :] - behind))
            if alpha_grad is not None:
                ga = alpha_grad[y0:y1, x0:x1].reshape(n_p)
                d_w += ga[:, None] * t_excl * suffix

            grads.d_colors[g] += np.einsum("pg,pc->gc", w * t_excl, go)
            live = ~clamped
            grads.d_alphas[g] += np.einsum("pg,pg->g", d_w * gval, live)
            d_power = d_w * w * live

            ca, cb, cc = proj.conic[g, 0], proj.conic[g, 1], proj.conic[g, 2]
            ld0 = ca * dx + cb * dy   # (Lambda d)_x per (pixel, gaussian)
            ld1 = cb * dx + cc * dy
            d_mean2d[g, 0] += np.einsum("pg,pg->g", d_power, ld0)
            d_mean2d[g, 1] += np.einsum("pg,pg->g", d_power, ld1)
            # dL/dLambda = sum_p d_power * (-1/2) d d^T, then
            # dL/dcov = -Lambda dLambda Lambda.
            s00 = np.einsum("pg,pg->g", d_power, -0.5 * dx * dx)
            s01 = np.einsum("pg,pg->g", d_power, -0.5 * dx * dy)
            s11 = np.einsum("pg,pg->g", d_power, -0.5 * dy * dy)
            m00 = ca * s00 + cb * s01
            m01 = ca * s01 + cb * s11
            m10 = cb * s00 + cc * s01
            m11 = cb * s01 + cc * s11
            d_cov2d[g, 0, 0] += -(m00 * ca + m01 * cb)
            d_cov2d[g, 0, 1] += -(m00 * cb + m01 * cc)
            d_cov2d[g, 1, 0] += -(m10 * ca + m11 * cb)
            d_cov2d[g, 1, 1] += -(m10 * cb + m11 * cc)

    _chain_to_parameters(cloud, cam, proj, d_mean2d, d_cov2d, grads)
    return grads


def _chain_to_parameters(cloud: GaussianCloud, cam: Camera, proj: _Projected,
                         d_mean2d: np.ndarray, d_cov2d: np.ndarray,
                         grads: RenderGradients) -> None:
    """Chain screen-space gradients through projection and the covariance
    factorization down to (mean, scale, quaternion)."""
    live = proj.valid
    d_cov2d = 0.5 * (d_cov2d + np.swapaxes(d_cov2d, 1, 2))

    # cov2d = J Vrk J^T:  dVrk = J^T dcov2d J;  dJ = 2 dcov2d J Vrk.
    d_vrk = np.einsum("nba,nbc,ncd->nad", proj.jac, d_cov2d, proj.jac)
    d_jac = 2.0 * np.einsum("nab,nbc,ncd->nad", d_cov2d, proj.jac, proj.vrk)

    # Vrk = W Sigma W^T with W the world-to-camera rotation (= R^T).
    w_rot = cam.rotation.T
    d_sigma = np.einsum("ba,nbc,cd->nad", w_rot, d_vrk, w_rot)

    # mean2d depends on the camera-frame mean directly (Jacobian J) and
    # through J inside cov2d.
    d_pcam = np.einsum("nba,nb->na", proj.jac, d_mean2d)
    x, y = proj.p_cam[:, 0], proj.p_cam[:, 1]
    z = np.where(live, proj.depth, 1.0)
    fx, fy = cam.fx, cam.fy
    d_pcam[:, 0] += d_jac[:, 0, 2] * (-fx / z**2)
    d_pcam[:, 1] += d_jac[:, 1, 2] * (-fy / z**2)
    d_pcam[:, 2] += (d_jac[:, 0, 0] * (-fx / z**2)
                     + d_jac[:, 1, 1] * (-fy / z**2)
                     + d_jac[:, 0, 2] * (2.0 * fx * x / z**3)
                     + d_jac[:, 1, 2] * (2.0 * fy * y / z**3))
    grads.d_means[:] = np.where(live[:, None], d_pcam @ w_rot, 0.0)

    # Sigma = M M^T, M = R(q) diag(s).
    rot = quat2rot(cloud.quats)
    m = rot * cloud.scales[:, None, :]
    d_m = 2.0 * np.einsum("nab,nbc->nac", d_sigma, m)
    grads.d_scales[:] = np.where(live[:, None],
                                 np.einsum("nai,nai->ni", rot, d_m), 0.0)
    d_rot = d_m * cloud.scales[:, None, :]

    qn = cloud.quats / np.linalg.norm(cloud.quats, axis=1, keepdims=True)
    qw, qx, qy, qz = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    r = d_rot
    d_qhat = np.stack([
        2 * (-r[:, 0, 1] * qz + r[:, 0, 2] * qy + r[:, 1, 0] * qz
             - r[:, 1, 2] * qx - r[:, 2, 0] * qy + r[:, 2, 1] * qx),
        2 * (r[:, 0, 1] * qy + r[:, 0, 2] * qz + r[:, 1, 0] * qy
             - 2 * r[:, 1, 1] * qx - r[:, 1, 2] * qw + r[:, 2, 0] * qz
             + r[:, 2, 1] * qw - 2 * r[:, 2, 2] * qx),
        2 * (-2 * r[:, 0, 0] * qy + r[:, 0, 1] * qx + r[:, 0, 2] * qw
             + r[:, 1, 0] * qx + r[:, 1, 2] * qz - r[:, 2, 0] * qw
             + r[:, 2, 1] * qz - 2 * r[:, 2, 2] * qy),
        2 * (-2 * r[:, 0, 0] * qz - r[:, 0, 1] * qw + r[:, 0, 2] * qx
             + r[:, 1, 0] * qw - 2 * r[:, 1, 1] * qz + r[:, 1, 2] * qy
             + r[:, 2, 0] * qx + r[:, 2, 1] * qy),
    ], axis=1)
    # Normalization Jacobian: d/dq of R(q / |q|).
    norms = np.linalg.norm(cloud.quats, axis=1, keepdims=True)
    d_quat = (d_qhat - qn * np.einsum("ni,ni->n", qn, d_qhat)[:, None]) / norms
    grads.d_quats[:] = np.where(live[:, None], d_quat, 0.0)
