"""Independent brute-force oracles used by the test suite.

Everything here is written as a direct transcription of the math, favoring
scalar loops over vectorization, so the fast library paths are checked
against a genuinely separate computation.
"""

import math

import numpy as np


def bucket_voxelize(positions, origin, voxel_size):
    """Occupied voxel set by looping over every point."""
    occupied = set()
    for p in np.asarray(positions, dtype=float):
        occupied.add(tuple(int(math.floor((p[a] - origin[a]) / voxel_size))
                           for a in range(3)))
    return occupied


def majority_labels(positions, labels, origin, voxel_size):
    """Per-voxel majority label, ties to the smallest label id."""
    votes = {}
    for p, lab in zip(np.asarray(positions, dtype=float), labels):
        if lab < 0:
            continue
        key = tuple(int(math.floor((p[a] - origin[a]) / voxel_size))
                    for a in range(3))
        votes.setdefault(key, {}).setdefault(int(lab), 0)
        votes[key][int(lab)] += 1
    return {key: sorted(counts, key=lambda l: (-counts[l], l))[0]
            for key, counts in votes.items()}


def ray_box_entry(origin, direction, lo, hi):
    """Entry distance of a ray into an AABB, or None (slab test)."""
    t0, t1 = 0.0, math.inf
    for a in range(3):
        if direction[a] == 0.0:
            if origin[a] < lo[a] or origin[a] >= hi[a]:
                return None
            continue
        ta = (lo[a] - origin[a]) / direction[a]
        tb = (hi[a] - origin[a]) / direction[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    return t0 if t0 <= t1 else None


def first_hit(grid, origin, direction):
    """Minimum-entry-distance occupied voxel by testing every voxel AABB."""
    best = None
    s = grid.meta.voxel_size
    for coord in grid.coords:
        lo = grid.meta.origin + coord * s
        t = ray_box_entry(origin, direction, lo, lo + s)
        if t is not None and (best is None or t < best[1]):
            best = (tuple(int(c) for c in coord), t)
    return best


def composite(cloud, cam, background, cutoff_sigma=3.0, z_clip=0.01, reg=0.3):
    """Per-pixel sorted front-to-back compositing, no tiling."""
    covs = cloud.covariances()
    w_rot = cam.rotation.T
    entries = []
    for i in range(len(cloud)):
        p = w_rot @ (cloud.means[i] - cam.origin)
        if p[2] <= z_clip:
            continue
        z = p[2]
        jac = np.array([[cam.fx / z, 0.0, -cam.fx * p[0] / z**2],
                        [0.0, cam.fy / z, -cam.fy * p[1] / z**2]])
        cov2d = jac @ w_rot @ covs[i] @ w_rot.T @ jac.T + reg * np.eye(2)
        mean2d = np.array([cam.fx * p[0] / z + cam.cx,
                           cam.fy * p[1] / z + cam.cy])
        entries.append((z, i, mean2d, np.linalg.inv(cov2d)))
    entries.sort(key=lambda e: (e[0], e[1]))

    color = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    depth_num = np.zeros((cam.height, cam.width))
    depth_den = np.zeros((cam.height, cam.width))
    cutoff2 = cutoff_sigma**2
    for row in range(cam.height):
        for col in range(cam.width):
            pix = np.array([col + 0.5, row + 0.5])
            trans = 1.0
            acc = np.zeros(3)
            for z, i, mean2d, conic in entries:
                d = pix - mean2d
                maha = float(d @ conic @ d)
                if maha > cutoff2:
                    continue
                w = min(cloud.alphas[i] * math.exp(-0.5 * maha), 1.0)
                acc += trans * w * cloud.colors[i]
                depth_num[row, col] += trans * w * z
                depth_den[row, col] += trans * w
                trans *= 1.0 - w
            color[row, col] = acc + trans * background[row, col]
            alpha[row, col] = 1.0 - trans
    return color, alpha, depth_num, depth_den


def nearest_labels(positions, labels):
    """O(n^2) nearest-labeled-neighbor labels, ties to the smallest index."""
    positions = np.asarray(positions, dtype=float)
    labeled = [i for i, l in enumerate(labels) if l >= 0]
    out = np.array(labels, dtype=int)
    for i, lab in enumerate(labels):
        if lab >= 0:
            continue
        best_d, best_j = math.inf, None
        for j in labeled:
            d = float(np.linalg.norm(positions[i] - positions[j]))
            if d < best_d:
                best_d, best_j = d, j
        out[i] = labels[best_j]
    return out


def chamfer(a, b, voxel_size):
    """O(n^2) symmetric voxel Chamfer distance on centroid arrays."""
    def directed(src, dst):
        total = 0.0
        for p in src:
            total += min(float(np.linalg.norm(p - q)) for q in dst)
        return total / len(src)

    return 0.5 * (directed(a, b) + directed(b, a)) / voxel_size


def ssim_reference(a, b, window=11, sigma=1.5, c1=0.01**2, c2=0.03**2):
    """Windowed SSIM computed per window position with explicit loops."""
    x = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    h, w = a.shape
    values = []
    for r in range(h - window + 1):
        for c in range(w - window + 1):
            pa = a[r:r + window, c:c + window]
            pb = b[r:r + window, c:c + window]
            mu_a = float((kernel * pa).sum())
            mu_b = float((kernel * pb).sum())
            var_a = float((kernel * pa * pa).sum()) - mu_a**2
            var_b = float((kernel * pb * pb).sum()) - mu_b**2
            cov = float((kernel * pa * pb).sum()) - mu_a * mu_b
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def unproject(images, cameras, bins, origin, voxel_size, extent):
    """Triple-loop feature accumulation over (image, pixel, bin)."""
    c_dim = images[0].features.shape[2]
    dense = np.zeros(tuple(extent) + (c_dim,))
    dropped = 0
    mids = 0.5 * (bins.edges[:-1] + bins.edges[1:])
    for fmap, cam in zip(images, cameras):
        h, w, d_dim = fmap.depth_probs.shape
        for row in range(h):
            for col in range(w):
                xn = (col + 0.5 - cam.cx) / cam.fx
                yn = (row + 0.5 - cam.cy) / cam.fy
                for d in range(d_dim):
                    z = mids[d]
                    p_cam = np.array([xn * z, yn * z, z])
                    p = cam.rotation @ p_cam + cam.origin
                    ijk = tuple(int(math.floor((p[a] - origin[a]) / voxel_size))
                                for a in range(3))
                    if all(0 <= ijk[a] < extent[a] for a in range(3)):
                        dense[ijk] += fmap.depth_probs[row, col, d] * \
                            fmap.features[row, col]
                    else:
                        dropped += 1
    return dense, dropped


def lidar_trace(means, covs, origin, direction, lam_hit, max_range):
    """Test every Gaussian's ellipsoid; smallest non-negative crossing."""
    best = math.inf
    lam2 = lam_hit**2
    for mean, cov in zip(means, covs):
        prec = np.linalg.inv(cov)
        rel = origin - mean
        a = direction @ prec @ direction
        b = 2.0 * (direction @ prec @ rel)
        c = rel @ prec @ rel - lam2
        disc = b * b - 4 * a * c
        if disc < 0:
            continue
        t_out = (-b + math.sqrt(disc)) / (2 * a)
        if t_out < 0:
            continue
        best = min(best, max((-b - math.sqrt(disc)) / (2 * a), 0.0))
    return best if best <= max_range else math.inf


def point_in_yaw_box(point, center, half_extent, yaw):
    rel = np.asarray(point, dtype=float) - center
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]])
    return bool(np.all(np.abs(local) <= half_extent))
