"""Differentiable EWA splatting: forward render and analytic backward pass.

The forward pass projects each Gaussian's covariance through the local
perspective Jacobian, bins the resulting screen ellipses into 16x16 tiles,
and composites front-to-back per pixel. The backward pass replays the
compositing in reverse per tile, producing per-pair gradients that are merged
in fixed pair order, then chained through the projection, covariance,
quaternion and reparameterization steps in vectorized numpy.

Gaussians behind the camera or outside the screen bound are culled; 2-D
covariances are dilated by 0.3 px^2 on the diagonal (the usual low-pass that
keeps sub-pixel splats visible and conics well conditioned).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, StaleCacheError
from ..geometry import CameraIntrinsics, CameraPose, DepthMap
from .kernels import (
    SIGMA_MAX,
    TILE,
    backward_kernel,
    chain_rule_kernel,
    forward_kernel,
    preprocess_kernel,
)
from .scene import GaussianScene

Z_NEAR = 1e-3
COV2D_DILATION = 0.3
DET_MIN = 1e-12
# Screen-space culling radius in standard deviations. Chosen so the bounding
# box ends exactly where the kernel's sigma cutoff already zeroes the
# contribution; the bound itself then never creates gradient discontinuities.
RADIUS_SIGMA = float(np.sqrt(2.0 * SIGMA_MAX))


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray        # (H, W, 3) in [0, 1]
    depth: DepthMap          # alpha-weighted expected depth, valid where alpha > 0
    alpha: np.ndarray        # (H, W) in [0, 1]
    degenerate_count: int = 0


@dataclass
class RenderCache:
    """Everything the backward pass needs from the matching forward pass."""

    scene_arrays: tuple
    intrinsics: CameraIntrinsics
    pose_matrix: np.ndarray
    background: np.ndarray
    vis: np.ndarray          # (M,) indices of visible Gaussians into the scene
    means2d: np.ndarray
    conics: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    depths_z: np.ndarray
    radii: np.ndarray        # (M, 2) screen-space ellipse extents
    cam: np.ndarray          # (M, 3) camera-space centers
    cov_cam: np.ndarray      # (M, 3, 3)
    Rq: np.ndarray           # (M, 3, 3) quaternion rotations
    scales: np.ndarray       # (M, 3)
    qhat: np.ndarray         # (M, 4) normalized quaternions
    qnorm: np.ndarray        # (M,)
    pair_gauss: np.ndarray
    tile_starts: np.ndarray
    n_tiles_x: int
    final_t: np.ndarray
    n_proc: np.ndarray
    alpha: np.ndarray
    depth_raw: np.ndarray


@dataclass(frozen=True)
class ParamGradients:
    """Gradients in the unconstrained parameterizations used by the optimizer."""

    centers: np.ndarray
    colors: np.ndarray
    opacity_logits: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    screen_positions: np.ndarray  # (N, 2) gradient w.r.t. the 2-D splat mean


def _quat_matrices(qhat: np.ndarray) -> np.ndarray:
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    R = np.empty((len(qhat), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _frustum_limits(K: CameraIntrinsics) -> tuple[float, float]:
    # Jacobian evaluation points are clamped to 1.3x the view cone, the
    # usual guard against the EWA linearization exploding near the image
    # plane for points far outside the frustum.
    return 1.3 * 0.5 * K.width / K.fx, 1.3 * 0.5 * K.height / K.fy


def render_cached(
    scene: GaussianScene,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    background=(0.0, 0.0, 0.0),
) -> tuple[RenderOutput, RenderCache]:
    """Forward render that also returns the cache the backward pass needs."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    K = intrinsics
    H, W = K.height, K.width
    n_tiles_x = (W + TILE - 1) // TILE
    n_tiles_y = (H + TILE - 1) // TILE
    n_tiles = n_tiles_x * n_tiles_y

    R, t = pose.rotation, pose.translation
    lim_x, lim_y = _frustum_limits(K)
    cam_a, means2d_a, conics_a, radius_a, opac_a, scales_a, qhat_a, qnorm_a, rq_a, cov_cam_a, status = (
        preprocess_kernel(
            scene.centers.astype(np.float64),
            scene.rotations.astype(np.float64),
            scene.log_scales.astype(np.float64),
            scene.opacity_logits.astype(np.float64),
            R, t, K.fx, K.fy, K.cx, K.cy, W, H,
            Z_NEAR, COV2D_DILATION, DET_MIN, RADIUS_SIGMA, lim_x, lim_y,
        )
    )
    degenerate_count = int(np.count_nonzero(status == 2))
    vis = np.nonzero(status == 1)[0]

    cam = np.ascontiguousarray(cam_a[vis])
    means2d = np.ascontiguousarray(means2d_a[vis])
    conics = np.ascontiguousarray(conics_a[vis])
    opac = np.ascontiguousarray(opac_a[vis])
    colors = np.ascontiguousarray(scene.colors[vis].astype(np.float64))
    depths_z = np.ascontiguousarray(cam[:, 2])
    radii = np.ascontiguousarray(radius_a[vis])

    pair_gauss, tile_starts = _build_pairs(
        means2d, radii, depths_z, n_tiles_x, n_tiles_y
    )

    color, alpha, depth_raw, final_t, n_proc = forward_kernel(
        means2d, conics, opac, colors, depths_z, radii,
        pair_gauss, tile_starts, n_tiles_x, H, W,
    )
    color = color + final_t[:, :, None] * bg

    valid = alpha > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        depth_vals = np.where(valid, depth_raw / np.where(valid, alpha, 1.0), 0.0)
    out = RenderOutput(
        color=color,
        depth=DepthMap(depth_vals, valid),
        alpha=alpha,
        degenerate_count=degenerate_count,
    )
    cache = RenderCache(
        scene_arrays=(
            scene.centers, scene.colors, scene.opacity_logits,
            scene.log_scales, scene.rotations,
        ),
        intrinsics=K,
        pose_matrix=pose.matrix,
        background=bg,
        vis=vis,
        means2d=means2d,
        conics=conics,
        opacities=opac,
        colors=colors,
        depths_z=depths_z,
        radii=radii,
        cam=cam,
        cov_cam=np.ascontiguousarray(cov_cam_a[vis]),
        Rq=np.ascontiguousarray(rq_a[vis]),
        scales=np.ascontiguousarray(scales_a[vis]),
        qhat=np.ascontiguousarray(qhat_a[vis]),
        qnorm=np.ascontiguousarray(qnorm_a[vis]),
        pair_gauss=pair_gauss,
        tile_starts=tile_starts,
        n_tiles_x=n_tiles_x,
        final_t=final_t,
        n_proc=n_proc,
        alpha=alpha,
        depth_raw=depth_raw,
    )
    return out, cache


def _build_pairs(means2d, radii, depths, n_tiles_x, n_tiles_y):
    n_tiles = n_tiles_x * n_tiles_y
    m = len(means2d)
    if m == 0:
        return np.zeros(0, np.int64), np.zeros(n_tiles + 1, np.int64)
    mx, my = means2d[:, 0], means2d[:, 1]
    ru, rv = radii[:, 0], radii[:, 1]
    tx0 = np.clip(np.floor((mx - ru) / TILE), 0, n_tiles_x - 1).astype(np.int64)
    tx1 = np.clip(np.floor((mx + ru) / TILE), 0, n_tiles_x - 1).astype(np.int64)
    ty0 = np.clip(np.floor((my - rv) / TILE), 0, n_tiles_y - 1).astype(np.int64)
    ty1 = np.clip(np.floor((my + rv) / TILE), 0, n_tiles_y - 1).astype(np.int64)
    nx, ny = tx1 - tx0 + 1, ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())

    rep = np.repeat(np.arange(m), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k = np.arange(total) - np.repeat(starts, counts)
    tx = tx0[rep] + k % nx[rep]
    ty = ty0[rep] + k // nx[rep]
    tile_id = ty * n_tiles_x + tx

    # Sort by tile, then camera depth, then Gaussian index (the tie-break).
    order = np.lexsort((rep, depths[rep], tile_id))
    pair_gauss = rep[order]
    tile_starts = np.searchsorted(tile_id[order], np.arange(n_tiles + 1))
    return pair_gauss, tile_starts.astype(np.int64)


def render(
    scene: GaussianScene,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    background=(0.0, 0.0, 0.0),
) -> RenderOutput:
    out, _ = render_cached(scene, intrinsics, pose, background)
    return out


def _check_cache(scene: GaussianScene, intrinsics, pose, cache: RenderCache):
    current = (
        scene.centers, scene.colors, scene.opacity_logits, scene.log_scales, scene.rotations
    )
    if not all(a is b for a, b in zip(current, cache.scene_arrays)):
        raise StaleCacheError("scene parameters changed since the cached forward pass")
    if intrinsics != cache.intrinsics:
        raise StaleCacheError("intrinsics differ from the cached forward pass")
    if not np.array_equal(pose.matrix, cache.pose_matrix):
        raise StaleCacheError("camera pose differs from the cached forward pass")


def render_backward(
    scene: GaussianScene,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    grad_color: np.ndarray,
    grad_depth: np.ndarray | None = None,
    *,
    cache: RenderCache,
) -> ParamGradients:
    """Exact gradients of the cached forward pass for all parameter groups."""
    _check_cache(scene, intrinsics, pose, cache)
    H, W = intrinsics.height, intrinsics.width
    grad_color = np.asarray(grad_color, dtype=np.float64)
    if grad_color.shape != (H, W, 3):
        raise ShapeError(f"grad_color shape {grad_color.shape} != {(H, W, 3)}")

    alpha = cache.alpha
    covered = alpha > 0.0
    if grad_depth is None:
        grad_z_eff = np.zeros((H, W))
        grad_alpha_eff = np.zeros((H, W))
    else:
        grad_depth = np.asarray(grad_depth, dtype=np.float64)
        if grad_depth.shape != (H, W):
            raise ShapeError(f"grad_depth shape {grad_depth.shape} != {(H, W)}")
        safe_alpha = np.where(covered, alpha, 1.0)
        grad_z_eff = np.where(covered, grad_depth / safe_alpha, 0.0)
        grad_alpha_eff = np.where(
            covered, -grad_depth * cache.depth_raw / (safe_alpha * safe_alpha), 0.0
        )

    n = len(scene)
    grads = ParamGradients(
        centers=np.zeros((n, 3)),
        colors=np.zeros((n, 3)),
        opacity_logits=np.zeros(n),
        log_scales=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        screen_positions=np.zeros((n, 2)),
    )
    vis = cache.vis
    m = len(vis)
    if m == 0:
        return grads

    pair_grads = backward_kernel(
        cache.means2d, cache.conics, cache.opacities, cache.colors, cache.depths_z,
        cache.radii, cache.pair_gauss, cache.tile_starts, cache.n_tiles_x, H, W,
        grad_color, grad_z_eff, grad_alpha_eff, cache.final_t, cache.n_proc,
        cache.background,
    )

    g = np.empty((m, 10))
    for col in range(10):
        g[:, col] = np.bincount(cache.pair_gauss, weights=pair_grads[:, col], minlength=m)

    lim_x, lim_y = _frustum_limits(intrinsics)
    g_centers, g_logits, g_log_scales, g_quat = chain_rule_kernel(
        g, cache.cam, cache.conics, cache.cov_cam, cache.Rq, cache.scales,
        cache.qhat, cache.qnorm, cache.opacities,
        pose.rotation, intrinsics.fx, intrinsics.fy, lim_x, lim_y,
    )

    grads.centers[vis] = g_centers
    grads.colors[vis] = g[:, 6:9]
    grads.opacity_logits[vis] = g_logits
    grads.log_scales[vis] = g_log_scales
    grads.rotations[vis] = g_quat
    grads.screen_positions[vis] = g[:, 0:2]
    return grads
