"""Numba tile kernels for the rasterizer.

Tiles are processed in parallel; each tile owns its output pixels (forward)
and its slice of the pair-gradient buffer (backward), so results are
bit-stable across thread counts. The buffers are merged afterwards in fixed
pair order on the numpy side.
"""

import numpy as np
from numba import njit, prange

TILE = 16
# Cutoffs sit deep in the tail (1e-8, not the usual 1/255) so that the
# inclusion boundaries they create are invisible at finite-difference scale;
# analytic gradients then match central differences to ~1e-5 absolute.
T_MIN = 1e-8          # stop compositing once transmittance drops below this
ALPHA_MIN = 1e-8      # drop contributions weaker than this
ALPHA_MAX = 0.999     # keep transmittance strictly positive for gradients
SIGMA_MAX = 18.43     # exp(-18.43) < ALPHA_MIN, safe to skip without exp()


# No fastmath here: the degenerate-covariance guard needs exact NaN semantics.
@njit(parallel=True, cache=True)
def preprocess_kernel(
    centers, quats, log_scales, logits, R, t,
    fx, fy, cx, cy, width, height,
    z_near, dilation, det_min, radius_sigma, lim_x, lim_y,
):
    """Project every Gaussian: camera point, screen mean, conic, radius.

    The Jacobian is evaluated at a frustum-clamped point (|x/z| <= lim_x,
    |y/z| <= lim_y) so that Gaussians far outside the view cone cannot blow
    up the linearization and smear across the screen.

    status: 0 = behind camera, 1 = visible, 2 = degenerate covariance,
    3 = off screen.
    """
    n = len(centers)
    cam = np.empty((n, 3))
    means2d = np.empty((n, 2))
    conics = np.empty((n, 3))
    radius = np.zeros((n, 2))
    opac = np.empty(n)
    scales = np.empty((n, 3))
    qhat = np.empty((n, 4))
    qnorm = np.empty(n)
    rq = np.empty((n, 3, 3))
    cov_cam = np.empty((n, 3, 3))
    status = np.zeros(n, dtype=np.uint8)

    for i in prange(n):
        px = centers[i, 0]
        py = centers[i, 1]
        pz = centers[i, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        cam[i, 0] = x
        cam[i, 1] = y
        cam[i, 2] = z
        if z <= z_near:
            continue

        qn = np.sqrt(
            quats[i, 0] ** 2 + quats[i, 1] ** 2 + quats[i, 2] ** 2 + quats[i, 3] ** 2
        )
        qnorm[i] = qn
        qw = quats[i, 0] / qn
        qx = quats[i, 1] / qn
        qy = quats[i, 2] / qn
        qz = quats[i, 3] / qn
        qhat[i, 0] = qw
        qhat[i, 1] = qx
        qhat[i, 2] = qy
        qhat[i, 3] = qz
        rq[i, 0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
        rq[i, 0, 1] = 2.0 * (qx * qy - qw * qz)
        rq[i, 0, 2] = 2.0 * (qx * qz + qw * qy)
        rq[i, 1, 0] = 2.0 * (qx * qy + qw * qz)
        rq[i, 1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
        rq[i, 1, 2] = 2.0 * (qy * qz - qw * qx)
        rq[i, 2, 0] = 2.0 * (qx * qz - qw * qy)
        rq[i, 2, 1] = 2.0 * (qy * qz + qw * qx)
        rq[i, 2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)

        s0 = np.exp(log_scales[i, 0])
        s1 = np.exp(log_scales[i, 1])
        s2 = np.exp(log_scales[i, 2])
        scales[i, 0] = s0
        scales[i, 1] = s1
        scales[i, 2] = s2
        opac[i] = 1.0 / (1.0 + np.exp(-logits[i]))

        # world covariance M M^T with M = Rq diag(s), then to camera frame
        # and through the perspective Jacobian.
        v0 = s0 * s0
        v1 = s1 * s1
        v2 = s2 * s2
        # cw = Rq diag(v) Rq^T (symmetric), then cc = R cw R^T
        cw00 = v0 * rq[i, 0, 0] ** 2 + v1 * rq[i, 0, 1] ** 2 + v2 * rq[i, 0, 2] ** 2
        cw11 = v0 * rq[i, 1, 0] ** 2 + v1 * rq[i, 1, 1] ** 2 + v2 * rq[i, 1, 2] ** 2
        cw22 = v0 * rq[i, 2, 0] ** 2 + v1 * rq[i, 2, 1] ** 2 + v2 * rq[i, 2, 2] ** 2
        cw01 = (
            v0 * rq[i, 0, 0] * rq[i, 1, 0]
            + v1 * rq[i, 0, 1] * rq[i, 1, 1]
            + v2 * rq[i, 0, 2] * rq[i, 1, 2]
        )
        cw02 = (
            v0 * rq[i, 0, 0] * rq[i, 2, 0]
            + v1 * rq[i, 0, 1] * rq[i, 2, 1]
            + v2 * rq[i, 0, 2] * rq[i, 2, 2]
        )
        cw12 = (
            v0 * rq[i, 1, 0] * rq[i, 2, 0]
            + v1 * rq[i, 1, 1] * rq[i, 2, 1]
            + v2 * rq[i, 1, 2] * rq[i, 2, 2]
        )
        # tmp = R @ cw
        t00 = R[0, 0] * cw00 + R[0, 1] * cw01 + R[0, 2] * cw02
        t01 = R[0, 0] * cw01 + R[0, 1] * cw11 + R[0, 2] * cw12
        t02 = R[0, 0] * cw02 + R[0, 1] * cw12 + R[0, 2] * cw22
        t10 = R[1, 0] * cw00 + R[1, 1] * cw01 + R[1, 2] * cw02
        t11 = R[1, 0] * cw01 + R[1, 1] * cw11 + R[1, 2] * cw12
        t12 = R[1, 0] * cw02 + R[1, 1] * cw12 + R[1, 2] * cw22
        t20 = R[2, 0] * cw00 + R[2, 1] * cw01 + R[2, 2] * cw02
        t21 = R[2, 0] * cw01 + R[2, 1] * cw11 + R[2, 2] * cw12
        t22 = R[2, 0] * cw02 + R[2, 1] * cw12 + R[2, 2] * cw22
        cc00 = t00 * R[0, 0] + t01 * R[0, 1] + t02 * R[0, 2]
        cc01 = t00 * R[1, 0] + t01 * R[1, 1] + t02 * R[1, 2]
        cc02 = t00 * R[2, 0] + t01 * R[2, 1] + t02 * R[2, 2]
        cc11 = t10 * R[1, 0] + t11 * R[1, 1] + t12 * R[1, 2]
        cc12 = t10 * R[2, 0] + t11 * R[2, 1] + t12 * R[2, 2]
        cc22 = t20 * R[2, 0] + t21 * R[2, 1] + t22 * R[2, 2]
        cov_cam[i, 0, 0] = cc00
        cov_cam[i, 0, 1] = cc01
        cov_cam[i, 0, 2] = cc02
        cov_cam[i, 1, 0] = cc01
        cov_cam[i, 1, 1] = cc11
        cov_cam[i, 1, 2] = cc12
        cov_cam[i, 2, 0] = cc02
        cov_cam[i, 2, 1] = cc12
        cov_cam[i, 2, 2] = cc22

        # J = [[fx/z, 0, -fx tx/z^2], [0, fy/z, -fy ty/z^2]] at the clamped point
        tx = x
        if tx / z > lim_x:
            tx = lim_x * z
        elif tx / z < -lim_x:
            tx = -lim_x * z
        ty = y
        if ty / z > lim_y:
            ty = lim_y * z
        elif ty / z < -lim_y:
            ty = -lim_y * z
        j00 = fx / z
        j02 = -fx * tx / (z * z)
        j11 = fy / z
        j12 = -fy * ty / (z * z)
        # cov2 = J cc J^T (+ dilation)
        a = (
            j00 * (cc00 * j00 + cc02 * j02)
            + j02 * (cc02 * j00 + cc22 * j02)
            + dilation
        )
        b = j00 * (cc01 * j11 + cc02 * j12) + j02 * (cc12 * j11 + cc22 * j12)
        c = (
            j11 * (cc11 * j11 + cc12 * j12)
            + j12 * (cc12 * j11 + cc22 * j12)
            + dilation
        )
        det = a * c - b * b
        if not np.isfinite(det) or det < det_min:
            status[i] = 2
            continue
        conics[i, 0] = c / det
        conics[i, 1] = -b / det
        conics[i, 2] = a / det
        u = fx * x / z + cx
        v = fy * y / z + cy
        means2d[i, 0] = u
        means2d[i, 1] = v
        # Exact axis-aligned extents of the sigma-cutoff ellipse: the set
        # d^T Q d / 2 <= SIGMA_MAX lies in |du| <= sqrt(2 SIGMA_MAX a),
        # |dv| <= sqrt(2 SIGMA_MAX c). Everything outside skips via the
        # sigma test anyway, so these bounds change nothing but the cost.
        r_u = radius_sigma * np.sqrt(a)
        r_v = radius_sigma * np.sqrt(c)
        radius[i, 0] = r_u
        radius[i, 1] = r_v
        if u + r_u < 0 or u - r_u > width - 1 or v + r_v < 0 or v - r_v > height - 1:
            status[i] = 3
            continue
        status[i] = 1

    return cam, means2d, conics, radius, opac, scales, qhat, qnorm, rq, cov_cam, status


@njit(parallel=True, cache=True, fastmath={'contract', 'arcp', 'reassoc', 'nsz'})
def chain_rule_kernel(
    g10, cam, conics, cov_cam, rq, scales, qhat, qnorm, opac, R, fx, fy, lim_x, lim_y,
):
    """Chain per-Gaussian kernel-space gradients back to scene parameters.

    g10 columns: [d_mu_u, d_mu_v, d_conic_a, d_conic_b, d_conic_c,
    d_opacity, d_color_r, d_color_g, d_color_b, d_z].
    """
    m = len(cam)
    g_centers = np.empty((m, 3))
    g_logits = np.empty(m)
    g_log_scales = np.empty((m, 3))
    g_quat = np.empty((m, 4))

    for i in prange(m):
        x = cam[i, 0]
        y = cam[i, 1]
        z = cam[i, 2]
        qa = conics[i, 0]
        qb = conics[i, 1]
        qc = conics[i, 2]
        ga = g10[i, 2]
        gb = 0.5 * g10[i, 3]
        gc = g10[i, 4]
        # G_sigma = -Q Gq Q with Q = [[qa, qb], [qb, qc]], Gq = [[ga, gb], [gb, gc]]
        m00 = qa * ga + qb * gb
        m01 = qa * gb + qb * gc
        m10 = qb * ga + qc * gb
        m11 = qb * gb + qc * gc
        gs00 = -(m00 * qa + m01 * qb)
        gs01 = -(m00 * qb + m01 * qc)
        gs11 = -(m10 * qb + m11 * qc)

        # Replay the frustum clamp of the Jacobian evaluation point.
        tx = x
        clamped_x = False
        if tx / z > lim_x:
            tx = lim_x * z
            clamped_x = True
        elif tx / z < -lim_x:
            tx = -lim_x * z
            clamped_x = True
        ty = y
        clamped_y = False
        if ty / z > lim_y:
            ty = lim_y * z
            clamped_y = True
        elif ty / z < -lim_y:
            ty = -lim_y * z
            clamped_y = True
        j00 = fx / z
        j02 = -fx * tx / (z * z)
        j11 = fy / z
        j12 = -fy * ty / (z * z)

        cc00 = cov_cam[i, 0, 0]
        cc01 = cov_cam[i, 0, 1]
        cc02 = cov_cam[i, 0, 2]
        cc11 = cov_cam[i, 1, 1]
        cc12 = cov_cam[i, 1, 2]
        cc22 = cov_cam[i, 2, 2]

        # GJ = 2 G_sigma J cov_cam, with J sparse.
        # rows of (J cov_cam): row0 = j00*cc[0,:] + j02*cc[2,:]; row1 = j11*cc[1,:] + j12*cc[2,:]
        jc00 = j00 * cc00 + j02 * cc02
        jc01 = j00 * cc01 + j02 * cc12
        jc02 = j00 * cc02 + j02 * cc22
        jc10 = j11 * cc01 + j12 * cc02
        jc11 = j11 * cc11 + j12 * cc12
        jc12 = j11 * cc12 + j12 * cc22
        gj00 = 2.0 * (gs00 * jc00 + gs01 * jc10)
        gj02 = 2.0 * (gs00 * jc02 + gs01 * jc12)
        gj11 = 2.0 * (gs01 * jc01 + gs11 * jc11)
        gj12 = 2.0 * (gs01 * jc02 + gs11 * jc12)

        # G_cov_cam = J^T G_sigma J (3x3 symmetric, from 2x2 G_sigma).
        gcc00 = j00 * j00 * gs00
        gcc01 = j00 * j11 * gs01
        gcc02 = j00 * (gs00 * j02 + gs01 * j12)
        gcc11 = j11 * j11 * gs11
        gcc12 = j11 * (gs01 * j02 + gs11 * j12)
        gcc22 = j02 * (gs00 * j02 + gs01 * j12) + j12 * (gs01 * j02 + gs11 * j12)

        inv_z2 = 1.0 / (z * z)
        gmu_u = g10[i, 0]
        gmu_v = g10[i, 1]
        # d J02 / dx vanishes when clamped; d J02 / dz loses one factor of 2
        # because tx is then proportional to z.
        jxx = 0.0 if clamped_x else 1.0
        jyy = 0.0 if clamped_y else 1.0
        fac_x = 1.0 if clamped_x else 2.0
        fac_y = 1.0 if clamped_y else 2.0
        gx = gj02 * (-fx * inv_z2) * jxx + gmu_u * fx / z
        gy = gj12 * (-fy * inv_z2) * jyy + gmu_v * fy / z
        gz = (
            gj00 * (-fx * inv_z2)
            + gj11 * (-fy * inv_z2)
            + gj02 * (fac_x * fx * tx / (z * z * z))
            + gj12 * (fac_y * fy * ty / (z * z * z))
            - gmu_u * fx * x * inv_z2
            - gmu_v * fy * y * inv_z2
            + g10[i, 9]
        )
        g_centers[i, 0] = gx * R[0, 0] + gy * R[1, 0] + gz * R[2, 0]
        g_centers[i, 1] = gx * R[0, 1] + gy * R[1, 1] + gz * R[2, 1]
        g_centers[i, 2] = gx * R[0, 2] + gy * R[1, 2] + gz * R[2, 2]

        # G_cov_world = R^T G_cov_cam R (full 3x3; G_cov_cam symmetric).
        # u_rc = sum_j R[j, r] * gcc[j, c] ; gw_ab = sum_c u_ac? -- do directly:
        gw = np.empty((3, 3))
        for aa in range(3):
            u0 = R[0, aa] * gcc00 + R[1, aa] * gcc01 + R[2, aa] * gcc02
            u1 = R[0, aa] * gcc01 + R[1, aa] * gcc11 + R[2, aa] * gcc12
            u2 = R[0, aa] * gcc02 + R[1, aa] * gcc12 + R[2, aa] * gcc22
            for bb in range(3):
                gw[aa, bb] = u0 * R[0, bb] + u1 * R[1, bb] + u2 * R[2, bb]

        # Sigma_world = M M^T with M = Rq diag(s): GM = 2 Gw M.
        s0 = scales[i, 0]
        s1 = scales[i, 1]
        s2 = scales[i, 2]
        gm = np.empty((3, 3))
        for r_ in range(3):
            for k in range(3):
                sk = s0 if k == 0 else (s1 if k == 1 else s2)
                gm[r_, k] = 2.0 * (
                    gw[r_, 0] * rq[i, 0, k] + gw[r_, 1] * rq[i, 1, k] + gw[r_, 2] * rq[i, 2, k]
                ) * sk
        for k in range(3):
            sk = s0 if k == 0 else (s1 if k == 1 else s2)
            gsk = gm[0, k] * rq[i, 0, k] + gm[1, k] * rq[i, 1, k] + gm[2, k] * rq[i, 2, k]
            g_log_scales[i, k] = sk * gsk

        # GR[r, k] = gm[r, k] * s_k
        gr00 = gm[0, 0] * s0
        gr01 = gm[0, 1] * s1
        gr02 = gm[0, 2] * s2
        gr10 = gm[1, 0] * s0
        gr11 = gm[1, 1] * s1
        gr12 = gm[1, 2] * s2
        gr20 = gm[2, 0] * s0
        gr21 = gm[2, 1] * s1
        gr22 = gm[2, 2] * s2

        qw = qhat[i, 0]
        qx = qhat[i, 1]
        qy = qhat[i, 2]
        qz = qhat[i, 3]
        dW = 2.0 * (qx * (gr21 - gr12) + qy * (gr02 - gr20) + qz * (gr10 - gr01))
        dX = 2.0 * (
            qy * (gr10 + gr01) + qz * (gr20 + gr02) + qw * (gr21 - gr12)
        ) - 4.0 * qx * (gr11 + gr22)
        dY = 2.0 * (
            qx * (gr10 + gr01) + qz * (gr21 + gr12) + qw * (gr02 - gr20)
        ) - 4.0 * qy * (gr00 + gr22)
        dZ = 2.0 * (
            qx * (gr20 + gr02) + qy * (gr21 + gr12) + qw * (gr10 - gr01)
        ) - 4.0 * qz * (gr00 + gr11)
        dot = qw * dW + qx * dX + qy * dY + qz * dZ
        qn = qnorm[i]
        g_quat[i, 0] = (dW - qw * dot) / qn
        g_quat[i, 1] = (dX - qx * dot) / qn
        g_quat[i, 2] = (dY - qy * dot) / qn
        g_quat[i, 3] = (dZ - qz * dot) / qn

        o = opac[i]
        g_logits[i] = g10[i, 5] * o * (1.0 - o)

    return g_centers, g_logits, g_log_scales, g_quat


@njit(parallel=True, cache=True, fastmath={'contract', 'arcp', 'reassoc', 'nsz'})
def forward_kernel(
    means2d, conics, opacities, colors, depths, radii,
    pair_gauss, tile_starts, n_tiles_x, height, width,
):
    n_tiles = len(tile_starts) - 1
    out_color = np.zeros((height, width, 3))
    out_alpha = np.zeros((height, width))
    out_depth = np.zeros((height, width))
    final_t = np.ones((height, width))
    n_proc = np.zeros((height, width), dtype=np.int32)

    for tile in prange(n_tiles):
        lo = tile_starts[tile]
        hi = tile_starts[tile + 1]
        if hi == lo:
            continue
        ty = tile // n_tiles_x
        tx = tile - ty * n_tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        m = hi - lo

        # Stage the tile's Gaussian data contiguously.
        mu = np.empty((m, 2))
        co = np.empty((m, 3))
        op = np.empty(m)
        cl = np.empty((m, 3))
        zv = np.empty(m)
        rr = np.empty((m, 2))
        for j in range(m):
            g = pair_gauss[lo + j]
            mu[j, 0] = means2d[g, 0]
            mu[j, 1] = means2d[g, 1]
            co[j, 0] = conics[g, 0]
            co[j, 1] = conics[g, 1]
            co[j, 2] = conics[g, 2]
            op[j] = opacities[g]
            cl[j, 0] = colors[g, 0]
            cl[j, 1] = colors[g, 1]
            cl[j, 2] = colors[g, 2]
            zv[j] = depths[g]
            rr[j, 0] = radii[g, 0]
            rr[j, 1] = radii[g, 1]

        for py in range(y0, y1):
            for px in range(x0, x1):
                t_acc = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                dacc = 0.0
                consumed = m
                for j in range(m):
                    dx = px - mu[j, 0]
                    dy = py - mu[j, 1]
                    # Cheap reject: outside the ellipse's bounding box the
                    # sigma test below would skip anyway.
                    if dx > rr[j, 0] or -dx > rr[j, 0] or dy > rr[j, 1] or -dy > rr[j, 1]:
                        continue
                    sigma = 0.5 * (co[j, 0] * dx * dx + co[j, 2] * dy * dy) + co[j, 1] * dx * dy
                    if sigma > SIGMA_MAX:
                        continue
                    if sigma < 0.0:
                        sigma = 0.0
                    alpha = op[j] * np.exp(-sigma)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    test_t = t_acc * (1.0 - alpha)
                    if test_t < T_MIN:
                        consumed = j
                        break
                    w = alpha * t_acc
                    cr += w * cl[j, 0]
                    cg += w * cl[j, 1]
                    cb += w * cl[j, 2]
                    dacc += w * zv[j]
                    t_acc = test_t
                out_color[py, px, 0] = cr
                out_color[py, px, 1] = cg
                out_color[py, px, 2] = cb
                out_alpha[py, px] = 1.0 - t_acc
                out_depth[py, px] = dacc
                final_t[py, px] = t_acc
                n_proc[py, px] = consumed
    return out_color, out_alpha, out_depth, final_t, n_proc


@njit(parallel=True, cache=True, fastmath={'contract', 'arcp', 'reassoc', 'nsz'})
def backward_kernel(
    means2d, conics, opacities, colors, depths, radii,
    pair_gauss, tile_starts, n_tiles_x, height, width,
    grad_color, grad_z_eff, grad_alpha_eff, final_t, n_proc, background,
):
    """Per-pair parameter gradients, summed over each tile's pixels.

    Column layout: [d_mu_u, d_mu_v, d_conic_a, d_conic_b, d_conic_c,
    d_opacity, d_color_r, d_color_g, d_color_b, d_z].
    """
    n_tiles = len(tile_starts) - 1
    n_pairs = len(pair_gauss)
    pair_grads = np.zeros((n_pairs, 10))

    for tile in prange(n_tiles):
        lo = tile_starts[tile]
        hi = tile_starts[tile + 1]
        if hi == lo:
            continue
        ty = tile // n_tiles_x
        tx = tile - ty * n_tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        m = hi - lo

        mu = np.empty((m, 2))
        co = np.empty((m, 3))
        op = np.empty(m)
        cl = np.empty((m, 3))
        zv = np.empty(m)
        rr = np.empty((m, 2))
        for j in range(m):
            g = pair_gauss[lo + j]
            mu[j, 0] = means2d[g, 0]
            mu[j, 1] = means2d[g, 1]
            co[j, 0] = conics[g, 0]
            co[j, 1] = conics[g, 1]
            co[j, 2] = conics[g, 2]
            op[j] = opacities[g]
            cl[j, 0] = colors[g, 0]
            cl[j, 1] = colors[g, 1]
            cl[j, 2] = colors[g, 2]
            zv[j] = depths[g]
            rr[j, 0] = radii[g, 0]
            rr[j, 1] = radii[g, 1]
        local = np.zeros((m, 10))

        for py in range(y0, y1):
            for px in range(x0, x1):
                consumed = n_proc[py, px]
                if consumed == 0:
                    continue
                gc0 = grad_color[py, px, 0]
                gc1 = grad_color[py, px, 1]
                gc2 = grad_color[py, px, 2]
                gz = grad_z_eff[py, px]
                ga = grad_alpha_eff[py, px]
                t_n = final_t[py, px]
                # Suffix accumulators: contributions behind the current
                # Gaussian, seeded with the background term.
                s0 = t_n * background[0]
                s1 = t_n * background[1]
                s2 = t_n * background[2]
                sz = 0.0
                t_run = t_n
                for j in range(consumed - 1, -1, -1):
                    dx = px - mu[j, 0]
                    dy = py - mu[j, 1]
                    if dx > rr[j, 0] or -dx > rr[j, 0] or dy > rr[j, 1] or -dy > rr[j, 1]:
                        continue
                    sigma = 0.5 * (co[j, 0] * dx * dx + co[j, 2] * dy * dy) + co[j, 1] * dx * dy
                    if sigma > SIGMA_MAX:
                        continue
                    clamped_sigma = False
                    if sigma < 0.0:
                        sigma = 0.0
                        clamped_sigma = True
                    gw = np.exp(-sigma)
                    alpha = op[j] * gw
                    clamped_alpha = False
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                        clamped_alpha = True
                    if alpha < ALPHA_MIN:
                        continue
                    one_m = 1.0 - alpha
                    t_i = t_run / one_m
                    w = alpha * t_i

                    d_alpha = (
                        gc0 * (t_i * cl[j, 0] - s0 / one_m)
                        + gc1 * (t_i * cl[j, 1] - s1 / one_m)
                        + gc2 * (t_i * cl[j, 2] - s2 / one_m)
                        + gz * (t_i * zv[j] - sz / one_m)
                        + ga * (t_n / one_m)
                    )

                    local[j, 6] += w * gc0
                    local[j, 7] += w * gc1
                    local[j, 8] += w * gc2
                    local[j, 9] += w * gz

                    if not clamped_alpha:
                        local[j, 5] += d_alpha * gw
                        if not clamped_sigma:
                            d_sigma = -d_alpha * alpha
                            local[j, 2] += d_sigma * 0.5 * dx * dx
                            local[j, 3] += d_sigma * dx * dy
                            local[j, 4] += d_sigma * 0.5 * dy * dy
                            ddx = d_sigma * (co[j, 0] * dx + co[j, 1] * dy)
                            ddy = d_sigma * (co[j, 1] * dx + co[j, 2] * dy)
                            local[j, 0] -= ddx
                            local[j, 1] -= ddy

                    s0 += w * cl[j, 0]
                    s1 += w * cl[j, 1]
                    s2 += w * cl[j, 2]
                    sz += w * zv[j]
                    t_run = t_i
        pair_grads[lo:hi] = local
    return pair_grads
