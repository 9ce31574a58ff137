"""Numba-jitted kernel implementations.

Loop twins of _kernels_numpy with identical signatures and blending
semantics; see that module for the contract. Single-threaded on purpose:
bit-reproducibility of training runs matters more at desk scale than
multicore speed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4


@njit(cache=True)
def bin_gaussians(mean2d, radius, H, W, tile):
    V = mean2d.shape[0]
    ntx = (W + tile - 1) // tile
    nty = (H + tile - 1) // tile
    ntiles = ntx * nty
    tx0 = np.empty(V, np.int64)
    tx1 = np.empty(V, np.int64)
    ty0 = np.empty(V, np.int64)
    ty1 = np.empty(V, np.int64)
    vis = np.zeros(V, np.bool_)
    counts = np.zeros(ntiles, np.int64)
    for g in range(V):
        xlo = mean2d[g, 0] - radius[g]
        xhi = mean2d[g, 0] + radius[g]
        ylo = mean2d[g, 1] - radius[g]
        yhi = mean2d[g, 1] + radius[g]
        if xhi < 0.0 or xlo >= W or yhi < 0.0 or ylo >= H:
            continue
        vis[g] = True
        a = int(math.floor(xlo / tile))
        b = int(math.floor(xhi / tile))
        c = int(math.floor(ylo / tile))
        d = int(math.floor(yhi / tile))
        tx0[g] = min(max(a, 0), ntx - 1)
        tx1[g] = min(max(b, 0), ntx - 1)
        ty0[g] = min(max(c, 0), nty - 1)
        ty1[g] = min(max(d, 0), nty - 1)
        for ty in range(ty0[g], ty1[g] + 1):
            for tx in range(tx0[g], tx1[g] + 1):
                counts[ty * ntx + tx] += 1
    tile_offsets = np.zeros(ntiles + 1, np.int64)
    for t in range(ntiles):
        tile_offsets[t + 1] = tile_offsets[t] + counts[t]
    tile_items = np.empty(tile_offsets[ntiles], np.int64)
    cursor = tile_offsets[:ntiles].copy()
    for g in range(V):  # ascending row order keeps tiles depth-sorted
        if not vis[g]:
            continue
        for ty in range(ty0[g], ty1[g] + 1):
            for tx in range(tx0[g], tx1[g] + 1):
                tid = ty * ntx + tx
                tile_items[cursor[tid]] = g
                cursor[tid] += 1
    return tile_offsets, tile_items


@njit(cache=True)
def blend_forward(H, W, tile, tile_offsets, tile_items,
                  mean2d, conic, alpha, rgb, z, normal, background):
    ntx = (W + tile - 1) // tile
    color = np.empty((H, W, 3))
    depth = np.zeros((H, W))
    normal_img = np.zeros((H, W, 3))
    alpha_map = np.zeros((H, W))
    t_final = np.ones((H, W))
    for r in range(H):
        for cc in range(W):
            for ch in range(3):
                color[r, cc, ch] = background[ch]
    counts = np.zeros(H * W, np.int64)
    ntiles = tile_offsets.shape[0] - 1

    for t in range(ntiles):
        lo = tile_offsets[t]
        hi = tile_offsets[t + 1]
        if hi == lo:
            continue
        ty = t // ntx
        tx = t % ntx
        r0 = ty * tile
        c0 = tx * tile
        bh = min(tile, H - r0)
        bw = min(tile, W - c0)
        for rr in range(bh):
            py = r0 + rr + 0.5
            for cw in range(bw):
                px = c0 + cw + 0.5
                T = 1.0
                c0acc = 0.0
                c1acc = 0.0
                c2acc = 0.0
                dacc = 0.0
                n0acc = 0.0
                n1acc = 0.0
                n2acc = 0.0
                aacc = 0.0
                n = 0
                for it in range(lo, hi):
                    g = tile_items[it]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    sigma = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                        + conic[g, 1] * dx * dy
                    Gv = math.exp(-sigma)
                    ap = alpha[g] * Gv
                    if ap > ALPHA_CLAMP:
                        ap = ALPHA_CLAMP
                    if ap < ALPHA_SKIP:
                        continue
                    Tnext = T * (1.0 - ap)
                    if Tnext < T_STOP:
                        break
                    om = ap * T
                    c0acc += om * rgb[g, 0]
                    c1acc += om * rgb[g, 1]
                    c2acc += om * rgb[g, 2]
                    dacc += om * z[g]
                    n0acc += om * normal[g, 0]
                    n1acc += om * normal[g, 1]
                    n2acc += om * normal[g, 2]
                    aacc += om
                    T = Tnext
                    n += 1
                rpix = r0 + rr
                cpix = c0 + cw
                color[rpix, cpix, 0] = c0acc + T * background[0]
                color[rpix, cpix, 1] = c1acc + T * background[1]
                color[rpix, cpix, 2] = c2acc + T * background[2]
                depth[rpix, cpix] = dacc
                normal_img[rpix, cpix, 0] = n0acc
                normal_img[rpix, cpix, 1] = n1acc
                normal_img[rpix, cpix, 2] = n2acc
                alpha_map[rpix, cpix] = aacc
                t_final[rpix, cpix] = T
                counts[rpix * W + cpix] = n

    ctr_offsets = np.zeros(H * W + 1, np.int64)
    for p in range(H * W):
        ctr_offsets[p + 1] = ctr_offsets[p] + counts[p]
    M = ctr_offsets[H * W]
    ctr_pos = np.empty(M, np.int64)
    ctr_omega = np.empty(M)
    ctr_z = np.empty(M)

    for t in range(ntiles):
        lo = tile_offsets[t]
        hi = tile_offsets[t + 1]
        if hi == lo:
            continue
        ty = t // ntx
        tx = t % ntx
        r0 = ty * tile
        c0 = tx * tile
        bh = min(tile, H - r0)
        bw = min(tile, W - c0)
        for rr in range(bh):
            py = r0 + rr + 0.5
            for cw in range(bw):
                px = c0 + cw + 0.5
                base = ctr_offsets[(r0 + rr) * W + c0 + cw]
                T = 1.0
                n = 0
                for it in range(lo, hi):
                    g = tile_items[it]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    sigma = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                        + conic[g, 1] * dx * dy
                    Gv = math.exp(-sigma)
                    ap = alpha[g] * Gv
                    if ap > ALPHA_CLAMP:
                        ap = ALPHA_CLAMP
                    if ap < ALPHA_SKIP:
                        continue
                    Tnext = T * (1.0 - ap)
                    if Tnext < T_STOP:
                        break
                    ctr_pos[base + n] = g
                    ctr_omega[base + n] = ap * T
                    ctr_z[base + n] = z[g]
                    T = Tnext
                    n += 1

    return (color, depth, normal_img, alpha_map, t_final,
            ctr_offsets, ctr_pos, ctr_omega, ctr_z)


@njit(cache=True)
def blend_backward(H, W, tile, tile_offsets, tile_items, ctr_offsets, ctr_pos,
                   mean2d, conic, alpha, rgb, z, normal, background,
                   dldc, dldd, dldn, dlda, gom_extra, gz_extra):
    V = mean2d.shape[0]
    g_mean2d = np.zeros((V, 2))
    g_conic = np.zeros((V, 3))
    g_alpha = np.zeros(V)
    g_rgb = np.zeros((V, 3))
    g_z = np.zeros(V)
    g_normal = np.zeros((V, 3))
    stat_vec = np.zeros((V, 2))
    stat_norm = np.zeros(V)
    stat_cnt = np.zeros(V, np.int64)
    has_extra = gom_extra.shape[0] > 0

    maxn = 0
    for p in range(H * W):
        n = ctr_offsets[p + 1] - ctr_offsets[p]
        if n > maxn:
            maxn = n
    om_s = np.empty(maxn)
    gom_s = np.empty(maxn)
    T_s = np.empty(maxn)
    ap_s = np.empty(maxn)
    G_s = np.empty(maxn)

    for r in range(H):
        py = r + 0.5
        for ccc in range(W):
            px = ccc + 0.5
            pidx = r * W + ccc
            lo = ctr_offsets[pidx]
            n = ctr_offsets[pidx + 1] - lo
            if n == 0:
                continue
            bgdot = (dldc[r, ccc, 0] * background[0]
                     + dldc[r, ccc, 1] * background[1]
                     + dldc[r, ccc, 2] * background[2])
            T = 1.0
            for j in range(n):
                g = ctr_pos[lo + j]
                dx = px - mean2d[g, 0]
                dy = py - mean2d[g, 1]
                sigma = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                    + conic[g, 1] * dx * dy
                Gv = math.exp(-sigma)
                ap = alpha[g] * Gv
                if ap > ALPHA_CLAMP:
                    ap = ALPHA_CLAMP
                G_s[j] = Gv
                ap_s[j] = ap
                T_s[j] = T
                om = ap * T
                om_s[j] = om
                gm = (dldc[r, ccc, 0] * rgb[g, 0]
                      + dldc[r, ccc, 1] * rgb[g, 1]
                      + dldc[r, ccc, 2] * rgb[g, 2]
                      + dldd[r, ccc] * z[g]
                      + dldn[r, ccc, 0] * normal[g, 0]
                      + dldn[r, ccc, 1] * normal[g, 1]
                      + dldn[r, ccc, 2] * normal[g, 2]
                      + dlda[r, ccc])
                if has_extra:
                    gm += gom_extra[lo + j]
                gom_s[j] = gm
                T = T * (1.0 - ap)
            Tfin = T

            S = 0.0
            for j in range(n - 1, -1, -1):
                g = ctr_pos[lo + j]
                dl_dap = gom_s[j] * T_s[j] - (S + bgdot * Tfin) / (1.0 - ap_s[j])
                S += gom_s[j] * om_s[j]
                if alpha[g] * G_s[j] < ALPHA_CLAMP:
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    g_alpha[g] += dl_dap * G_s[j]
                    dl_dG = dl_dap * alpha[g]
                    dl_dsig = -G_s[j] * dl_dG
                    gsx = dl_dsig * (conic[g, 0] * dx + conic[g, 1] * dy)
                    gsy = dl_dsig * (conic[g, 1] * dx + conic[g, 2] * dy)
                    g_mean2d[g, 0] += -gsx
                    g_mean2d[g, 1] += -gsy
                    g_conic[g, 0] += 0.5 * dx * dx * dl_dsig
                    g_conic[g, 1] += dx * dy * dl_dsig
                    g_conic[g, 2] += 0.5 * dy * dy * dl_dsig
                    sx = -gsx * 0.5 * W
                    sy = -gsy * 0.5 * H
                    stat_vec[g, 0] += sx
                    stat_vec[g, 1] += sy
                    stat_norm[g] += math.sqrt(sx * sx + sy * sy)
                om = om_s[j]
                g_rgb[g, 0] += om * dldc[r, ccc, 0]
                g_rgb[g, 1] += om * dldc[r, ccc, 1]
                g_rgb[g, 2] += om * dldc[r, ccc, 2]
                g_z[g] += om * dldd[r, ccc]
                if has_extra:
                    g_z[g] += gz_extra[lo + j]
                g_normal[g, 0] += om * dldn[r, ccc, 0]
                g_normal[g, 1] += om * dldn[r, ccc, 1]
                g_normal[g, 2] += om * dldn[r, ccc, 2]
                stat_cnt[g] += 1

    return (g_mean2d, g_conic, g_alpha, g_rgb, g_z, g_normal,
            stat_vec, stat_norm, stat_cnt)


@njit(cache=True)
def depth_distortion_records(ctr_offsets, ctr_omega, ctr_z):
    M = ctr_omega.shape[0]
    g_w = np.zeros(M)
    g_z = np.zeros(M)
    loss = 0.0
    npix = ctr_offsets.shape[0] - 1
    for p in range(npix):
        lo = ctr_offsets[p]
        n = ctr_offsets[p + 1] - lo
        if n < 2:
            continue
        # records are depth-ascending within a pixel
        pre_w = 0.0
        pre_wz = 0.0
        tot_w = 0.0
        tot_wz = 0.0
        for j in range(n):
            tot_w += ctr_omega[lo + j]
            tot_wz += ctr_omega[lo + j] * ctr_z[lo + j]
        for j in range(n):
            w = ctr_omega[lo + j]
            zz = ctr_z[lo + j]
            suf_w = tot_w - pre_w - w
            suf_wz = tot_wz - pre_wz - w * zz
            loss += 2.0 * w * (zz * pre_w - pre_wz)
            g_w[lo + j] = 2.0 * (zz * pre_w - pre_wz + suf_wz - zz * suf_w)
            g_z[lo + j] = 2.0 * w * (pre_w - suf_w)
            pre_w += w
            pre_wz += w * zz
    return loss, g_w, g_z


@njit(cache=True)
def tsdf_fuse(tsdf, weight, depth, fx, fy, cx, cy, R, tvec,
              origin, voxel_size, trunc):
    nx, ny, nz = tsdf.shape
    H, W = depth.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                wx = origin[0] + voxel_size * i
                wy = origin[1] + voxel_size * j
                wz = origin[2] + voxel_size * k
                cxx = R[0, 0] * wx + R[0, 1] * wy + R[0, 2] * wz + tvec[0]
                cyy = R[1, 0] * wx + R[1, 1] * wy + R[1, 2] * wz + tvec[1]
                czz = R[2, 0] * wx + R[2, 1] * wy + R[2, 2] * wz + tvec[2]
                if czz <= 1e-9:
                    continue
                u = fx * cxx / czz + cx
                v = fy * cyy / czz + cy
                pu = int(math.floor(u))
                pv = int(math.floor(v))
                if pu < 0 or pu >= W or pv < 0 or pv >= H:
                    continue
                d = depth[pv, pu]
                if d <= 0.0:
                    continue
                sdf = d - czz
                if sdf <= -trunc:
                    continue
                val = sdf / trunc
                if val > 1.0:
                    val = 1.0
                elif val < -1.0:
                    val = -1.0
                w_old = weight[i, j, k]
                tsdf[i, j, k] = (tsdf[i, j, k] * w_old + val) / (w_old + 1.0)
                weight[i, j, k] = w_old + 1.0
    return tsdf, weight
