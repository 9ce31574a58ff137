"""Pure-numpy kernel implementations.

Same contracts as _kernels_numba, expressed as vectorized per-tile matrix
operations instead of per-pixel loops. Gaussians arrive depth-sorted;
every function works on the sorted row order, and callers map results
back to cloud rows.

Blending semantics shared by both backends:
  alpha' = min(alpha * G, 0.99); contributors with alpha' < 1/255 are
  skipped; a pixel terminates when transmittance would drop below 1e-4,
  excluding the contributor that would cross the line.
"""

from __future__ import annotations

import numpy as np

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4


def bin_gaussians(mean2d, radius, H, W, tile):
    """Assign sorted Gaussians to the 2D tiles their 3-sigma box overlaps.

    Returns (tile_offsets, tile_items): CSR over tiles in row-major order,
    items holding sorted-row indices in depth order within each tile.
    """
    V = mean2d.shape[0]
    ntx = (W + tile - 1) // tile
    nty = (H + tile - 1) // tile
    ntiles = ntx * nty
    if V == 0:
        return np.zeros(ntiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)

    xlo = mean2d[:, 0] - radius
    xhi = mean2d[:, 0] + radius
    ylo = mean2d[:, 1] - radius
    yhi = mean2d[:, 1] + radius
    tx0 = np.clip(np.floor(xlo / tile), 0, ntx - 1).astype(np.int64)
    tx1 = np.clip(np.floor(xhi / tile), 0, ntx - 1).astype(np.int64)
    ty0 = np.clip(np.floor(ylo / tile), 0, nty - 1).astype(np.int64)
    ty1 = np.clip(np.floor(yhi / tile), 0, nty - 1).astype(np.int64)
    visible = (xhi >= 0) & (xlo < W) & (yhi >= 0) & (ylo < H)
    wx = np.where(visible, tx1 - tx0 + 1, 0)
    wy = np.where(visible, ty1 - ty0 + 1, 0)
    reps = wx * wy
    total = int(reps.sum())
    if total == 0:
        return np.zeros(ntiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)

    rows = np.repeat(np.arange(V, dtype=np.int64), reps)
    starts = np.concatenate([[0], np.cumsum(reps)[:-1]])
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, reps)
    wx_r = np.repeat(wx, reps)
    lx = local % np.maximum(wx_r, 1)
    ly = local // np.maximum(wx_r, 1)
    tile_id = (np.repeat(ty0, reps) + ly) * ntx + np.repeat(tx0, reps) + lx

    order = np.argsort(tile_id, kind="stable")  # stable keeps depth order per tile
    tile_items = rows[order]
    counts = np.bincount(tile_id, minlength=ntiles)
    tile_offsets = np.zeros(ntiles + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_offsets[1:])
    return tile_offsets, tile_items


def _tile_weights(r0, c0, bh, bw, mean2d, conic, alpha, items):
    """Per-tile blending state: (dx, dy, G, ap_eff, included, Tprev, Tfin, omega).

    Shapes are (bh, bw, P) for the matrices and (bh, bw) for Tfin. ap_eff is
    the effective alpha' with skipped/terminated contributors zeroed.
    """
    px = c0 + np.arange(bw, dtype=np.float64) + 0.5
    py = r0 + np.arange(bh, dtype=np.float64) + 0.5
    mx = mean2d[items, 0]
    my = mean2d[items, 1]
    a = conic[items, 0]
    b = conic[items, 1]
    c = conic[items, 2]
    dx = px[None, :, None] - mx[None, None, :]
    dy = py[:, None, None] - my[None, None, :]
    sigma = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
    G = np.exp(-sigma)
    ap = np.minimum(alpha[items] * G, ALPHA_CLAMP)
    ap = np.where(ap < ALPHA_SKIP, 0.0, ap)
    # Termination: exclude the contributor that would push T below the stop.
    cumT0 = np.cumprod(1.0 - ap, axis=-1)
    included = (ap > 0.0) & (cumT0 >= T_STOP)
    ap_eff = np.where(included, ap, 0.0)
    cumT = np.cumprod(1.0 - ap_eff, axis=-1)
    Tprev = np.concatenate(
        [np.ones((bh, bw, 1)), cumT[:, :, :-1]], axis=-1
    )
    Tfin = cumT[:, :, -1] if ap.shape[-1] else np.ones((bh, bw))
    omega = ap_eff * Tprev
    return dx, dy, G, ap_eff, included, Tprev, Tfin, omega


def blend_forward(H, W, tile, tile_offsets, tile_items,
                  mean2d, conic, alpha, rgb, z, normal, background):
    """Front-to-back alpha blending of color, depth, normal, and alpha.

    depth and normal images are raw omega-weighted sums (no alpha
    normalization). Also returns per-pixel contributor records as a CSR
    over row-major pixels: (offsets, sorted-row index, omega, depth).
    """
    ntx = (W + tile - 1) // tile
    color = np.ones((H, W, 3)) * np.asarray(background, dtype=np.float64)
    depth = np.zeros((H, W))
    normal_img = np.zeros((H, W, 3))
    alpha_map = np.zeros((H, W))
    t_final = np.ones((H, W))

    pix_list, pos_list, om_list, z_list = [], [], [], []
    for t in range(tile_offsets.shape[0] - 1):
        lo, hi = tile_offsets[t], tile_offsets[t + 1]
        if hi == lo:
            continue
        items = tile_items[lo:hi]
        ty, tx = divmod(t, ntx)
        r0, c0 = ty * tile, tx * tile
        bh = min(tile, H - r0)
        bw = min(tile, W - c0)
        _, _, _, _, included, _, Tfin, omega = _tile_weights(
            r0, c0, bh, bw, mean2d, conic, alpha, items
        )
        blk = slice(r0, r0 + bh), slice(c0, c0 + bw)
        color[blk] = np.einsum("ijp,pc->ijc", omega, rgb[items]) \
            + Tfin[..., None] * np.asarray(background, dtype=np.float64)
        depth[blk] = omega @ z[items]
        normal_img[blk] = np.einsum("ijp,pc->ijc", omega, normal[items])
        alpha_map[blk] = omega.sum(axis=-1)
        t_final[blk] = Tfin

        ii, jj, kk = np.nonzero(included)
        if ii.size:
            pix_list.append((r0 + ii) * W + (c0 + jj))
            pos_list.append(items[kk])
            om_list.append(omega[ii, jj, kk])
            z_list.append(z[items][kk])

    if pix_list:
        pix = np.concatenate(pix_list)
        order = np.argsort(pix, kind="stable")
        ctr_pos = np.concatenate(pos_list)[order]
        ctr_omega = np.concatenate(om_list)[order]
        ctr_z = np.concatenate(z_list)[order]
        counts = np.bincount(pix, minlength=H * W)
    else:
        ctr_pos = np.zeros(0, dtype=np.int64)
        ctr_omega = np.zeros(0)
        ctr_z = np.zeros(0)
        counts = np.zeros(H * W, dtype=np.int64)
    ctr_offsets = np.zeros(H * W + 1, dtype=np.int64)
    np.cumsum(counts, out=ctr_offsets[1:])
    return (color, depth, normal_img, alpha_map, t_final,
            ctr_offsets, ctr_pos, ctr_omega, ctr_z)


def blend_backward(H, W, tile, tile_offsets, tile_items, ctr_offsets, ctr_pos,
                   mean2d, conic, alpha, rgb, z, normal, background,
                   dldc, dldd, dldn, dlda, gom_extra, gz_extra):
    """Analytic gradients of the blended images w.r.t. per-row inputs.

    gom_extra / gz_extra are direct per-contributor gradients on omega and
    depth, aligned with the forward CSR records (ctr_pos is unused here;
    the numba twin walks records through it). Returns per-row gradients
    plus screen-space positional statistics (half-image units): summed
    2-vector, summed norms, and contribution counts.
    """
    V = mean2d.shape[0]
    ntx = (W + tile - 1) // tile
    g_mean2d = np.zeros((V, 2))
    g_conic = np.zeros((V, 3))
    g_alpha = np.zeros(V)
    g_rgb = np.zeros((V, 3))
    g_z = np.zeros(V)
    g_normal = np.zeros((V, 3))
    stat_vec = np.zeros((V, 2))
    stat_norm = np.zeros(V)
    stat_cnt = np.zeros(V, dtype=np.int64)
    bg = np.asarray(background, dtype=np.float64)

    for t in range(tile_offsets.shape[0] - 1):
        lo, hi = tile_offsets[t], tile_offsets[t + 1]
        if hi == lo:
            continue
        items = tile_items[lo:hi]
        ty, tx = divmod(t, ntx)
        r0, c0 = ty * tile, tx * tile
        bh = min(tile, H - r0)
        bw = min(tile, W - c0)
        dx, dy, G, ap_eff, included, Tprev, Tfin, omega = _tile_weights(
            r0, c0, bh, bw, mean2d, conic, alpha, items
        )
        blk = slice(r0, r0 + bh), slice(c0, c0 + bw)
        dc = dldc[blk]
        dd = dldd[blk]
        dn = dldn[blk]
        da = dlda[blk]

        gom = (
            np.einsum("ijc,pc->ijp", dc, rgb[items])
            + dd[..., None] * z[items][None, None, :]
            + np.einsum("ijc,pc->ijp", dn, normal[items])
            + da[..., None]
        )
        # Align CSR extras with this tile's (pixel, contributor) cells.
        rank = np.cumsum(included, axis=-1) - 1
        rows = np.arange(r0, r0 + bh)[:, None, None]
        cols = np.arange(c0, c0 + bw)[None, :, None]
        base = ctr_offsets[(rows * W + cols)]
        pos = np.clip(base + rank, 0, max(gom_extra.shape[0] - 1, 0))
        gz_loc = np.zeros_like(gom)
        if gom_extra.shape[0]:
            gom = gom + np.where(included, gom_extra[pos], 0.0)
            gz_loc = np.where(included, gz_extra[pos], 0.0)

        t_go = gom * omega
        suffix = np.flip(np.cumsum(np.flip(t_go, axis=-1), axis=-1), axis=-1) - t_go
        bgdot = dc @ bg
        dl_dap = np.where(
            included,
            gom * Tprev - (suffix + (bgdot * Tfin)[..., None]) / (1.0 - ap_eff),
            0.0,
        )
        # The clamp stops gradient once alpha * G reaches the ceiling.
        unclamped = included & (alpha[items] * G < ALPHA_CLAMP)
        a = conic[items, 0]
        b = conic[items, 1]
        c = conic[items, 2]
        dl_dG = np.where(unclamped, dl_dap * alpha[items], 0.0)
        dl_dsigma = -G * dl_dG
        gsx = dl_dsigma * (a * dx + b * dy)
        gsy = dl_dsigma * (b * dx + c * dy)

        g_alpha[items] += np.where(unclamped, dl_dap * G, 0.0).sum(axis=(0, 1))
        g_mean2d[items, 0] += (-gsx).sum(axis=(0, 1))
        g_mean2d[items, 1] += (-gsy).sum(axis=(0, 1))
        g_conic[items, 0] += (0.5 * dx * dx * dl_dsigma).sum(axis=(0, 1))
        g_conic[items, 1] += (dx * dy * dl_dsigma).sum(axis=(0, 1))
        g_conic[items, 2] += (0.5 * dy * dy * dl_dsigma).sum(axis=(0, 1))
        g_rgb[items] += np.einsum("ijp,ijc->pc", omega, dc)
        g_z[items] += (omega * dd[..., None]).sum(axis=(0, 1)) + gz_loc.sum(axis=(0, 1))
        g_normal[items] += np.einsum("ijp,ijc->pc", omega, dn)

        sx = -gsx * (0.5 * W)
        sy = -gsy * (0.5 * H)
        stat_vec[items, 0] += sx.sum(axis=(0, 1))
        stat_vec[items, 1] += sy.sum(axis=(0, 1))
        stat_norm[items] += np.hypot(sx, sy).sum(axis=(0, 1))
        stat_cnt[items] += included.sum(axis=(0, 1))

    return (g_mean2d, g_conic, g_alpha, g_rgb, g_z, g_normal,
            stat_vec, stat_norm, stat_cnt)


def depth_distortion_records(ctr_offsets, ctr_omega, ctr_z):
    """Pairwise depth-spread sum over the contributor records of one view.

    Records within a pixel are depth-ascending (forward sorts globally),
    which turns the ordered-pair sum into prefix sums. Returns the
    unweighted loss and its gradients w.r.t. omega and z.
    """
    M = ctr_omega.shape[0]
    g_w = np.zeros(M)
    g_z = np.zeros(M)
    if M == 0:
        return 0.0, g_w, g_z
    counts = np.diff(ctr_offsets)
    pix_of = np.repeat(np.arange(counts.shape[0], dtype=np.int64), counts)
    seg_start = ctr_offsets[pix_of]
    seg_end = ctr_offsets[pix_of + 1]

    exw = np.concatenate([[0.0], np.cumsum(ctr_omega)])
    exwz = np.concatenate([[0.0], np.cumsum(ctr_omega * ctr_z)])
    k = np.arange(M)
    pre_w = exw[k] - exw[seg_start]
    pre_wz = exwz[k] - exwz[seg_start]
    tot_w = exw[seg_end] - exw[seg_start]
    tot_wz = exwz[seg_end] - exwz[seg_start]
    suf_w = tot_w - pre_w - ctr_omega
    suf_wz = tot_wz - pre_wz - ctr_omega * ctr_z

    loss = 2.0 * float(np.sum(ctr_omega * (ctr_z * pre_w - pre_wz)))
    g_w = 2.0 * (ctr_z * pre_w - pre_wz + suf_wz - ctr_z * suf_w)
    g_z = 2.0 * ctr_omega * (pre_w - suf_w)
    return loss, g_w, g_z


def tsdf_fuse(tsdf, weight, depth, fx, fy, cx, cy, R, tvec,
              origin, voxel_size, trunc):
    """Fuse one depth map into a TSDF volume (uniform weight-1 average).

    Grid points sit at origin + index * voxel_size. A point is updated when
    it projects into a pixel with positive depth and its signed distance
    depth - z exceeds -trunc.
    """
    nx, ny, nz = tsdf.shape
    H, W = depth.shape
    ii, jj, kk = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    pts = origin[None, :] + voxel_size * np.stack(
        [ii.ravel(), jj.ravel(), kk.ravel()], axis=-1
    ).astype(np.float64)
    cam = pts @ R.T + tvec
    zc = cam[:, 2]
    ok = zc > 1e-9
    u = np.where(ok, fx * cam[:, 0] / np.where(ok, zc, 1.0) + cx, -1.0)
    v = np.where(ok, fy * cam[:, 1] / np.where(ok, zc, 1.0) + cy, -1.0)
    px = np.floor(u).astype(np.int64)
    py = np.floor(v).astype(np.int64)
    ok &= (px >= 0) & (px < W) & (py >= 0) & (py < H)
    d = np.zeros(pts.shape[0])
    d[ok] = depth[py[ok], px[ok]]
    ok &= d > 0
    sdf = d - zc
    ok &= sdf > -trunc
    val = np.clip(sdf / trunc, -1.0, 1.0)

    flat_t = tsdf.reshape(-1)
    flat_w = weight.reshape(-1)
    w_old = flat_w[ok]
    flat_t[ok] = (flat_t[ok] * w_old + val[ok]) / (w_old + 1.0)
    flat_w[ok] = w_old + 1.0
    return tsdf, weight
