"""Shape and geometry regularization losses with analytic gradients.

The effective-rank loss pushes Gaussians away from needle shapes (erank
near 1) via a log barrier while the additive smallest-scale term keeps
them from fattening into spheres. Depth-distortion and normal-consistency
terms are available as opt-in geometry regularizers; both default to
weight zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .erank import effective_rank, effective_rank_gradient
from .errors import ConfigError


@dataclass
class LossWeights:
    """Weights and schedule for the regularization terms."""

    lambda_erank: float = 0.01
    epsilon: float = 1e-5
    lambda_d: float = 0.0
    lambda_n: float = 0.0
    erank_start_iter: int = 7000

    def __post_init__(self):
        if self.lambda_erank < 0 or self.lambda_d < 0 or self.lambda_n < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.erank_start_iter < 0:
            raise ConfigError("erank_start_iter must be non-negative")


def erank_schedule_active(iteration, w: LossWeights):
    """True once the iteration counter reaches the configured start."""
    return int(iteration) >= int(w.erank_start_iter)


def erank_loss(cloud, w: LossWeights):
    """Sum over Gaussians of lambda * max(-ln(erank - 1 + eps), 0) + s3.

    s3 is the smallest activated scale of each Gaussian. Returns
    (total, per_gaussian, grad_raw_scales) where grad_raw_scales has the
    shape of cloud.raw_scales and chains through the exp activation.
    """
    scales = np.exp(cloud.raw_scales) if hasattr(cloud, "raw_scales") else np.exp(
        np.atleast_2d(np.asarray(cloud, dtype=np.float64))
    )
    E = np.atleast_1d(effective_rank(scales))
    inner = E - 1.0 + w.epsilon
    log_term = -np.log(inner)
    active = log_term > 0.0
    barrier = np.where(active, log_term, 0.0)
    s3 = scales.min(axis=-1)
    per_gaussian = w.lambda_erank * barrier + s3
    total = float(per_gaussian.sum())

    dE_ds = effective_rank_gradient(scales).reshape(scales.shape)
    grad_s = np.where(
        active[:, None], -w.lambda_erank / inner[:, None] * dE_ds, 0.0
    )
    argmin = np.argmin(scales, axis=-1)
    grad_s[np.arange(scales.shape[0]), argmin] += 1.0
    grad_raw = grad_s * scales  # d(exp(raw))/d(raw)
    return total, per_gaussian, grad_raw


def depth_distortion_loss(ray_weights, ray_depths, lambda_d):
    """Pairwise depth spread penalty summed over rays.

    For each ray: lambda_d * sum over ordered pairs (i, j) of
    w_i w_j |z_i - z_j|. Returns (loss, grads_w, grads_z) with the
    gradient lists aligned to the inputs.
    """
    if len(ray_weights) != len(ray_depths):
        raise ValueError("ray_weights and ray_depths must align per ray")
    total = 0.0
    grads_w, grads_z = [], []
    for wts, zs in zip(ray_weights, ray_depths):
        wts = np.asarray(wts, dtype=np.float64).ravel()
        zs = np.asarray(zs, dtype=np.float64).ravel()
        if wts.shape != zs.shape:
            raise ValueError("weight and depth lists must have equal length")
        if wts.size == 0:
            grads_w.append(np.zeros(0))
            grads_z.append(np.zeros(0))
            continue
        dz = zs[:, None] - zs[None, :]
        absdz = np.abs(dz)
        ww = wts[:, None] * wts[None, :]
        total += lambda_d * float((ww * absdz).sum())
        grads_w.append(2.0 * lambda_d * (absdz @ wts))
        grads_z.append(2.0 * lambda_d * wts * (np.sign(dz) @ wts))
    return total, grads_w, grads_z


def normal_consistency_loss(rendered_normals, depth_normals, lambda_n, valid=None):
    """Mean over valid pixels of lambda_n * ||n_rendered - n_depth||.

    Pixels where either map is (near) zero are treated as invalid; an
    explicit mask narrows this further. Returns
    (loss, grad_rendered, grad_depth_normals).
    """
    nr = np.asarray(rendered_normals, dtype=np.float64)
    nd = np.asarray(depth_normals, dtype=np.float64)
    if nr.shape != nd.shape or nr.shape[-1] != 3:
        raise ValueError(f"normal maps must share an (H, W, 3) shape, got {nr.shape} vs {nd.shape}")
    ok = (np.linalg.norm(nr, axis=-1) > 1e-6) & (np.linalg.norm(nd, axis=-1) > 1e-6)
    if valid is not None:
        ok = ok & np.asarray(valid, dtype=bool)
    n_valid = int(ok.sum())
    grad_nr = np.zeros_like(nr)
    grad_nd = np.zeros_like(nd)
    if n_valid == 0:
        warnings.warn("normal_consistency_loss: no valid pixels, returning 0")
        return 0.0, grad_nr, grad_nd
    diff = nr - nd
    dist = np.linalg.norm(diff, axis=-1)
    loss = lambda_n * float(dist[ok].sum()) / n_valid
    # d||diff|| / d diff = diff / ||diff||, zero at the (measure-zero) tip.
    safe = dist > 1e-12
    scale = np.where(ok & safe, lambda_n / (n_valid * np.where(safe, dist, 1.0)), 0.0)
    grad_nr = diff * scale[..., None]
    grad_nd = -grad_nr
    return loss, grad_nr, grad_nd


def depth_to_normal(depth, camera, valid=None):
    """Normals from central differences of back-projected depth.

    Returns (normals, mask) in the camera frame; a fronto-parallel surface
    maps to (0, 0, -1). Boundary pixels and pixels with an invalid
    neighborhood are masked and zeroed.
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    ok = depth > 0
    if valid is not None:
        ok = ok & np.asarray(valid, dtype=bool)
    rays = camera.pixel_rays()
    pts = rays * depth[..., None]

    normals = np.zeros((H, W, 3), dtype=np.float64)
    mask = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return normals, mask

    inner = ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1]
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    raw = np.cross(dv, du)
    norm = np.linalg.norm(raw, axis=-1)
    good = inner & (norm > 1e-12)
    unit = np.zeros_like(raw)
    unit[good] = raw[good] / norm[good][:, None]
    normals[1:-1, 1:-1] = unit
    mask[1:-1, 1:-1] = good
    return normals, mask


def depth_to_normal_backward(depth, camera, dL_dnormals, valid=None):
    """Gradient of depth_to_normal w.r.t. the depth map.

    Recomputes the forward stencil; masked pixels receive no gradient.
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    g = np.asarray(dL_dnormals, dtype=np.float64)
    dL_ddepth = np.zeros_like(depth)
    if H < 3 or W < 3:
        return dL_ddepth

    ok = depth > 0
    if valid is not None:
        ok = ok & np.asarray(valid, dtype=bool)
    rays = camera.pixel_rays()
    pts = rays * depth[..., None]
    inner = ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1]
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    raw = np.cross(dv, du)
    norm = np.linalg.norm(raw, axis=-1)
    good = inner & (norm > 1e-12)

    gin = g[1:-1, 1:-1]
    safe_norm = np.where(good, norm, 1.0)
    unit = np.where(good[..., None], raw / safe_norm[..., None], 0.0)
    # Through the normalization: (g - n (n . g)) / |raw|.
    g_raw = np.where(
        good[..., None],
        (gin - unit * np.sum(unit * gin, axis=-1, keepdims=True)) / safe_norm[..., None],
        0.0,
    )
    # raw = dv x du: adjoints of a cross product.
    g_dv = np.cross(du, g_raw)
    g_du = np.cross(g_raw, dv)

    g_pts = np.zeros((H, W, 3), dtype=np.float64)
    g_pts[1:-1, 2:] += g_du
    g_pts[1:-1, :-2] -= g_du
    g_pts[2:, 1:-1] += g_dv
    g_pts[:-2, 1:-1] -= g_dv
    dL_ddepth = np.sum(g_pts * rays, axis=-1)
    dL_ddepth[~ok] = 0.0
    return dL_ddepth
