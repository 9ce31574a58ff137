"""Differentiable tile-based CPU splatting.

Forward: project Gaussians through the camera (EWA affine approximation),
bin into 16x16 tiles, alpha-blend front to back into color, expected
depth, normal, and alpha images, keeping per-pixel contributor records.
Backward: replay the records analytically for exact gradients w.r.t.
every raw Gaussian parameter, plus the screen-space positional statistics
densification reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import get_kernels
from .errors import StaleRecordsError
from .gaussians import (
    Camera,
    GaussianParams,
    build_covariance,
    covariance_backward,
    quaternion_to_rotation,
    rotation_backward,
    sh_color_backward,
    sh_to_color,
)

TILE_SIZE = 16
COV2D_DILATION = 0.3
FRUSTUM_GUARD = 1.3


@dataclass
class Projected2DGaussian:
    """Screen-space footprint of one Gaussian."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: float
    radius: float
    gaussian_index: int


@dataclass
class ProjectedView:
    """Depth-sorted screen-space arrays for the visible subset of a cloud."""

    idx: np.ndarray       # (V,) original cloud rows, depth ascending
    tcam: np.ndarray      # (V, 3) camera-frame positions
    mean2d: np.ndarray    # (V, 2)
    cov2d: np.ndarray     # (V, 2, 2)
    conic: np.ndarray     # (V, 3) upper-triangular (a, b, c) of the inverse
    radius: np.ndarray    # (V,)
    alpha: np.ndarray     # (V,)
    rgb: np.ndarray       # (V, 3)
    normal: np.ndarray    # (V, 3) world-frame, flipped toward the camera
    flip: np.ndarray      # (V,) sign applied to the smallest axis
    axis: np.ndarray      # (V,) index of the smallest-scale axis
    dirs: np.ndarray      # (V, 3) unit view directions (mean - camera center)
    dir_norm: np.ndarray  # (V,)


@dataclass
class RenderOutput:
    """Forward images plus the records backward and the depth losses need."""

    color: np.ndarray
    depth: np.ndarray          # raw omega-weighted depth sum
    normal: np.ndarray         # raw omega-weighted world-normal sum
    alpha: np.ndarray
    t_final: np.ndarray
    ctr_offsets: np.ndarray    # CSR over row-major pixels
    ctr_pos: np.ndarray        # contributor rows into the sorted view arrays
    ctr_omega: np.ndarray
    ctr_z: np.ndarray
    proj: ProjectedView
    camera: Camera
    background: np.ndarray
    cloud_count: int
    cloud_version: int

    @property
    def contributor_gaussians(self):
        """Original cloud indices of the per-pixel contributor records."""
        return self.proj.idx[self.ctr_pos]

    def screen_radius_full(self):
        """Per-cloud-row projected radius in pixels, 0 where culled."""
        r = np.zeros(self.cloud_count)
        r[self.proj.idx] = self.proj.radius
        return r


@dataclass
class GradBuffer:
    """Per-Gaussian parameter gradients and screen-space statistics."""

    means: np.ndarray
    raw_scales: np.ndarray
    rotations: np.ndarray
    raw_opacities: np.ndarray
    sh_coeffs: np.ndarray
    grad_sum: np.ndarray            # (K, 2) summed screen-space gradient
    sum_of_norms: np.ndarray        # (K,) summed per-pixel gradient norms
    contribution_count: np.ndarray  # (K,) pixels touched this view

    @classmethod
    def zeros_for(cls, cloud):
        K = cloud.count
        return cls(
            means=np.zeros((K, 3)),
            raw_scales=np.zeros((K, 3)),
            rotations=np.zeros((K, 4)),
            raw_opacities=np.zeros(K),
            sh_coeffs=np.zeros_like(cloud.sh_coeffs),
            grad_sum=np.zeros((K, 2)),
            sum_of_norms=np.zeros(K),
            contribution_count=np.zeros(K, dtype=np.int64),
        )


def _project_core(means, raw_scales, rotations, cam: Camera):
    """Cull and project raw parameter arrays; returns compacted arrays.

    Culling: camera z outside (near, far], or the projected center outside
    a guard band 1.3x the frustum half-angles.
    """
    R = cam.rotation
    t = cam.translation
    tcam = means @ R.T + t
    tz = tcam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        lim_x = FRUSTUM_GUARD * cam.width / (2.0 * cam.fx)
        lim_y = FRUSTUM_GUARD * cam.height / (2.0 * cam.fy)
        safe = np.where(tz > 0, tz, 1.0)
        valid = (
            (tz > cam.near)
            & (tz <= cam.far)
            & (np.abs(tcam[:, 0] / safe) <= lim_x)
            & (np.abs(tcam[:, 1] / safe) <= lim_y)
        )
    idx = np.nonzero(valid)[0]
    tc = tcam[idx]
    tx, ty, tz = tc[:, 0], tc[:, 1], tc[:, 2]

    cov3d = build_covariance(raw_scales[idx], rotations[idx]).reshape(-1, 3, 3)
    V = idx.shape[0]
    J = np.zeros((V, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * tx / (tz * tz)
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * ty / (tz * tz)
    M = J @ R
    cov2d = M @ cov3d @ np.swapaxes(M, -1, -2)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    conic = np.stack(
        [cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det],
        axis=-1,
    )
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam_max)
    mean2d = np.stack(
        [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy], axis=-1
    )
    return idx, tc, mean2d, cov2d, conic, radius


def project_gaussian(g: GaussianParams, cam: Camera):
    """Project a single Gaussian; returns Projected2DGaussian or None if culled."""
    idx, tc, mean2d, cov2d, conic, radius = _project_core(
        g.mean[None, :], g.raw_scales[None, :], g.rotation[None, :], cam
    )
    if idx.shape[0] == 0:
        return None
    return Projected2DGaussian(
        mean2d=mean2d[0],
        cov2d=cov2d[0],
        conic=conic[0],
        depth=float(tc[0, 2]),
        radius=float(radius[0]),
        gaussian_index=0,
    )


def project_cloud(cloud, cam: Camera):
    """Project a whole cloud and sort the survivors by camera depth."""
    idx, tc, mean2d, cov2d, conic, radius = _project_core(
        cloud.means, cloud.raw_scales, cloud.rotations, cam
    )
    order = np.argsort(tc[:, 2], kind="stable")
    idx = idx[order]
    tc = tc[order]
    mean2d = mean2d[order]
    cov2d = cov2d[order]
    conic = conic[order]
    radius = radius[order]

    center = cam.camera_center
    v = cloud.means[idx] - center
    dir_norm = np.linalg.norm(v, axis=-1)
    dirs = v / np.maximum(dir_norm, 1e-12)[:, None]
    rgb = sh_to_color(cloud.sh_coeffs[idx], dirs, cloud.max_sh_degree)
    alpha = cloud.opacities[idx]

    scales = np.exp(cloud.raw_scales[idx])
    axis = np.argmin(scales, axis=-1)
    R3 = quaternion_to_rotation(cloud.rotations[idx]).reshape(-1, 3, 3)
    n = R3[np.arange(idx.shape[0]), :, axis]
    flip = np.where(np.sum(n * (center - cloud.means[idx]), axis=-1) < 0.0, -1.0, 1.0)
    normal = n * flip[:, None]

    return ProjectedView(
        idx=idx, tcam=tc, mean2d=mean2d, cov2d=cov2d, conic=conic,
        radius=radius, alpha=alpha, rgb=rgb, normal=normal, flip=flip,
        axis=axis, dirs=dirs, dir_norm=dir_norm,
    )


def render_forward(cloud, cam: Camera, background=None):
    """Render color/depth/normal/alpha and keep contributor records."""
    if cloud.count == 0:
        raise ValueError("cannot render an empty cloud")
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    proj = project_cloud(cloud, cam)
    kern = get_kernels()
    tile_offsets, tile_items = kern.bin_gaussians(
        proj.mean2d, proj.radius, cam.height, cam.width, TILE_SIZE
    )
    (color, depth, normal_img, alpha_map, t_final,
     ctr_offsets, ctr_pos, ctr_omega, ctr_z) = kern.blend_forward(
        cam.height, cam.width, TILE_SIZE, tile_offsets, tile_items,
        proj.mean2d, proj.conic, proj.alpha, proj.rgb,
        proj.tcam[:, 2].copy(), proj.normal, bg,
    )
    return RenderOutput(
        color=color, depth=depth, normal=normal_img, alpha=alpha_map,
        t_final=t_final, ctr_offsets=ctr_offsets, ctr_pos=ctr_pos,
        ctr_omega=ctr_omega, ctr_z=ctr_z, proj=proj, camera=cam,
        background=bg, cloud_count=cloud.count, cloud_version=cloud.version,
    )


def render_backward(cloud, out: RenderOutput, dL_dcolor,
                    dL_ddepth=None, dL_dnormal=None, dL_dalpha=None,
                    contrib_omega_grad=None, contrib_z_grad=None):
    """Analytic gradients of a rendered view w.r.t. all cloud parameters.

    dL_ddepth and contrib_z_grad act on the raw omega-weighted depth sum
    and the per-contributor depths; dL_dnormal acts on the raw blended
    world normal; contrib_omega_grad adds per-contributor-record gradients
    (depth-distortion plumbing). Raises StaleRecordsError if the cloud was
    restructured after the forward pass.
    """
    if cloud.count != out.cloud_count or cloud.version != out.cloud_version:
        raise StaleRecordsError(
            "contributor records are stale: cloud changed since render_forward"
        )
    cam = out.camera
    H, W = cam.height, cam.width
    proj = out.proj
    V = proj.idx.shape[0]
    gbuf = GradBuffer.zeros_for(cloud)

    dldc = np.ascontiguousarray(dL_dcolor, dtype=np.float64)
    dldd = np.zeros((H, W)) if dL_ddepth is None else np.ascontiguousarray(dL_ddepth, dtype=np.float64)
    dldn = np.zeros((H, W, 3)) if dL_dnormal is None else np.ascontiguousarray(dL_dnormal, dtype=np.float64)
    dlda = np.zeros((H, W)) if dL_dalpha is None else np.ascontiguousarray(dL_dalpha, dtype=np.float64)
    M = out.ctr_pos.shape[0]
    gom_extra = (np.zeros(0) if contrib_omega_grad is None
                 else np.ascontiguousarray(contrib_omega_grad, dtype=np.float64))
    gz_extra = (np.zeros(M) if contrib_z_grad is None
                else np.ascontiguousarray(contrib_z_grad, dtype=np.float64))
    if gom_extra.shape[0] == 0 and gz_extra.any():
        gom_extra = np.zeros(M)

    if V == 0:
        return gbuf

    kern = get_kernels()
    tile_offsets, tile_items = kern.bin_gaussians(
        proj.mean2d, proj.radius, H, W, TILE_SIZE
    )
    (g_mean2d, g_conic, g_alpha, g_rgb, g_z, g_normal,
     stat_vec, stat_norm, stat_cnt) = kern.blend_backward(
        H, W, TILE_SIZE, tile_offsets, tile_items,
        out.ctr_offsets, out.ctr_pos,
        proj.mean2d, proj.conic, proj.alpha, proj.rgb,
        proj.tcam[:, 2].copy(), proj.normal, out.background,
        dldc, dldd, dldn, dlda, gom_extra, gz_extra,
    )

    idx = proj.idx
    # Opacity through the sigmoid.
    a_act = proj.alpha
    gbuf.raw_opacities[idx] = g_alpha * a_act * (1.0 - a_act)

    # Color through SH and the view direction back to the mean.
    dL_dsh, dL_ddir = sh_color_backward(
        cloud.sh_coeffs[idx], proj.dirs, g_rgb, cloud.max_sh_degree
    )
    gbuf.sh_coeffs[idx] = dL_dsh
    dot = np.sum(proj.dirs * dL_ddir, axis=-1, keepdims=True)
    gbuf.means[idx] += (dL_ddir - proj.dirs * dot) / proj.dir_norm[:, None]

    # Blended normal back to the rotation (axis choice and flip held fixed).
    dL_dR_n = np.zeros((V, 3, 3))
    dL_dR_n[np.arange(V), :, proj.axis] = g_normal * proj.flip[:, None]
    gbuf.rotations[idx] += rotation_backward(cloud.rotations[idx], dL_dR_n)

    # Conic (inverse 2D covariance) back to the 2D covariance.
    dC = np.empty((V, 2, 2))
    dC[:, 0, 0] = g_conic[:, 0]
    dC[:, 0, 1] = 0.5 * g_conic[:, 1]
    dC[:, 1, 0] = 0.5 * g_conic[:, 1]
    dC[:, 1, 1] = g_conic[:, 2]
    Cm = np.empty((V, 2, 2))
    Cm[:, 0, 0] = proj.conic[:, 0]
    Cm[:, 0, 1] = proj.conic[:, 1]
    Cm[:, 1, 0] = proj.conic[:, 1]
    Cm[:, 1, 1] = proj.conic[:, 2]
    d_cov2d = -Cm @ dC @ Cm

    # 2D covariance back through M = J W to the 3D covariance and J.
    R = cam.rotation
    tx, ty, tz = proj.tcam[:, 0], proj.tcam[:, 1], proj.tcam[:, 2]
    J = np.zeros((V, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * tx / (tz * tz)
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * ty / (tz * tz)
    Mmat = J @ R
    cov3d = build_covariance(cloud.raw_scales[idx], cloud.rotations[idx]).reshape(-1, 3, 3)
    d_cov3d = np.swapaxes(Mmat, -1, -2) @ d_cov2d @ Mmat
    dM = 2.0 * d_cov2d @ Mmat @ cov3d
    dJ = dM @ R.T

    # J entries back to the camera-frame position.
    dtx = dJ[:, 0, 2] * (-cam.fx / (tz * tz))
    dty = dJ[:, 1, 2] * (-cam.fy / (tz * tz))
    dtz = (
        dJ[:, 0, 0] * (-cam.fx / (tz * tz))
        + dJ[:, 1, 1] * (-cam.fy / (tz * tz))
        + dJ[:, 0, 2] * (2.0 * cam.fx * tx / (tz ** 3))
        + dJ[:, 1, 2] * (2.0 * cam.fy * ty / (tz ** 3))
    )
    # Projected center and the depth channel.
    dtx += g_mean2d[:, 0] * cam.fx / tz
    dtz += g_mean2d[:, 0] * (-cam.fx * tx / (tz * tz))
    dty += g_mean2d[:, 1] * cam.fy / tz
    dtz += g_mean2d[:, 1] * (-cam.fy * ty / (tz * tz))
    dtz += g_z
    dt = np.stack([dtx, dty, dtz], axis=-1)
    gbuf.means[idx] += dt @ R

    # 3D covariance back to raw scales and quaternions.
    ds, dq = covariance_backward(
        cloud.raw_scales[idx], cloud.rotations[idx], d_cov3d
    )
    gbuf.raw_scales[idx] += ds
    gbuf.rotations[idx] += dq

    gbuf.grad_sum[idx] = stat_vec
    gbuf.sum_of_norms[idx] = stat_norm
    gbuf.contribution_count[idx] = stat_cnt
    return gbuf


def render_depth_normal(cloud, cam: Camera, background=None):
    """Geometry-only render: normalized expected depth, unit normals, validity.

    Depth is the omega-weighted sum divided by alpha where alpha > 1e-3;
    other pixels are 0 and masked invalid. Normals are unit world-frame
    vectors under the same mask.
    """
    out = render_forward(cloud, cam, background=background)
    valid = out.alpha > 1e-3
    depth = np.where(valid, out.depth / np.where(valid, out.alpha, 1.0), 0.0)
    nrm = np.linalg.norm(out.normal, axis=-1)
    unit_ok = valid & (nrm > 1e-12)
    normal = np.where(
        unit_ok[..., None], out.normal / np.where(unit_ok, nrm, 1.0)[..., None], 0.0
    )
    return depth, normal, valid
