"""Gaussian cloud parameters, activations, and spherical-harmonic color.

Parameters are stored raw (log-scales, logit-opacities, unnormalized
quaternions) so gradient steps stay unconstrained; activated values are
derived on demand. All arrays are float64 and row-per-Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateRotationError

# Real spherical-harmonic constants, bands 0..2.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)

PARAM_FIELDS = ("means", "raw_scales", "rotations", "raw_opacities", "sh_coeffs")

RAW_SCALE_MIN = -12.0
RAW_SCALE_MAX = 6.0


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y / (1.0 - y))


def quaternion_to_rotation(q):
    """Rotation matrices from quaternions in (w, x, y, z) order.

    Accepts (4,) or (K, 4); quaternions are normalized internally. A zero
    quaternion has no direction and raises DegenerateRotationError.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[-1] != 4:
        raise ValueError(f"expected quaternions with 4 components, got shape {q.shape}")
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm < 1e-12):
        raise DegenerateRotationError("zero-norm quaternion cannot be normalized")
    w, x, y, z = (q / norm[:, None]).T
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[:, 0, 1] = 2.0 * (x * y - w * z)
    R[:, 0, 2] = 2.0 * (x * z + w * y)
    R[:, 1, 0] = 2.0 * (x * y + w * z)
    R[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[:, 1, 2] = 2.0 * (y * z - w * x)
    R[:, 2, 0] = 2.0 * (x * z - w * y)
    R[:, 2, 1] = 2.0 * (y * z + w * x)
    R[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R[0] if single else R


def rotation_backward(q, dL_dR):
    """Pull a gradient on R(q) back to the raw (unnormalized) quaternion.

    dL_dR has shape (K, 3, 3) matching quaternion_to_rotation(q). The chain
    runs through the internal normalization, so the returned (K, 4) gradient
    is tangent to the unit sphere scaled by 1/|q|.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    dL_dR = np.asarray(dL_dR, dtype=np.float64).reshape(q.shape[0], 3, 3)
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm < 1e-12):
        raise DegenerateRotationError("zero-norm quaternion cannot be normalized")
    u = q / norm[:, None]
    w, x, y, z = u.T
    g = dL_dR

    # dR/d(component) for the unit quaternion, contracted with dL_dR.
    dw = (
        -g[:, 0, 1] * 2 * z + g[:, 0, 2] * 2 * y
        + g[:, 1, 0] * 2 * z - g[:, 1, 2] * 2 * x
        - g[:, 2, 0] * 2 * y + g[:, 2, 1] * 2 * x
    )
    dx = (
        g[:, 0, 1] * 2 * y + g[:, 0, 2] * 2 * z
        + g[:, 1, 0] * 2 * y - g[:, 1, 1] * 4 * x - g[:, 1, 2] * 2 * w
        + g[:, 2, 0] * 2 * z + g[:, 2, 1] * 2 * w - g[:, 2, 2] * 4 * x
    )
    dy = (
        -g[:, 0, 0] * 4 * y + g[:, 0, 1] * 2 * x + g[:, 0, 2] * 2 * w
        + g[:, 1, 0] * 2 * x + g[:, 1, 2] * 2 * z
        - g[:, 2, 0] * 2 * w + g[:, 2, 1] * 2 * z - g[:, 2, 2] * 4 * y
    )
    dz = (
        -g[:, 0, 0] * 4 * z - g[:, 0, 1] * 2 * w + g[:, 0, 2] * 2 * x
        + g[:, 1, 0] * 2 * w - g[:, 1, 1] * 4 * z + g[:, 1, 2] * 2 * y
        + g[:, 2, 0] * 2 * x + g[:, 2, 1] * 2 * y
    )
    dL_du = np.stack([dw, dx, dy, dz], axis=-1)
    # Through u = q / |q|: project out the radial component.
    dL_dq = (dL_du - u * np.sum(u * dL_du, axis=-1, keepdims=True)) / norm[:, None]
    return dL_dq


def build_covariance(raw_scales, rotations):
    """3x3 covariances R diag(exp(raw)^2) R^T from raw log-scales and quaternions."""
    raw_scales = np.atleast_2d(np.asarray(raw_scales, dtype=np.float64))
    R = quaternion_to_rotation(rotations)
    if R.ndim == 2:
        R = R[None]
    s2 = np.exp(2.0 * raw_scales)
    M = R * s2[:, None, :]  # columns of R scaled by s_i^2
    cov = M @ np.swapaxes(R, -1, -2)
    return cov[0] if cov.shape[0] == 1 and np.asarray(raw_scales).size == 3 else cov


def covariance_backward(raw_scales, rotations, dL_dcov):
    """Gradients of sum(dL_dcov * cov) w.r.t. raw log-scales and raw quaternions.

    dL_dcov is (K, 3, 3); it is symmetrized internally since the covariance
    is symmetric by construction.
    """
    raw_scales = np.atleast_2d(np.asarray(raw_scales, dtype=np.float64))
    K = raw_scales.shape[0]
    R = quaternion_to_rotation(rotations).reshape(K, 3, 3)
    G = np.asarray(dL_dcov, dtype=np.float64).reshape(K, 3, 3)
    Gs = 0.5 * (G + np.swapaxes(G, -1, -2))
    s2 = np.exp(2.0 * raw_scales)
    # cov = sum_i s_i^2 r_i r_i^T with r_i the i-th column of R.
    # d cov / d s2_i = r_i r_i^T, and d s2_i / d raw_i = 2 s2_i.
    RtGR = np.swapaxes(R, -1, -2) @ Gs @ R
    diag = np.einsum("kii->ki", RtGR)
    dL_draw = 2.0 * s2 * diag
    # d cov / d R: 2 Gs R diag(s2).
    dL_dRmat = 2.0 * Gs @ (R * s2[:, None, :])
    dL_dq = rotation_backward(np.atleast_2d(rotations), dL_dRmat)
    return dL_draw, dL_dq


def evaluate_density(point, mean, cov):
    """Unnormalized Gaussian density exp(-0.5 d^T cov^-1 d) at one point."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    mean = np.asarray(mean, dtype=np.float64).reshape(3)
    cov = np.asarray(cov, dtype=np.float64).reshape(3, 3)
    d = point - mean
    sol = np.linalg.solve(cov, d)
    return float(np.exp(-0.5 * d @ sol))


def sh_basis(dirs, degree):
    """Real SH basis values for unit directions, bands 0..degree (max 2)."""
    if not 0 <= degree <= 2:
        raise ValueError(f"sh degree must be 0, 1, or 2, got {degree}")
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    B = np.empty((n, (degree + 1) ** 2), dtype=np.float64)
    B[:, 0] = SH_C0
    if degree >= 1:
        B[:, 1] = -SH_C1 * y
        B[:, 2] = SH_C1 * z
        B[:, 3] = -SH_C1 * x
    if degree >= 2:
        B[:, 4] = SH_C2[0] * x * y
        B[:, 5] = SH_C2[1] * y * z
        B[:, 6] = SH_C2[2] * (2.0 * z * z - x * x - y * y)
        B[:, 7] = SH_C2[3] * x * z
        B[:, 8] = SH_C2[4] * (x * x - y * y)
    return B


def sh_basis_gradient(dirs, degree):
    """d(basis)/d(direction): shape (n, n_coeffs, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zeros = np.zeros(n, dtype=np.float64)
    dB = np.zeros((n, (degree + 1) ** 2, 3), dtype=np.float64)
    if degree >= 1:
        dB[:, 1, 1] = -SH_C1
        dB[:, 2, 2] = SH_C1
        dB[:, 3, 0] = -SH_C1
    if degree >= 2:
        dB[:, 4] = SH_C2[0] * np.stack([y, x, zeros], axis=-1)
        dB[:, 5] = SH_C2[1] * np.stack([zeros, z, y], axis=-1)
        dB[:, 6] = SH_C2[2] * np.stack([-2.0 * x, -2.0 * y, 4.0 * z], axis=-1)
        dB[:, 7] = SH_C2[3] * np.stack([z, zeros, x], axis=-1)
        dB[:, 8] = SH_C2[4] * np.stack([2.0 * x, -2.0 * y, zeros], axis=-1)
    return dB


def sh_to_color(sh_coeffs, dirs, degree=None):
    """Evaluate SH color with the +0.5 offset, clamped to [0, 1].

    sh_coeffs: (K, n_coeffs, 3); dirs: (K, 3) unit view directions.
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    if degree is None:
        degree = int(round(np.sqrt(sh_coeffs.shape[1]))) - 1
    B = sh_basis(dirs, degree)
    pre = np.einsum("kc,kcr->kr", B, sh_coeffs[:, : B.shape[1], :]) + 0.5
    return np.clip(pre, 0.0, 1.0)


def sh_color_backward(sh_coeffs, dirs, dL_dcolor, degree=None):
    """Gradients of clamped SH color w.r.t. coefficients and directions.

    The clamp passes gradient only where the pre-clamp value lies in [0, 1].
    Returns (dL_dsh, dL_ddirs).
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    dL_dcolor = np.asarray(dL_dcolor, dtype=np.float64)
    if degree is None:
        degree = int(round(np.sqrt(sh_coeffs.shape[1]))) - 1
    B = sh_basis(dirs, degree)
    nc = B.shape[1]
    pre = np.einsum("kc,kcr->kr", B, sh_coeffs[:, :nc, :]) + 0.5
    g = np.where((pre >= 0.0) & (pre <= 1.0), dL_dcolor, 0.0)
    dL_dsh = np.zeros_like(sh_coeffs)
    dL_dsh[:, :nc, :] = B[:, :, None] * g[:, None, :]
    dB = sh_basis_gradient(dirs, degree)
    # color_r = sum_c B_c sh_{c,r}: direction grad contracts sh against dB.
    dL_ddirs = np.einsum("kr,kcr,kcd->kd", g, sh_coeffs[:, :nc, :], dB)
    return dL_dsh, dL_ddirs


@dataclass
class GaussianParams:
    """One Gaussian's raw parameters, used by split/clone and projection."""

    mean: np.ndarray
    raw_scales: np.ndarray
    rotation: np.ndarray
    raw_opacity: float
    sh_coeffs: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.raw_scales = np.asarray(self.raw_scales, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.raw_opacity = float(self.raw_opacity)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)

    @property
    def scales(self):
        return np.exp(self.raw_scales)

    @property
    def opacity(self):
        return float(sigmoid(np.asarray([self.raw_opacity])).item())


def cloud_row(cloud, k):
    """Extract row k of a cloud as GaussianParams (copies)."""
    return GaussianParams(
        mean=cloud.means[k].copy(),
        raw_scales=cloud.raw_scales[k].copy(),
        rotation=cloud.rotations[k].copy(),
        raw_opacity=float(cloud.raw_opacities[k]),
        sh_coeffs=cloud.sh_coeffs[k].copy(),
    )


@dataclass
class Camera:
    """Pinhole camera: +z forward, x right, y down, pixel centers at +0.5."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("require 0 < near < far")
        W = np.asarray(self.world_to_camera, dtype=np.float64)
        if W.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {W.shape}")
        if not np.allclose(W[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("world_to_camera must have bottom row [0, 0, 0, 1]")
        R = W[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-5):
            raise ValueError("world_to_camera rotation block is not orthonormal")
        self.world_to_camera = W

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    @property
    def camera_center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def transform_points(self, pts):
        """World points (N, 3) to camera coordinates."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self.rotation.T + self.translation

    def project_points(self, pts):
        """World points to pixel coordinates (u, v) plus camera depth z."""
        cam = self.transform_points(pts)
        z = cam[:, 2]
        u = self.fx * cam[:, 0] / z + self.cx
        v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def pixel_rays(self):
        """Unit-z ray directions through every pixel center, camera frame (H, W, 3)."""
        u = (np.arange(self.width, dtype=np.float64) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height, dtype=np.float64) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


@dataclass
class GaussianCloud:
    """Mutable set of 3D Gaussians with raw (pre-activation) parameters."""

    means: np.ndarray          # (K, 3)
    raw_scales: np.ndarray     # (K, 3) log of axis scales
    rotations: np.ndarray      # (K, 4) quaternions (w, x, y, z), not normalized
    raw_opacities: np.ndarray  # (K,) logits
    sh_coeffs: np.ndarray      # (K, n_coeffs, 3)
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.raw_scales = np.ascontiguousarray(self.raw_scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.raw_opacities = np.ascontiguousarray(self.raw_opacities, dtype=np.float64)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64)
        self.validate()

    def validate(self):
        K = self.means.shape[0]
        if self.means.shape != (K, 3):
            raise ValueError(f"means must be (K, 3), got {self.means.shape}")
        if self.raw_scales.shape != (K, 3):
            raise ValueError(f"raw_scales must be (K, 3), got {self.raw_scales.shape}")
        if self.rotations.shape != (K, 4):
            raise ValueError(f"rotations must be (K, 4), got {self.rotations.shape}")
        if self.raw_opacities.shape != (K,):
            raise ValueError(
                f"raw_opacities must be (K,), got {self.raw_opacities.shape}"
            )
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != K or self.sh_coeffs.shape[2] != 3:
            raise ValueError(f"sh_coeffs must be (K, n_coeffs, 3), got {self.sh_coeffs.shape}")
        nc = self.sh_coeffs.shape[1]
        if nc not in (1, 4, 9):
            raise ValueError(f"sh_coeffs second dim must be 1, 4, or 9, got {nc}")

    @property
    def count(self):
        return self.means.shape[0]

    def __len__(self):
        return self.count

    @property
    def max_sh_degree(self):
        return int(round(np.sqrt(self.sh_coeffs.shape[1]))) - 1

    @property
    def scales(self):
        """Activated (positive) axis scales, exp of the raw values."""
        return np.exp(self.raw_scales)

    @property
    def opacities(self):
        return sigmoid(self.raw_opacities)

    @property
    def unit_rotations(self):
        q = self.rotations
        return q / np.linalg.norm(q, axis=-1, keepdims=True)

    def covariances(self):
        return build_covariance(self.raw_scales, self.rotations)

    def parameters(self):
        """Name-to-array view of the raw optimizable fields."""
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self):
        return GaussianCloud(
            means=self.means.copy(),
            raw_scales=self.raw_scales.copy(),
            rotations=self.rotations.copy(),
            raw_opacities=self.raw_opacities.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            version=self.version,
        )

    def bump_version(self):
        self.version += 1

    @classmethod
    def random_init(cls, bbox, count, rng, max_sh_degree=2, colors=None):
        """Seed a cloud with uniform means inside an axis-aligned bbox.

        Scales start isotropic at the log of each point's mean distance to
        its 3 nearest neighbors; opacities at logit(0.1); rotations identity.
        SH is zero apart from the DC term, which encodes `colors` (grey 0.5
        when omitted).
        """
        bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
        if count < 1:
            raise ValueError("count must be at least 1")
        if np.any(bbox[1] <= bbox[0]):
            raise ValueError("bbox max must exceed bbox min on every axis")
        means = rng.uniform(bbox[0], bbox[1], size=(count, 3))
        if count >= 4:
            tree = cKDTree(means)
            dist, _ = tree.query(means, k=4)
            nn = dist[:, 1:].mean(axis=1)
        else:
            diag = np.linalg.norm(bbox[1] - bbox[0])
            nn = np.full(count, 0.05 * diag)
        raw_scales = np.repeat(
            np.log(np.maximum(nn, 1e-7))[:, None], 3, axis=1
        )
        rotations = np.zeros((count, 4), dtype=np.float64)
        rotations[:, 0] = 1.0
        raw_opacities = np.full(count, inverse_sigmoid(0.1), dtype=np.float64)
        n_coeffs = (max_sh_degree + 1) ** 2
        sh = np.zeros((count, n_coeffs, 3), dtype=np.float64)
        if colors is not None:
            colors = np.asarray(colors, dtype=np.float64).reshape(count, 3)
            sh[:, 0, :] = (colors - 0.5) / SH_C0
        return cls(
            means=means,
            raw_scales=raw_scales,
            rotations=rotations,
            raw_opacities=raw_opacities,
            sh_coeffs=sh,
        )
