"""Shared fixtures: cameras, clouds, and the gradient-check scene."""

import numpy as np
import pytest

from splatrank import Camera, GaussianCloud
from splatrank.losses import LossWeights


def axis_camera(size=32, f=40.0, cam_z=-2.4, cx=None, cy=None):
    """Camera on the world z-axis looking along +z.

    world_to_camera is identity rotation with translation (0, 0, -cam_z),
    so a point at world (0, 0, 0) sits at camera depth -cam_z.
    """
    W = np.eye(4)
    W[2, 3] = -cam_z
    if cx is None:
        cx = size / 2.0
    if cy is None:
        cy = size / 2.0
    return Camera(width=size, height=size, fx=f, fy=f, cx=cx, cy=cy,
                  world_to_camera=W)


def centered_camera(size=32, f=40.0, cam_z=-2.0):
    """Like axis_camera but with cx, cy on an exact pixel center."""
    half = size // 2
    return axis_camera(size=size, f=f, cam_z=cam_z,
                       cx=half + 0.5, cy=half + 0.5)


def orbit_camera(position, target=(0.0, 0.0, 0.0), size=64, f=80.0):
    """Camera at `position` looking at `target`, square image."""
    from splatrank.scenes import _look_at

    position = np.asarray(position, dtype=np.float64)
    R = _look_at(position, np.asarray(target, dtype=np.float64))
    W = np.eye(4)
    W[:3, :3] = R
    W[:3, 3] = -R @ position
    return Camera(width=size, height=size, fx=f, fy=f,
                  cx=size / 2.0, cy=size / 2.0, world_to_camera=W)


def sphere_depth(cam, center, radius):
    """Analytic camera-z depth map of a sphere; 0 where the ray misses."""
    center = np.asarray(center, dtype=np.float64)
    rays = cam.pixel_rays()            # camera frame, unit z component
    d = rays @ cam.rotation            # world-frame directions, R^T per pixel
    oc = cam.camera_center - center
    a = np.sum(d * d, axis=-1)
    b = np.sum(d * oc, axis=-1)
    c = float(oc @ oc) - radius * radius
    disc = b * b - a * c
    hit = disc > 0.0
    t = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / a, 0.0)
    return np.where(hit & (t > 0.0), t, 0.0)


def make_cloud(means, raw_scales, rotations=None, raw_opacities=None,
               sh_dc=None, n_coeffs=1):
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    K = means.shape[0]
    raw_scales = np.broadcast_to(
        np.asarray(raw_scales, dtype=np.float64), (K, 3)
    ).copy()
    if rotations is None:
        rotations = np.zeros((K, 4))
        rotations[:, 0] = 1.0
    if raw_opacities is None:
        raw_opacities = np.zeros(K)
    raw_opacities = np.broadcast_to(
        np.asarray(raw_opacities, dtype=np.float64), (K,)
    ).copy()
    sh = np.zeros((K, n_coeffs, 3))
    if sh_dc is not None:
        sh[:, 0, :] = np.asarray(sh_dc, dtype=np.float64)
    return GaussianCloud(means=means, raw_scales=raw_scales,
                         rotations=np.asarray(rotations, dtype=np.float64),
                         raw_opacities=raw_opacities, sh_coeffs=sh)


def random_cloud(rng, count=10, sh_degree=2, spread=0.4, raw_scale_range=(-3.0, -1.5)):
    means = rng.uniform(-spread, spread, size=(count, 3))
    raw_scales = rng.uniform(*raw_scale_range, size=(count, 3))
    rotations = rng.normal(size=(count, 4))
    rotations /= np.linalg.norm(rotations, axis=-1, keepdims=True)
    raw_opacities = rng.uniform(-1.0, 2.0, size=count)
    n_coeffs = (sh_degree + 1) ** 2
    sh = np.zeros((count, n_coeffs, 3))
    sh[:, 0, :] = rng.uniform(-0.6, 0.6, size=(count, 3))
    sh[:, 1:, :] = rng.uniform(-0.15, 0.15, size=(count, n_coeffs - 1, 3))
    return GaussianCloud(means=means, raw_scales=raw_scales,
                         rotations=rotations, raw_opacities=raw_opacities,
                         sh_coeffs=sh)


def gradient_check_scene(seed=0):
    """A 10-Gaussian scene built to keep the total loss smooth at h = 1e-4.

    Every footprint covers the whole 32x32 view so the skip-threshold ring
    stays off screen, opacities sit in (0.23, 0.45) so no alpha clamps or
    early terminations fire, depths are well separated, per-axis raw-scale
    offsets keep the smallest-axis argmin stable, and the target is offset
    from the render so no L1 kink is crossed by a central difference.
    Returns (cloud, camera, target, weights).
    """
    rng = np.random.default_rng(seed)
    K = 10
    cam = axis_camera(size=32, f=40.0, cam_z=-2.4, cx=16.0, cy=16.0)

    means = np.zeros((K, 3))
    means[:, 0] = rng.uniform(-0.25, 0.25, size=K)
    means[:, 1] = rng.uniform(-0.25, 0.25, size=K)
    z = np.linspace(-0.45, 0.45, K)
    rng.shuffle(z)
    means[:, 2] = z

    base = rng.uniform(0.0, 0.25, size=K)
    raw_scales = np.stack(
        [base - 0.05, base + 0.12, base + 0.30], axis=-1
    )
    perm = np.stack([rng.permutation(3) for _ in range(K)])
    raw_scales = np.take_along_axis(raw_scales, perm, axis=-1)

    rotations = rng.normal(size=(K, 4))
    rotations /= np.linalg.norm(rotations, axis=-1, keepdims=True)
    raw_opacities = rng.uniform(-1.2, -0.2, size=K)

    sh = np.zeros((K, 4, 3))
    sh[:, 0, :] = rng.uniform(-0.5, 0.5, size=(K, 3))
    sh[:, 1:, :] = rng.uniform(-0.15, 0.15, size=(K, 3, 3))

    cloud = GaussianCloud(means=means, raw_scales=raw_scales,
                          rotations=rotations, raw_opacities=raw_opacities,
                          sh_coeffs=sh)

    from splatrank.rasterizer import render_forward

    out = render_forward(cloud, cam, background=np.full(3, 0.6))
    jj, ii = np.meshgrid(np.arange(32), np.arange(32))
    checker = np.where(((ii // 8) + (jj // 8)) % 2 == 0, 1.0, -1.0)
    target = np.clip(out.color + 0.12 * checker[..., None], 0.0, 1.0)

    weights = LossWeights(lambda_erank=0.01, epsilon=1e-5,
                          lambda_d=0.05, lambda_n=0.05, erank_start_iter=0)
    return cloud, cam, target, weights


@pytest.fixture
def rng():
    return np.random.default_rng(0)
