"""Adaptive density control: gradient-driven clone/split plus pruning.

Two selection criteria are supported. The original one thresholds the
norm of the accumulated screen-space gradient; the revised one thresholds
the accumulated sum of per-pixel gradient norms, so Gaussians whose
per-pixel gradients cancel (long needles seen from many sides) still
densify. The revised set always contains the original set at equal tau.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gaussians import GaussianCloud, GaussianParams, inverse_sigmoid, quaternion_to_rotation, sigmoid


@dataclass
class DensifyConfig:
    tau: float = 2e-4
    mode: str = "revised"
    densify_interval: int = 100
    prune_opacity: float = 0.005
    percent_dense: float = 0.01
    split_scale_divisor: float = 1.6
    start_iter: int = 450
    end_iter: int = 1500

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.split_scale_divisor <= 1.0:
            raise ConfigError("split_scale_divisor must exceed 1")
        if self.mode not in ("original", "revised"):
            raise ConfigError(f"mode must be 'original' or 'revised', got {self.mode!r}")
        if self.prune_opacity < 0 or self.percent_dense < 0:
            raise ConfigError("thresholds must be non-negative")


class DensifyStats:
    """Per-Gaussian accumulators fed by render_backward across views.

    grad_sum collects the screen-space gradient 2-vectors; sum_of_norms the
    per-pixel norms; observation_count the number of views a Gaussian
    contributed to. world_grad_sum keeps the 3D mean gradient so clones
    know which direction to nudge.
    """

    def __init__(self, count):
        self.grad_sum = np.zeros((count, 2))
        self.sum_of_norms = np.zeros(count)
        self.observation_count = np.zeros(count, dtype=np.int64)
        self.max_screen_radius = np.zeros(count)
        self.world_grad_sum = np.zeros((count, 3))

    @property
    def count(self):
        return self.grad_sum.shape[0]

    def update(self, gbuf, screen_radius=None):
        """Fold one view's GradBuffer into the accumulators."""
        self.grad_sum += gbuf.grad_sum
        self.sum_of_norms += gbuf.sum_of_norms
        self.observation_count += (gbuf.contribution_count > 0).astype(np.int64)
        self.world_grad_sum += gbuf.means
        if screen_radius is not None:
            self.max_screen_radius = np.maximum(self.max_screen_radius, screen_radius)


def densify_mask(stats: DensifyStats, cfg: DensifyConfig):
    """Vector of densify decisions, one per Gaussian."""
    count = np.maximum(stats.observation_count, 1)
    seen = stats.observation_count > 0
    if cfg.mode == "original":
        value = np.linalg.norm(stats.grad_sum, axis=-1) / count
    else:
        value = stats.sum_of_norms / count
    return seen & (value > cfg.tau)


def densify_decision(stats: DensifyStats, cfg: DensifyConfig, k):
    """Single-Gaussian decision; False when never observed."""
    return bool(densify_mask(stats, cfg)[k])


def split_gaussian(g: GaussianParams, divisor, rng):
    """Replace one large Gaussian with two smaller samples of itself.

    Child means are drawn from the parent density; scales shrink by the
    divisor; child opacities halve (activated) so the pair carries the
    parent's opacity budget; rotation and SH copy over.
    """
    R = quaternion_to_rotation(g.rotation)
    s = g.scales
    child_raw_op = float(inverse_sigmoid(np.asarray([g.opacity / 2.0])).item())
    children = []
    for _ in range(2):
        local = rng.standard_normal(3) * s
        mean = g.mean + R @ local
        children.append(
            GaussianParams(
                mean=mean,
                raw_scales=g.raw_scales - np.log(divisor),
                rotation=g.rotation.copy(),
                raw_opacity=child_raw_op,
                sh_coeffs=g.sh_coeffs.copy(),
            )
        )
    return children[0], children[1]


def clone_gaussian(g: GaussianParams, world_grad, scene_extent):
    """Duplicate a small Gaussian, nudging the copy along the gradient.

    The nudge is 0.01 * scene_extent along the accumulated world-space
    positional gradient; a zero gradient leaves an exact duplicate.
    """
    keep = GaussianParams(
        mean=g.mean.copy(), raw_scales=g.raw_scales.copy(),
        rotation=g.rotation.copy(), raw_opacity=g.raw_opacity,
        sh_coeffs=g.sh_coeffs.copy(),
    )
    d = np.asarray(world_grad, dtype=np.float64).reshape(3)
    n = np.linalg.norm(d)
    offset = 0.01 * scene_extent * (d / n) if n > 1e-12 else np.zeros(3)
    moved = GaussianParams(
        mean=g.mean + offset, raw_scales=g.raw_scales.copy(),
        rotation=g.rotation.copy(), raw_opacity=g.raw_opacity,
        sh_coeffs=g.sh_coeffs.copy(),
    )
    return keep, moved


def prune_mask(cloud: GaussianCloud, cfg: DensifyConfig, max_screen_radius, image_diag):
    """Rows to keep: opaque enough and not absurdly large on screen."""
    keep = cloud.opacities >= cfg.prune_opacity
    if image_diag is not None and max_screen_radius is not None:
        keep &= max_screen_radius <= 0.2 * image_diag
    return keep


def densify_and_prune(cloud: GaussianCloud, stats: DensifyStats, cfg: DensifyConfig,
                      scene_extent, image_diag, rng):
    """One ADC step: clone small / split large over-threshold Gaussians, prune.

    Returns (new_cloud, source_rows) where source_rows maps each new row to
    its originating row in the input cloud, or -1 for freshly created rows
    (optimizer moments for those start at zero). Raises if pruning would
    empty the cloud.
    """
    if stats.count != cloud.count:
        raise ValueError("stats length does not match cloud")
    decide = densify_mask(stats, cfg)
    max_scale = np.exp(cloud.raw_scales).max(axis=-1)
    big = max_scale > cfg.percent_dense * scene_extent
    split_sel = decide & big
    clone_sel = decide & ~big

    means = [cloud.means[~split_sel]]
    raws = [cloud.raw_scales[~split_sel]]
    rots = [cloud.rotations[~split_sel]]
    ops = [cloud.raw_opacities[~split_sel]]
    shs = [cloud.sh_coeffs[~split_sel]]
    radii = [stats.max_screen_radius[~split_sel]]
    source = [np.nonzero(~split_sel)[0]]

    for k in np.nonzero(clone_sel)[0]:
        g = GaussianParams(
            mean=cloud.means[k], raw_scales=cloud.raw_scales[k],
            rotation=cloud.rotations[k], raw_opacity=cloud.raw_opacities[k],
            sh_coeffs=cloud.sh_coeffs[k],
        )
        _, moved = clone_gaussian(g, stats.world_grad_sum[k], scene_extent)
        means.append(moved.mean[None])
        raws.append(moved.raw_scales[None])
        rots.append(moved.rotation[None])
        ops.append(np.asarray([moved.raw_opacity]))
        shs.append(moved.sh_coeffs[None])
        radii.append(np.zeros(1))
        source.append(np.asarray([-1], dtype=np.int64))

    for k in np.nonzero(split_sel)[0]:
        g = GaussianParams(
            mean=cloud.means[k], raw_scales=cloud.raw_scales[k],
            rotation=cloud.rotations[k], raw_opacity=cloud.raw_opacities[k],
            sh_coeffs=cloud.sh_coeffs[k],
        )
        for child in split_gaussian(g, cfg.split_scale_divisor, rng):
            means.append(child.mean[None])
            raws.append(child.raw_scales[None])
            rots.append(child.rotation[None])
            ops.append(np.asarray([child.raw_opacity]))
            shs.append(child.sh_coeffs[None])
            radii.append(np.zeros(1))
            source.append(np.asarray([-1], dtype=np.int64))

    grown = GaussianCloud(
        means=np.concatenate(means),
        raw_scales=np.concatenate(raws),
        rotations=np.concatenate(rots),
        raw_opacities=np.concatenate(ops),
        sh_coeffs=np.concatenate(shs),
        version=cloud.version + 1,
    )
    grown_radii = np.concatenate(radii)
    grown_source = np.concatenate(source)

    keep = prune_mask(grown, cfg, grown_radii, image_diag)
    if not keep.any():
        raise ValueError("pruning would remove every Gaussian")
    pruned = GaussianCloud(
        means=grown.means[keep],
        raw_scales=grown.raw_scales[keep],
        rotations=grown.rotations[keep],
        raw_opacities=grown.raw_opacities[keep],
        sh_coeffs=grown.sh_coeffs[keep],
        version=cloud.version + 1,
    )
    return pruned, grown_source[keep]
