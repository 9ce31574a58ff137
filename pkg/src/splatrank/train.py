"""Optimization loop: photometric + regularization losses, Adam, ADC.

total_loss_and_grads wires the rasterizer, the erank loss, and the
optional depth-distortion / normal-consistency terms into one analytic
gradient per raw parameter; train() iterates it with per-group learning
rates and adaptive density control.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import correlate1d

from .backend import get_kernels
from .densify import DensifyConfig, DensifyStats, densify_and_prune
from .erank import NEEDLE_ERANK_THRESHOLD, effective_rank
from .errors import ConfigError, TrainingDiverged
from .gaussians import PARAM_FIELDS, RAW_SCALE_MAX, RAW_SCALE_MIN, GaussianCloud
from .losses import (
    LossWeights,
    depth_to_normal,
    depth_to_normal_backward,
    erank_loss,
    erank_schedule_active,
    normal_consistency_loss,
)
from .rasterizer import render_backward, render_forward

_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _ssim_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


_WIN = _ssim_window()


def _blur(img):
    """Separable 11x11 Gaussian correlation with zero padding, per channel."""
    out = correlate1d(img, _WIN, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WIN, axis=1, mode="constant", cval=0.0)


def ssim(x, y):
    """Mean SSIM plus the analytic gradient w.r.t. x. Inputs (H, W, C)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx = _blur(x)
    my = _blur(y)
    ux = _blur(x * x)
    uy = _blur(y * y)
    uxy = _blur(x * y)
    sx = ux - mx * mx
    sy = uy - my * my
    sxy = uxy - mx * my
    A1 = 2.0 * mx * my + _SSIM_C1
    A2 = 2.0 * sxy + _SSIM_C2
    B1 = mx * mx + my * my + _SSIM_C1
    B2 = sx + sy + _SSIM_C2
    S = (A1 * A2) / (B1 * B2)
    mean = float(S.mean())

    n = S.size
    # dS/d(mu_x), dS/d(ux), dS/d(uxy); then pull each back through the blur
    # (the Gaussian window is symmetric, so the correlation is self-adjoint).
    g = np.full_like(S, 1.0 / n)
    d_mx = g * S * (2.0 * my / A1 - 2.0 * mx / B1 - 2.0 * my / A2 + 2.0 * mx / B2)
    d_ux = g * (-S / B2)
    d_uxy = g * (2.0 * S / A2)
    grad_x = _blur(d_mx) + _blur(d_ux) * 2.0 * x + _blur(d_uxy) * y
    return mean, grad_x


def photometric_loss(rendered, target, ssim_weight=0.2):
    """(1 - w) L1 + w (1 - SSIM); returns (loss, gradient w.r.t. rendered)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(
            f"resolution mismatch: {rendered.shape} vs {target.shape}"
        )
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    if ssim_weight == 0.0:
        return l1, grad
    s, gs = ssim(rendered, target)
    loss = (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - s)
    return loss, (1.0 - ssim_weight) * grad - ssim_weight * gs


def psnr(rendered, target, cap=100.0):
    """10 log10(1 / MSE) on [0,1] images, capped for identical inputs."""
    mse = float(np.mean((np.asarray(rendered, dtype=np.float64)
                         - np.asarray(target, dtype=np.float64)) ** 2))
    if mse <= 10 ** (-cap / 10.0):
        return cap
    return float(10.0 * np.log10(1.0 / mse))


class Adam:
    """Per-field Adam with structural resize support for ADC."""

    def __init__(self, cloud, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {f: np.zeros_like(getattr(cloud, f)) for f in PARAM_FIELDS}
        self.v = {f: np.zeros_like(getattr(cloud, f)) for f in PARAM_FIELDS}

    def step(self, cloud, grads, lrs):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for f in PARAM_FIELDS:
            g = grads[f]
            self.m[f] = self.beta1 * self.m[f] + (1.0 - self.beta1) * g
            self.v[f] = self.beta2 * self.v[f] + (1.0 - self.beta2) * g * g
            mhat = self.m[f] / bc1
            vhat = self.v[f] / bc2
            getattr(cloud, f)[...] -= lrs[f] * mhat / (np.sqrt(vhat) + self.eps)

    def remap(self, cloud, source_rows):
        """Rebuild moment rows after densify/prune; new rows start at zero."""
        for f in PARAM_FIELDS:
            new_m = np.zeros_like(getattr(cloud, f))
            new_v = np.zeros_like(getattr(cloud, f))
            old = source_rows >= 0
            new_m[old] = self.m[f][source_rows[old]]
            new_v[old] = self.v[f][source_rows[old]]
            self.m[f] = new_m
            self.v[f] = new_v


def exponential_lr(step, total, lr_init, lr_final):
    if total <= 0:
        return lr_init
    t = min(max(step / total, 0.0), 1.0)
    return float(np.exp(np.log(lr_init) * (1.0 - t) + np.log(lr_final) * t))


@dataclass
class TrainConfig:
    total_iterations: int = 3000
    width: int = 128
    height: int = 128
    lr_mean_init: float = 1.6e-4   # scaled by scene extent
    lr_mean_final: float = 1.6e-6  # scaled by scene extent
    lr_scales: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    sh_rest_divisor: float = 20.0
    ssim_weight: float = 0.2
    loss_weights: LossWeights = field(default_factory=lambda: LossWeights(erank_start_iter=1000))
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    erank_enabled: bool = True
    seed: int = 0
    init_count: int = 2000
    sh_degree: int = 2
    log_interval: int = 100
    snapshot_interval: int = 0  # 0 disables intermediate snapshots
    eval_interval: int = 500
    opacity_reset_interval: int = 0
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ConfigError("total_iterations must be non-negative")
        for name in ("lr_mean_init", "lr_mean_final", "lr_scales",
                     "lr_rotation", "lr_opacity", "lr_sh"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ConfigError("ssim_weight must lie in [0, 1]")


@dataclass
class MetricsRow:
    iteration: int
    loss_photometric: float
    loss_erank: float
    loss_depth_distortion: float
    loss_normal: float
    loss_total: float
    psnr_train: float
    psnr_test: float  # nan when not evaluated this interval
    gaussian_count: int
    needle_count: int
    mean_erank: float
    histogram_ref: str = ""


class MetricsLog:
    COLUMNS = (
        "iteration", "loss_photometric", "loss_erank",
        "loss_depth_distortion", "loss_normal", "loss_total",
        "psnr_train", "psnr_test", "gaussian_count", "needle_count",
        "mean_erank", "histogram_ref",
    )

    def __init__(self):
        self.rows = []

    def append(self, row: MetricsRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("metrics rows must be strictly increasing in iteration")
        self.rows.append(row)

    def lines(self):
        yield ",".join(self.COLUMNS)
        for r in self.rows:
            yield ",".join([
                str(r.iteration),
                repr(r.loss_photometric),
                repr(r.loss_erank),
                repr(r.loss_depth_distortion),
                repr(r.loss_normal),
                repr(r.loss_total),
                repr(r.psnr_train),
                repr(r.psnr_test),
                str(r.gaussian_count),
                str(r.needle_count),
                repr(r.mean_erank),
                r.histogram_ref,
            ])

    def to_csv(self):
        return "\n".join(self.lines()) + "\n"


def total_loss_and_grads(cloud, cam, target, weights: LossWeights,
                         ssim_weight=0.2, erank_active=True, background=None):
    """Assemble the full training loss and its analytic parameter gradients.

    Returns (components dict, GradBuffer, RenderOutput). The depth used by
    the distortion and normal terms is the per-contributor camera depth and
    the alpha-normalized expected depth respectively, both chained exactly.
    """
    out = render_forward(cloud, cam, background=background)
    loss_pho, dldc = photometric_loss(out.color, target, ssim_weight)

    dldd = None
    dlda = None
    dldn_img = None
    gom_extra = None
    gz_extra = None
    loss_dd = 0.0
    loss_nrm = 0.0

    if weights.lambda_d > 0.0 and out.ctr_pos.shape[0] > 0:
        kern = get_kernels()
        raw, g_w, g_z = kern.depth_distortion_records(
            out.ctr_offsets, out.ctr_omega, out.ctr_z
        )
        loss_dd = weights.lambda_d * raw
        gom_extra = weights.lambda_d * g_w
        gz_extra = weights.lambda_d * g_z

    if weights.lambda_n > 0.0:
        cam_R = cam.rotation
        alpha = out.alpha
        valid = alpha > 1e-3
        safe_a = np.where(valid, alpha, 1.0)
        depth_n = np.where(valid, out.depth / safe_a, 0.0)
        nhat, nhat_mask = depth_to_normal(depth_n, cam, valid=valid)

        raw_n = out.normal
        nn = np.linalg.norm(raw_n, axis=-1)
        n_ok = nn > 1e-12
        unit_w = np.where(n_ok[..., None], raw_n / np.where(n_ok, nn, 1.0)[..., None], 0.0)
        nbar_cam = unit_w @ cam_R.T

        pair_ok = nhat_mask & n_ok & valid
        loss_nrm, g_nbar_cam, g_nhat = normal_consistency_loss(
            nbar_cam, nhat, weights.lambda_n, valid=pair_ok
        )
        # Back through the world->camera rotation and the normalization.
        g_unit_w = g_nbar_cam @ cam_R
        dot = np.sum(unit_w * g_unit_w, axis=-1, keepdims=True)
        dldn_img = np.where(
            n_ok[..., None],
            (g_unit_w - unit_w * dot) / np.where(n_ok, nn, 1.0)[..., None],
            0.0,
        )
        # Back through depth_to_normal into the normalized depth, then into
        # the raw depth sum and alpha.
        g_depth_n = depth_to_normal_backward(depth_n, cam, g_nhat, valid=valid)
        dldd = np.where(valid, g_depth_n / safe_a, 0.0)
        dlda = np.where(valid, -g_depth_n * depth_n / safe_a, 0.0)

    loss_er = 0.0
    erank_grad = None
    if erank_active and weights.lambda_erank >= 0.0:
        loss_er, _, erank_grad = erank_loss(cloud, weights)

    gbuf = render_backward(
        cloud, out, dldc,
        dL_ddepth=dldd, dL_dnormal=dldn_img, dL_dalpha=dlda,
        contrib_omega_grad=gom_extra, contrib_z_grad=gz_extra,
    )
    if erank_grad is not None:
        gbuf.raw_scales += erank_grad

    components = {
        "photometric": loss_pho,
        "erank": loss_er if erank_active else 0.0,
        "depth_distortion": loss_dd,
        "normal": loss_nrm,
    }
    components["total"] = (components["photometric"] + components["erank"]
                           + components["depth_distortion"] + components["normal"])
    return components, gbuf, out


def _lrs_for(cloud, cfg: TrainConfig, iteration, scene_extent):
    lr_mean = exponential_lr(
        iteration, cfg.total_iterations,
        cfg.lr_mean_init * scene_extent, cfg.lr_mean_final * scene_extent,
    )
    lr_sh = np.full((1, cloud.sh_coeffs.shape[1], 1), cfg.lr_sh / cfg.sh_rest_divisor)
    lr_sh[0, 0, :] = cfg.lr_sh
    return {
        "means": lr_mean,
        "raw_scales": cfg.lr_scales,
        "rotations": cfg.lr_rotation,
        "raw_opacities": cfg.lr_opacity,
        "sh_coeffs": lr_sh,
    }


def _grads_dict(gbuf):
    return {
        "means": gbuf.means,
        "raw_scales": gbuf.raw_scales,
        "rotations": gbuf.rotations,
        "raw_opacities": gbuf.raw_opacities,
        "sh_coeffs": gbuf.sh_coeffs,
    }


def train(dataset, cfg: TrainConfig, cloud=None, callback=None):
    """Optimize a cloud against a SceneDataset; returns (cloud, MetricsLog).

    The run is deterministic given cfg.seed: view sampling, initialization,
    and split sampling all draw from one seeded generator.
    """
    rng = np.random.default_rng(cfg.seed)
    train_views = dataset.train_views()
    if len(train_views) < 2:
        raise ValueError("need at least 2 training views")
    bbox = np.asarray(dataset.bbox, dtype=np.float64)
    scene_extent = 0.5 * float(np.linalg.norm(bbox[1] - bbox[0]))

    if cloud is None:
        cloud = GaussianCloud.random_init(
            bbox, cfg.init_count, rng, max_sh_degree=cfg.sh_degree
        )
    optimizer = Adam(cloud)
    stats = DensifyStats(cloud.count)
    log = MetricsLog()
    bg = np.asarray(cfg.background, dtype=np.float64)
    cam0 = train_views[0][0]
    image_diag = float(np.hypot(cam0.width, cam0.height))
    dcfg = cfg.densify
    weights = cfg.loss_weights
    mean_erank_window = []

    for it in range(1, cfg.total_iterations + 1):
        vi = int(rng.integers(0, len(train_views)))
        cam, target = train_views[vi]
        active = cfg.erank_enabled and erank_schedule_active(it, weights)
        comps, gbuf, out = total_loss_and_grads(
            cloud, cam, target, weights,
            ssim_weight=cfg.ssim_weight, erank_active=active, background=bg,
        )
        if not np.isfinite(comps["total"]):
            raise TrainingDiverged(
                f"non-finite loss {comps['total']} at iteration {it}"
            )

        optimizer.step(cloud, _grads_dict(gbuf), _lrs_for(cloud, cfg, it, scene_extent))
        np.clip(cloud.raw_scales, RAW_SCALE_MIN, RAW_SCALE_MAX, out=cloud.raw_scales)

        in_window = dcfg.start_iter <= it <= dcfg.end_iter
        if in_window:
            stats.update(gbuf, out.screen_radius_full())
            if it % dcfg.densify_interval == 0:
                cloud, source = densify_and_prune(
                    cloud, stats, dcfg, scene_extent, image_diag, rng
                )
                optimizer.remap(cloud, source)
                stats = DensifyStats(cloud.count)

        if cfg.opacity_reset_interval and it % cfg.opacity_reset_interval == 0:
            ceiling = np.log(0.01 / 0.99)
            np.minimum(cloud.raw_opacities, ceiling, out=cloud.raw_opacities)

        if cfg.log_interval and (it % cfg.log_interval == 0 or it == cfg.total_iterations):
            er = np.atleast_1d(effective_rank(np.exp(cloud.raw_scales)))
            needle_count = int(np.sum(er < NEEDLE_ERANK_THRESHOLD))
            p_test = float("nan")
            if cfg.eval_interval and it % cfg.eval_interval == 0:
                p_test = evaluate(cloud, dataset.test_views(), background=bg)[0]
            log.append(MetricsRow(
                iteration=it,
                loss_photometric=comps["photometric"],
                loss_erank=comps["erank"],
                loss_depth_distortion=comps["depth_distortion"],
                loss_normal=comps["normal"],
                loss_total=comps["total"],
                psnr_train=psnr(out.color, target),
                psnr_test=p_test,
                gaussian_count=cloud.count,
                needle_count=needle_count,
                mean_erank=float(er.mean()),
            ))
            if active:
                mean_erank_window.append((it, float(er.mean())))
                _soft_erank_dynamics_check(mean_erank_window)
        if callback is not None:
            callback(it, cloud, comps)

    return cloud, log


def _soft_erank_dynamics_check(window, span=500):
    """Warn (never fail) if mean erank drifts down while regularized."""
    recent = [(i, e) for i, e in window if i >= window[-1][0] - span]
    if len(recent) >= 2 and recent[-1][1] < recent[0][1] - 0.05:
        warnings.warn(
            "mean effective rank decreased over a regularized window "
            f"({recent[0][1]:.3f} -> {recent[-1][1]:.3f})"
        )


def evaluate(cloud, views, background=None):
    """Mean PSNR over held-out views; returns (mean_psnr, rendered images)."""
    if not views:
        raise ValueError("no views to evaluate")
    images = []
    values = []
    for cam, target in views:
        out = render_forward(cloud, cam, background=background)
        images.append(out.color)
        values.append(psnr(out.color, target))
    return float(np.mean(values)), images
