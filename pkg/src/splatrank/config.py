"""Flat text configuration for training runs.

One `key = value` pair per line, `#` comments, dotted prefixes for grouping.
Every key has a default, so an empty file is a runnable configuration (it
trains a generated cube scene into ``runs/default``). Several keys accept the
literal ``auto``: the erank schedule starts at one third of the run,
densification spans 15% to 50% of it, the densify mode follows the erank
toggle, and the densify threshold is matched to whichever mode was picked.
"""

from __future__ import annotations

from dataclasses import dataclass

from .densify import DensifyConfig
from .errors import ConfigError
from .losses import LossWeights
from .train import TrainConfig


def _to_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_rgb(s: str):
    parts = [float(p) for p in s.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError(f"background needs 1 or 3 components, got {s!r}")
    return tuple(parts)


# Mode-matched densification thresholds used when densify.tau is 'auto'.
# The revised statistic sums per-pixel gradient magnitudes, so cancellation
# across a Gaussian's footprint never shrinks it; on matched runs it sits
# roughly an order of magnitude above the summed-vector norm at the median,
# and the threshold has to scale with it for the two modes to select
# populations of comparable size.
TAU_ORIGINAL = 2e-4
TAU_REVISED = 2e-3

# key -> (default as text, converter, description)
DEFAULTS = {
    "io.dataset": ("", str, "dataset directory; empty generates scene.* on the fly"),
    "io.out_dir": ("runs/default", str, "output directory for checkpoint and metrics"),
    "scene.kind": ("cube", str, "generated scene kind when io.dataset is empty"),
    "scene.views": ("16", int, "number of generated views"),
    "scene.resolution": ("128", int, "generated image side length"),
    "scene.seed": ("0", int, "scene generation seed"),
    "train.iterations": ("3000", int, "optimization steps"),
    "train.seed": ("0", int, "training seed (init + view sampling + splits)"),
    "train.init_count": ("2000", int, "random initialization size"),
    "train.sh_degree": ("2", int, "max spherical harmonic degree (0-2)"),
    "train.ssim_weight": ("0.2", float, "SSIM share of the photometric loss"),
    "train.erank_enabled": ("true", _to_bool, "toggle the erank regularizer"),
    "train.background": ("1,1,1", _to_rgb, "compositing background color"),
    "train.log_interval": ("100", int, "metrics row every N iterations"),
    "train.eval_interval": ("500", int, "test-split PSNR every N iterations"),
    "train.snapshot_interval": ("0", int, "intermediate checkpoints (0 = off)"),
    "train.opacity_reset_interval": ("0", int, "opacity clamp-down period (0 = off)"),
    "train.lr_mean_init": ("1.6e-4", float, "mean lr at step 0, times scene extent"),
    "train.lr_mean_final": ("1.6e-6", float, "mean lr at the end, times scene extent"),
    "train.lr_scales": ("5e-3", float, "log-scale learning rate"),
    "train.lr_rotation": ("1e-3", float, "quaternion learning rate"),
    "train.lr_opacity": ("5e-2", float, "opacity logit learning rate"),
    "train.lr_sh": ("2.5e-3", float, "DC color learning rate"),
    "train.sh_rest_divisor": ("20", float, "higher-order SH lr = lr_sh / this"),
    "loss.lambda_erank": ("0.01", float, "erank barrier weight"),
    "loss.epsilon": ("1e-5", float, "erank barrier epsilon"),
    "loss.lambda_d": ("0", float, "depth-distortion weight (0 = off)"),
    "loss.lambda_n": ("0", float, "normal-consistency weight (0 = off)"),
    "loss.erank_start": ("auto", str, "first regularized iteration; auto = iterations/3"),
    "densify.tau": ("auto", str,
                    "densification threshold; auto = 2e-4 original, 2e-3 revised"),
    "densify.mode": ("auto", str,
                     "original | revised | auto (revised when erank is enabled)"),
    "densify.interval": ("100", int, "densify/prune period inside the window"),
    "densify.prune_opacity": ("0.005", float, "prune below this activated opacity"),
    "densify.percent_dense": ("0.01", float,
                              "split/clone size boundary as a fraction of extent"),
    "densify.split_divisor": ("1.6", float, "scale shrink factor for split children"),
    "densify.start": ("auto", str, "window start; auto = 0.15 * iterations"),
    "densify.end": ("auto", str, "window end; auto = 0.5 * iterations"),
}


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines into a raw string dict. Unknown keys fail."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def default_config_text() -> str:
    """A fully commented config file holding every default."""
    lines = ["# every key is optional; these are the defaults"]
    prefix = None
    for key, (default, _, description) in DEFAULTS.items():
        section = key.split(".", 1)[0]
        if section != prefix:
            lines.append("")
            prefix = section
        lines.append(f"{key} = {default}  # {description}")
    return "\n".join(lines) + "\n"


@dataclass
class RunConfig:
    train: TrainConfig
    dataset_path: str
    out_dir: str
    scene_kind: str
    scene_views: int
    scene_resolution: int
    scene_seed: int


def _auto_int(raw_value: str, auto_value: int, key: str) -> int:
    if raw_value.strip().lower() == "auto":
        return auto_value
    try:
        return int(raw_value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer or 'auto', got {raw_value!r}") from exc


def resolve_config(raw: dict) -> RunConfig:
    """Fill defaults, convert types, and build the nested config objects."""
    values = {}
    for key, (default, conv, _) in DEFAULTS.items():
        text = raw.get(key, default)
        if key in ("loss.erank_start", "densify.start", "densify.end",
                   "densify.mode", "densify.tau"):
            values[key] = text  # resolved below, may be 'auto'
            continue
        try:
            values[key] = conv(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: bad value {text!r}: {exc}") from exc

    iters = values["train.iterations"]
    erank_start = _auto_int(values["loss.erank_start"], iters // 3, "loss.erank_start")
    densify_start = _auto_int(
        values["densify.start"], max(1, int(0.15 * iters)), "densify.start"
    )
    densify_end = _auto_int(values["densify.end"], int(0.5 * iters), "densify.end")
    mode = values["densify.mode"].strip().lower()
    if mode == "auto":
        mode = "revised" if values["train.erank_enabled"] else "original"
    if mode not in ("original", "revised"):
        raise ConfigError(f"densify.mode: expected original/revised/auto, got {mode!r}")
    tau_text = values["densify.tau"].strip().lower()
    if tau_text == "auto":
        tau = TAU_REVISED if mode == "revised" else TAU_ORIGINAL
    else:
        try:
            tau = float(tau_text)
        except ValueError as exc:
            raise ConfigError(
                f"densify.tau: expected a number or 'auto', got {tau_text!r}"
            ) from exc

    weights = LossWeights(
        lambda_erank=values["loss.lambda_erank"],
        epsilon=values["loss.epsilon"],
        lambda_d=values["loss.lambda_d"],
        lambda_n=values["loss.lambda_n"],
        erank_start_iter=erank_start,
    )
    densify = DensifyConfig(
        tau=tau,
        mode=mode,
        densify_interval=values["densify.interval"],
        prune_opacity=values["densify.prune_opacity"],
        percent_dense=values["densify.percent_dense"],
        split_scale_divisor=values["densify.split_divisor"],
        start_iter=densify_start,
        end_iter=densify_end,
    )
    train = TrainConfig(
        total_iterations=iters,
        width=values["scene.resolution"],
        height=values["scene.resolution"],
        lr_mean_init=values["train.lr_mean_init"],
        lr_mean_final=values["train.lr_mean_final"],
        lr_scales=values["train.lr_scales"],
        lr_rotation=values["train.lr_rotation"],
        lr_opacity=values["train.lr_opacity"],
        lr_sh=values["train.lr_sh"],
        sh_rest_divisor=values["train.sh_rest_divisor"],
        ssim_weight=values["train.ssim_weight"],
        loss_weights=weights,
        densify=densify,
        erank_enabled=values["train.erank_enabled"],
        seed=values["train.seed"],
        init_count=values["train.init_count"],
        sh_degree=values["train.sh_degree"],
        log_interval=values["train.log_interval"],
        snapshot_interval=values["train.snapshot_interval"],
        eval_interval=values["train.eval_interval"],
        opacity_reset_interval=values["train.opacity_reset_interval"],
        background=values["train.background"],
    )
    return RunConfig(
        train=train,
        dataset_path=values["io.dataset"],
        out_dir=values["io.out_dir"],
        scene_kind=values["scene.kind"],
        scene_views=values["scene.views"],
        scene_resolution=values["scene.resolution"],
        scene_seed=values["scene.seed"],
    )
