"""CPU 3D Gaussian splatting with effective-rank shape analysis and regularization.

The package trains anisotropic 3D Gaussian clouds on small multi-view scenes,
monitors the shape statistics of the primitives through their effective rank,
and suppresses needle-like Gaussians with an effective-rank penalty. Rendering,
analysis, mesh extraction and dataset generation are exposed through the
``splatrank`` command line tool.
"""

__version__ = "0.1.0"

from .erank import (
    classify_needles,
    effective_rank,
    effective_rank_gradient,
    erank_histogram,
    shape_report,
    singular_value_distribution,
)
from .gaussians import (
    Camera,
    GaussianCloud,
    build_covariance,
    evaluate_density,
    sh_to_color,
)
from .losses import (
    LossWeights,
    depth_distortion_loss,
    depth_to_normal,
    erank_loss,
    erank_schedule_active,
    normal_consistency_loss,
)
from .mesh import TriangleMesh, TsdfVolume, marching_cubes, tsdf_integrate
from .ply_io import load_ply, read_ply, save_ply, write_ply
from .rasterizer import render_backward, render_depth_normal, render_forward
from .scenes import SceneDataset, generate_synthetic_scene, load_dataset, save_dataset
from .train import TrainConfig, evaluate, photometric_loss, psnr, ssim, train

__all__ = [
    "Camera",
    "GaussianCloud",
    "LossWeights",
    "SceneDataset",
    "TrainConfig",
    "TriangleMesh",
    "TsdfVolume",
    "build_covariance",
    "classify_needles",
    "depth_distortion_loss",
    "depth_to_normal",
    "effective_rank",
    "effective_rank_gradient",
    "erank_histogram",
    "erank_loss",
    "erank_schedule_active",
    "evaluate",
    "evaluate_density",
    "generate_synthetic_scene",
    "load_dataset",
    "load_ply",
    "marching_cubes",
    "normal_consistency_loss",
    "photometric_loss",
    "psnr",
    "read_ply",
    "render_backward",
    "render_depth_normal",
    "render_forward",
    "save_dataset",
    "save_ply",
    "shape_report",
    "sh_to_color",
    "singular_value_distribution",
    "ssim",
    "train",
    "tsdf_integrate",
    "write_ply",
]
