"""Command-line entry points.

Subcommands: train, analyze, render, mesh, compare, gen-scene. Exit codes:
0 on success, 1 on usage errors (bad arguments, unknown subcommand), 2 on
runtime failures (missing files, degenerate inputs).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import default_config_text, load_config, resolve_config
from .erank import erank_histogram, shape_report
from .ioutil import (
    atomic_write_text,
    export_histogram_csv,
    export_metrics_csv,
    read_json,
    save_png,
)
from .mesh import mesh_from_depths, save_obj
from .ply_io import load_ply, save_ply
from .rasterizer import render_depth_normal, render_forward
from .scenes import (
    SCENE_KINDS,
    camera_from_dict,
    generate_synthetic_scene,
    load_dataset,
    save_dataset,
)
from .train import evaluate, train


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="splatrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="optimize a scene from a config file")
    p.add_argument("config", help="flat key=value config file ('-' for all defaults)")

    p = sub.add_parser("analyze", help="effective-rank report for a checkpoint")
    p.add_argument("ply")
    p.add_argument("--threshold", type=float, default=1.04)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--csv", default=None,
                   help="histogram CSV path (default: <ply>_erank_hist.csv)")

    p = sub.add_parser("render", help="render color/depth/normal images")
    p.add_argument("ply")
    p.add_argument("camera_json", help="JSON camera or array of cameras")
    p.add_argument("--out", required=True, help="color PNG path")
    p.add_argument("--view", type=int, default=0, help="index into a camera array")
    p.add_argument("--background", default="1,1,1")

    p = sub.add_parser("mesh", help="depth rendering + TSDF fusion + surface extraction")
    p.add_argument("ply")
    p.add_argument("dataset", help="dataset directory (cameras + bbox)")
    p.add_argument("--out", required=True, help="OBJ path")
    p.add_argument("--resolution", type=int, default=128)

    p = sub.add_parser("compare", help="paired needle/erank report for two checkpoints")
    p.add_argument("ply_a")
    p.add_argument("ply_b")
    p.add_argument("--threshold", type=float, default=1.04)

    p = sub.add_parser("gen-scene", help="generate a synthetic dataset")
    p.add_argument("kind", choices=SCENE_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("print-config", help="write the fully documented default config")
    p.add_argument("--out", default=None, help="path (default: stdout)")
    return parser


def _cmd_train(args) -> int:
    if args.config == "-":
        cfg = resolve_config({})
    else:
        cfg = resolve_config(load_config(args.config))

    if cfg.dataset_path:
        dataset = load_dataset(cfg.dataset_path)
    else:
        dataset = generate_synthetic_scene(
            cfg.scene_kind, cfg.scene_views, cfg.scene_resolution, cfg.scene_seed
        )

    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    tc = cfg.train

    def snapshot(it, cloud, comps):
        if tc.snapshot_interval and it % tc.snapshot_interval == 0:
            save_ply(os.path.join(out_dir, f"point_cloud_{it:06d}.ply"), cloud)

    cloud, log = train(dataset, tc, callback=snapshot)
    save_ply(os.path.join(out_dir, "point_cloud.ply"), cloud)
    export_metrics_csv(os.path.join(out_dir, "metrics.csv"), log)
    report = shape_report(cloud.scales)
    export_histogram_csv(
        os.path.join(out_dir, "erank_hist.csv"),
        report["histogram_counts"], report["histogram_edges"],
    )

    print(f"trained {tc.total_iterations} iterations on kind={dataset.kind}")
    print(f"gaussians: {cloud.count}")
    print(f"needle fraction: {report['needle_fraction']:.4f}")
    if dataset.test_indices and tc.total_iterations > 0:
        p, _ = evaluate(cloud, dataset.test_views(), background=np.asarray(tc.background))
        print(f"test psnr: {p:.2f} dB")
    print(f"wrote {os.path.join(out_dir, 'point_cloud.ply')}")
    return 0


def _print_report(name, report):
    print(f"[{name}]")
    print(f"  gaussians: {report['count']}")
    needles = int(round(report["needle_fraction"] * report["count"]))
    print(f"  needles (erank < {report['needle_threshold']}): "
          f"{needles} ({100.0 * report['needle_fraction']:.2f}%)")
    print(f"  disks (erank in (thr, 2.1]): {100.0 * report['disk_fraction']:.2f}%")
    print(f"  erank mean/median: {report['erank_mean']:.4f} / {report['erank_median']:.4f}")
    print(f"  erank min/max: {report['erank_min']:.4f} / {report['erank_max']:.4f}")


def _cmd_analyze(args) -> int:
    cloud = load_ply(args.ply)
    report = shape_report(cloud.scales, needle_threshold=args.threshold)
    _print_report(os.path.basename(args.ply), report)
    from .erank import effective_rank

    counts, edges = erank_histogram(effective_rank(cloud.scales), bins=args.bins)
    csv_path = args.csv
    if csv_path is None:
        base, _ = os.path.splitext(args.ply)
        csv_path = base + "_erank_hist.csv"
    export_histogram_csv(csv_path, counts, edges)
    print(f"  histogram: {csv_path}")
    return 0


def _cmd_render(args) -> int:
    cloud = load_ply(args.ply)
    spec = read_json(args.camera_json)
    if isinstance(spec, list):
        if not 0 <= args.view < len(spec):
            raise IndexError(f"--view {args.view} out of range for {len(spec)} cameras")
        spec = spec[args.view]
    cam = camera_from_dict(spec)
    bg = np.array([float(x) for x in args.background.split(",")])
    if bg.size == 1:
        bg = np.repeat(bg, 3)

    out = render_forward(cloud, cam, background=bg)
    save_png(args.out, out.color)
    depth, normal, valid = render_depth_normal(cloud, cam, background=bg)
    peak = depth.max()
    depth_vis = depth / peak if peak > 0 else depth
    base, ext = os.path.splitext(args.out)
    save_png(base + "_depth" + ext, depth_vis)
    save_png(base + "_normal" + ext, np.where(valid[..., None], 0.5 * (normal + 1.0), 0.0))
    print(f"wrote {args.out} (+_depth, +_normal)")
    return 0


def _cmd_mesh(args) -> int:
    cloud = load_ply(args.ply)
    dataset = load_dataset(args.dataset)
    depths = []
    for cam in dataset.cameras:
        depth, _, valid = render_depth_normal(cloud, cam, background=dataset.background)
        depths.append(np.where(valid, depth, 0.0))
    mesh, _ = mesh_from_depths(depths, dataset.cameras, dataset.bbox,
                               resolution=args.resolution)
    save_obj(args.out, mesh)
    print(f"wrote {args.out}: {mesh.vertices.shape[0]} vertices, "
          f"{mesh.triangles.shape[0]} triangles")
    return 0


def _cmd_compare(args) -> int:
    report_a = shape_report(load_ply(args.ply_a).scales, needle_threshold=args.threshold)
    report_b = shape_report(load_ply(args.ply_b).scales, needle_threshold=args.threshold)
    _print_report(args.ply_a, report_a)
    _print_report(args.ply_b, report_b)
    needles_a = int(round(report_a["needle_fraction"] * report_a["count"]))
    needles_b = int(round(report_b["needle_fraction"] * report_b["count"]))
    print(f"needle count: {needles_a} -> {needles_b}")
    print(f"mean erank:   {report_a['erank_mean']:.4f} -> {report_b['erank_mean']:.4f}")
    return 0


def _cmd_gen_scene(args) -> int:
    dataset = generate_synthetic_scene(args.kind, args.views, args.resolution, args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.images)} views to {args.out} "
          f"({len(dataset.train_indices)} train / {len(dataset.test_indices)} test)")
    return 0


def _cmd_print_config(args) -> int:
    text = default_config_text()
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "analyze": _cmd_analyze,
    "render": _cmd_render,
    "mesh": _cmd_mesh,
    "compare": _cmd_compare,
    "gen-scene": _cmd_gen_scene,
    "print-config": _cmd_print_config,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # runtime failures map to exit 2
        print(f"splatrank {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
