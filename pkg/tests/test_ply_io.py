"""Checkpoint PLY writer/reader: layout, naming, and exact round-trips."""

import numpy as np
import pytest

from splatrank.errors import MissingPropertyError
from splatrank.ply_io import load_ply, read_ply, save_ply, write_ply

from conftest import random_cloud


def f4_cloud(rng, count=17, sh_degree=2):
    """Random cloud whose values are exactly float32-representable."""
    cloud = random_cloud(rng, count=count, sh_degree=sh_degree)
    for name, arr in cloud.parameters().items():
        arr[...] = arr.astype("<f4").astype(np.float64)
    return cloud


def header_lines(payload):
    end = payload.find(b"end_header\n")
    return payload[:end].decode("ascii").splitlines()


class TestWrite:
    def test_header_layout_degree_two(self, rng):
        payload = write_ply(f4_cloud(rng, count=5, sh_degree=2))
        lines = header_lines(payload)
        assert lines[0] == "ply"
        assert lines[1] == "format binary_little_endian 1.0"
        assert lines[2] == "element vertex 5"
        expected = (
            ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
            + [f"f_rest_{i}" for i in range(24)]
            + ["opacity", "scale_0", "scale_1", "scale_2"]
            + [f"rot_{i}" for i in range(4)]
        )
        assert lines[3:] == [f"property float {n}" for n in expected]

    def test_body_size(self, rng):
        cloud = f4_cloud(rng, count=7, sh_degree=0)
        payload = write_ply(cloud)
        body = payload[payload.find(b"end_header\n") + len(b"end_header\n"):]
        assert len(body) == 7 * 17 * 4   # 17 float32 properties per vertex

    def test_normals_written_as_zeros(self, rng):
        payload = write_ply(f4_cloud(rng, count=3, sh_degree=0))
        body = payload[payload.find(b"end_header\n") + len(b"end_header\n"):]
        table = np.frombuffer(body, dtype="<f4").reshape(3, 17)
        assert np.all(table[:, 3:6] == 0.0)

    def test_rest_block_is_channel_major(self, rng):
        cloud = f4_cloud(rng, count=2, sh_degree=1)
        payload = write_ply(cloud)
        body = payload[payload.find(b"end_header\n") + len(b"end_header\n"):]
        table = np.frombuffer(body, dtype="<f4").reshape(2, 26).astype(np.float64)
        rest = table[:, 9:18]
        for ch in range(3):
            for j in range(1, 4):
                col = ch * 3 + (j - 1)
                np.testing.assert_array_equal(rest[:, col], cloud.sh_coeffs[:, j, ch])


class TestRoundTrip:
    @pytest.mark.parametrize("sh_degree", [0, 1, 2])
    def test_values_survive_exactly(self, rng, sh_degree):
        cloud = f4_cloud(rng, sh_degree=sh_degree)
        back = read_ply(write_ply(cloud))
        for name, arr in cloud.parameters().items():
            np.testing.assert_array_equal(getattr(back, name), arr, err_msg=name)

    def test_write_read_write_bytes_identical(self, rng):
        cloud = random_cloud(rng, count=23)   # arbitrary float64 values
        first = write_ply(cloud)
        second = write_ply(read_ply(first))
        assert first == second

    def test_file_round_trip(self, rng, tmp_path):
        cloud = f4_cloud(rng, count=11, sh_degree=1)
        path = tmp_path / "ckpt.ply"
        save_ply(path, cloud)
        back = load_ply(path)
        for name, arr in cloud.parameters().items():
            np.testing.assert_array_equal(getattr(back, name), arr, err_msg=name)


def scrambled_payload(cloud, order, types=None):
    """Re-emit a cloud's PLY with vertex properties in a custom order."""
    canonical = write_ply(cloud)
    names = [ln.split()[2] for ln in header_lines(canonical)
             if ln.startswith("property")]
    body = canonical[canonical.find(b"end_header\n") + len(b"end_header\n"):]
    table = np.frombuffer(body, dtype="<f4").reshape(cloud.count, len(names))
    types = types or {}
    dtype = np.dtype([(n, types.get(n, "<f4")) for n in order])
    rows = np.zeros(cloud.count, dtype=dtype)
    for n in order:
        rows[n] = table[:, names.index(n)]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {cloud.count}"]
    back_types = {"<f4": "float", "<f8": "double"}
    header += [f"property {back_types[types.get(n, '<f4')]} {n}" for n in order]
    header.append("end_header")
    return ("\n".join(header) + "\n").encode("ascii") + rows.tobytes()


class TestReader:
    def test_accepts_reordered_properties(self, rng):
        cloud = f4_cloud(rng, count=6, sh_degree=0)
        canonical = write_ply(cloud)
        names = [ln.split()[2] for ln in header_lines(canonical)
                 if ln.startswith("property")]
        shuffled = list(names)
        np.random.default_rng(5).shuffle(shuffled)
        back = read_ply(scrambled_payload(cloud, shuffled))
        for name, arr in cloud.parameters().items():
            np.testing.assert_array_equal(getattr(back, name), arr, err_msg=name)

    def test_accepts_double_typed_columns(self, rng):
        cloud = f4_cloud(rng, count=4, sh_degree=0)
        names = [ln.split()[2] for ln in header_lines(write_ply(cloud))
                 if ln.startswith("property")]
        payload = scrambled_payload(cloud, names, types={"x": "<f8", "opacity": "<f8"})
        back = read_ply(payload)
        np.testing.assert_array_equal(back.means, cloud.means)
        np.testing.assert_array_equal(back.raw_opacities, cloud.raw_opacities)

    def test_missing_scale_rejected(self, rng):
        cloud = f4_cloud(rng, count=4, sh_degree=0)
        names = [ln.split()[2] for ln in header_lines(write_ply(cloud))
                 if ln.startswith("property")]
        names.remove("scale_2")
        with pytest.raises(MissingPropertyError, match="scale_2"):
            read_ply(scrambled_payload(cloud, names))

    def test_gappy_rest_block_rejected(self, rng):
        cloud = f4_cloud(rng, count=4, sh_degree=1)
        names = [ln.split()[2] for ln in header_lines(write_ply(cloud))
                 if ln.startswith("property")]
        names.remove("f_rest_4")
        with pytest.raises(MissingPropertyError, match="contiguous"):
            read_ply(scrambled_payload(cloud, names))

    def test_truncated_body_rejected(self, rng):
        payload = write_ply(f4_cloud(rng, count=4, sh_degree=0))
        with pytest.raises(ValueError, match="truncated"):
            read_ply(payload[:-8])

    def test_missing_magic_rejected(self):
        with pytest.raises(ValueError, match="PLY"):
            read_ply(b"nonsense without a header\nend_header\n")

    def test_ascii_format_rejected(self, rng):
        payload = write_ply(f4_cloud(rng, count=2, sh_degree=0))
        broken = payload.replace(b"binary_little_endian", b"ascii")
        with pytest.raises(ValueError, match="format"):
            read_ply(broken)

    def test_wrong_first_element_rejected(self, rng):
        payload = write_ply(f4_cloud(rng, count=2, sh_degree=0))
        broken = payload.replace(b"element vertex 2", b"element face 2")
        with pytest.raises(ValueError, match="vertex"):
            read_ply(broken)

    def test_list_property_rejected(self, rng):
        payload = write_ply(f4_cloud(rng, count=2, sh_degree=0))
        broken = payload.replace(
            b"property float x", b"property list uchar int x")
        with pytest.raises(ValueError, match="list"):
            read_ply(broken)

    def test_odd_rest_count_rejected(self, rng):
        cloud = f4_cloud(rng, count=3, sh_degree=1)
        names = [ln.split()[2] for ln in header_lines(write_ply(cloud))
                 if ln.startswith("property")]
        kept = [n for n in names if not n.startswith("f_rest_")] + ["f_rest_0"]
        with pytest.raises(ValueError, match="divisible"):
            read_ply(scrambled_payload(cloud, kept))

    def test_unsupported_coefficient_count_rejected(self, rng):
        cloud = f4_cloud(rng, count=3, sh_degree=1)
        names = [ln.split()[2] for ln in header_lines(write_ply(cloud))
                 if ln.startswith("property")]
        kept = [n for n in names if not n.startswith("f_rest_")]
        kept += [f"f_rest_{i}" for i in range(6)]
        with pytest.raises(ValueError, match="coefficient"):
            read_ply(scrambled_payload(cloud, kept))
