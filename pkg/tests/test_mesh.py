"""TSDF fusion and marching-cubes extraction against analytic surfaces."""

import numpy as np
import pytest

from splatrank.errors import EmptyMeshError
from splatrank.mesh import (
    TriangleMesh,
    TsdfVolume,
    euler_characteristic,
    is_watertight,
    marching_cubes,
    mesh_from_depths,
    mesh_surface_error,
    save_obj,
    tsdf_integrate,
)

from conftest import axis_camera, orbit_camera, sphere_depth


def sphere_volume(radius=0.5, dims=48, voxel=0.03):
    """Volume holding the clamped SDF of an origin-centered sphere."""
    half = voxel * (dims - 1) / 2.0
    vol = TsdfVolume(origin=(-half, -half, -half), voxel_size=voxel,
                     dims=(dims, dims, dims), truncation=4.0 * voxel)
    idx = np.arange(dims) * voxel - half
    x, y, z = np.meshgrid(idx, idx, idx, indexing="ij")
    sdf = np.sqrt(x * x + y * y + z * z) - radius
    vol.tsdf[...] = np.clip(sdf / vol.truncation, -1.0, 1.0)
    vol.weight[...] = 1.0
    return vol


class TestTsdfVolume:
    def test_from_bbox_is_cubic_and_padded(self):
        bbox = [[-1.0, -1.0, -0.5], [1.0, 1.0, 0.5]]
        vol = TsdfVolume.from_bbox(bbox, resolution=64)
        assert max(vol.dims) == 64
        assert vol.truncation == pytest.approx(4.0 * vol.voxel_size)
        lo = vol.origin
        hi = vol.origin + (np.array(vol.dims) - 1) * vol.voxel_size
        assert np.all(lo <= np.array(bbox[0]) + 1e-12)
        assert np.all(hi >= np.array(bbox[1]) - 1e-12)

    def test_rejects_tiny_dims(self):
        with pytest.raises(ValueError):
            TsdfVolume(origin=(0, 0, 0), voxel_size=0.1, dims=(1, 4, 4),
                       truncation=0.4)

    def test_rejects_small_truncation(self):
        with pytest.raises(ValueError):
            TsdfVolume(origin=(0, 0, 0), voxel_size=0.1, dims=(4, 4, 4),
                       truncation=0.1)


class TestIntegrate:
    """3x3x3 grid straddling z = 1; camera at the origin looking along +z."""

    @staticmethod
    def _volume():
        return TsdfVolume(origin=(-0.1, -0.1, 0.9), voxel_size=0.1,
                          dims=(3, 3, 3), truncation=0.2)

    @staticmethod
    def _camera():
        return axis_camera(size=32, f=40.0, cam_z=0.0)

    def test_voxel_on_surface_is_zero(self):
        vol = self._volume()
        depth = np.full((32, 32), 1.0)
        tsdf_integrate(vol, depth, self._camera())
        assert vol.tsdf[1, 1, 1] == pytest.approx(0.0, abs=1e-12)
        assert vol.weight[1, 1, 1] == 1.0

    def test_voxel_truncation_in_front_saturates(self):
        vol = self._volume()
        depth = np.full((32, 32), 1.1)   # voxel z = 0.9 sits exactly delta ahead
        tsdf_integrate(vol, depth, self._camera())
        assert vol.tsdf[1, 1, 0] == pytest.approx(1.0, abs=1e-12)

    def test_half_truncation_values(self):
        vol = self._volume()
        depth = np.full((32, 32), 1.0)
        tsdf_integrate(vol, depth, self._camera())
        assert vol.tsdf[1, 1, 0] == pytest.approx(0.5, abs=1e-12)   # z = 0.9
        assert vol.tsdf[1, 1, 2] == pytest.approx(-0.5, abs=1e-12)  # z = 1.1

    def test_consistent_views_fuse_to_same_value(self):
        vol = self._volume()
        depth = np.full((32, 32), 1.0)
        cam = self._camera()
        tsdf_integrate(vol, depth, cam)
        once = vol.tsdf.copy()
        tsdf_integrate(vol, depth, cam)
        np.testing.assert_allclose(vol.tsdf, once, atol=1e-15)
        assert vol.weight[1, 1, 1] == 2.0

    def test_far_behind_surface_not_fused(self):
        vol = self._volume()
        depth = np.full((32, 32), 0.6)   # every voxel more than delta behind
        tsdf_integrate(vol, depth, self._camera())
        assert np.all(vol.weight == 0.0)

    def test_invalid_pixels_skipped(self):
        vol = self._volume()
        tsdf_integrate(vol, np.zeros((32, 32)), self._camera())
        assert np.all(vol.weight == 0.0)

    def test_depth_shape_mismatch(self):
        with pytest.raises(ValueError):
            tsdf_integrate(self._volume(), np.ones((16, 32)), self._camera())

    def test_fusion_is_order_independent(self, rng):
        cams = [axis_camera(size=16, f=20.0, cam_z=z) for z in (0.0, -0.2, -0.4, 0.1)]
        depths = [rng.uniform(0.8, 1.3, size=(16, 16)) for _ in cams]
        vol_a = self._volume()
        for d, c in zip(depths, cams):
            tsdf_integrate(vol_a, d, c)
        vol_b = self._volume()
        for i in (2, 0, 3, 1):
            tsdf_integrate(vol_b, depths[i], cams[i])
        np.testing.assert_allclose(vol_b.tsdf, vol_a.tsdf, atol=1e-12)
        np.testing.assert_array_equal(vol_b.weight, vol_a.weight)


class TestMarchingCubes:
    def test_sphere_vertices_at_radius(self):
        vol = sphere_volume()
        mesh = marching_cubes(vol)
        radii = np.linalg.norm(mesh.vertices, axis=-1)
        assert np.all(np.abs(radii - 0.5) < vol.voxel_size)

    def test_sphere_is_watertight_with_euler_two(self):
        mesh = marching_cubes(sphere_volume())
        assert is_watertight(mesh)
        assert euler_characteristic(mesh) == 2

    def test_all_positive_volume_is_empty(self):
        vol = sphere_volume()
        vol.tsdf[...] = np.abs(vol.tsdf) + 0.1
        with pytest.raises(EmptyMeshError):
            marching_cubes(vol)

    def test_plane_mesh_is_planar_with_constant_normal(self):
        dims, voxel = 24, 0.05
        half = voxel * (dims - 1) / 2.0
        vol = TsdfVolume(origin=(-half, -half, -half), voxel_size=voxel,
                         dims=(dims,) * 3, truncation=4.0 * voxel)
        z = (np.arange(dims) * voxel - half + 0.012)[None, None, :]
        vol.tsdf[...] = np.clip(
            np.broadcast_to(z, vol.tsdf.shape) / vol.truncation, -1.0, 1.0)
        vol.weight[...] = 1.0
        mesh = marching_cubes(vol)
        assert np.all(np.abs(mesh.vertices[:, 2] + 0.012) < 1e-6)
        n = mesh.normals / np.linalg.norm(mesh.normals, axis=-1, keepdims=True)
        ref = np.broadcast_to(np.array([0.0, 0.0, 1.0]), n.shape)
        np.testing.assert_allclose(np.abs(n[:, 2]), ref[:, 2], atol=1e-3)
        np.testing.assert_allclose(n[:, :2], ref[:, :2], atol=1e-3)

    def test_unobserved_pocket_is_skipped(self):
        vol = sphere_volume()
        pocket = np.zeros(vol.dims, dtype=bool)
        pocket[24:, 24:, 24:] = True      # octant cutting through the surface
        vol.weight[pocket] = 0.0
        mesh = marching_cubes(vol)
        inside = np.all(mesh.vertices > vol.voxel_size, axis=-1)
        assert not np.any(inside)
        assert not is_watertight(mesh)


class TestMeshSurfaceError:
    @staticmethod
    def _tetrahedron():
        v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
        return TriangleMesh(vertices=v, triangles=f)

    def test_perfect_sphere_mesh(self):
        mesh = marching_cubes(sphere_volume())
        mean, worst = mesh_surface_error(
            mesh, {"kind": "sphere", "center": (0, 0, 0), "radius": 0.5})
        assert mean < 0.01
        assert worst < 0.03

    def test_uniformly_inflated_sphere(self):
        mesh = marching_cubes(sphere_volume())
        unit = mesh.vertices / np.linalg.norm(mesh.vertices, axis=-1, keepdims=True)
        inflated = TriangleMesh(vertices=1.02 * unit, triangles=mesh.triangles)
        mean, worst = mesh_surface_error(
            inflated, {"kind": "sphere", "center": (0, 0, 0), "radius": 1.0})
        assert mean == pytest.approx(0.02, abs=1e-12)
        assert worst == pytest.approx(0.02, abs=1e-12)

    def test_plane_descriptor(self):
        mesh = self._tetrahedron()
        mean, worst = mesh_surface_error(
            mesh, {"kind": "plane", "normal": (0, 0, 1), "offset": 0.0})
        assert mean == pytest.approx(0.25)
        assert worst == pytest.approx(1.0)

    def test_box_descriptor_inside_and_out(self):
        mesh = TriangleMesh(
            vertices=np.array([[0.5, 0.5, 0.5], [2.0, 0.5, 0.5]]),
            triangles=np.zeros((0, 3), dtype=np.int64))
        mean, worst = mesh_surface_error(
            mesh, {"kind": "box", "min": (0, 0, 0), "max": (1, 1, 1)})
        assert worst == pytest.approx(1.0)    # outside point, distance to shell
        assert mean == pytest.approx(0.75)    # inside point is 0.5 from a wall

    def test_bad_descriptor(self):
        with pytest.raises(ValueError):
            mesh_surface_error(self._tetrahedron(), {"kind": "torus"})
        with pytest.raises(ValueError):
            mesh_surface_error(self._tetrahedron(), "sphere")

    def test_empty_mesh_rejected(self):
        empty = TriangleMesh(vertices=np.zeros((0, 3)),
                             triangles=np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(ValueError):
            mesh_surface_error(empty, {"kind": "plane", "normal": (0, 0, 1),
                                       "offset": 0.0})


class TestWatertight:
    def test_closed_tetrahedron(self):
        mesh = TestMeshSurfaceError._tetrahedron()
        assert is_watertight(mesh)
        assert euler_characteristic(mesh) == 2

    def test_open_surface(self):
        mesh = TestMeshSurfaceError._tetrahedron()
        opened = TriangleMesh(vertices=mesh.vertices, triangles=mesh.triangles[:3])
        assert not is_watertight(opened)


class TestSaveObj:
    def test_round_trip_through_text(self, tmp_path):
        mesh = TestMeshSurfaceError._tetrahedron()
        path = tmp_path / "tet.obj"
        save_obj(path, mesh)
        lines = path.read_text().strip().splitlines()
        v_lines = [l for l in lines if l.startswith("v ")]
        f_lines = [l for l in lines if l.startswith("f ")]
        assert len(v_lines) == 4 and len(f_lines) == 4
        verts = np.array([[float(t) for t in l.split()[1:]] for l in v_lines])
        np.testing.assert_array_equal(verts, mesh.vertices)
        faces = np.array([[int(t) for t in l.split()[1:]] for l in f_lines])
        np.testing.assert_array_equal(faces, mesh.triangles + 1)


class TestMeshFromDepths:
    def test_sphere_from_analytic_depths(self):
        radius = 0.5
        cams = []
        golden = np.pi * (3.0 - np.sqrt(5.0))
        for i in range(12):
            z = 1.0 - 2.0 * (i + 0.5) / 12.0
            r = np.sqrt(1.0 - z * z)
            th = golden * i
            pos = 1.8 * np.array([r * np.cos(th), r * np.sin(th), z])
            cams.append(orbit_camera(pos, size=64, f=64.0))
        depths = [sphere_depth(c, (0.0, 0.0, 0.0), radius) for c in cams]
        bbox = [[-0.6, -0.6, -0.6], [0.6, 0.6, 0.6]]
        mesh, vol = mesh_from_depths(depths, cams, bbox, resolution=64)
        mean, worst = mesh_surface_error(
            mesh, {"kind": "sphere", "center": (0, 0, 0), "radius": radius})
        assert mean < 0.02 * radius
        assert worst < 3.0 * vol.voxel_size
        assert is_watertight(mesh)
