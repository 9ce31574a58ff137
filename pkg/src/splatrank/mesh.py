"""TSDF fusion of rendered depth maps and isosurface extraction.

Depth maps (alpha-normalized expected depth from the rasterizer) are
fused into a truncated signed-distance volume by a uniform-weight running
average; the zero level set is triangulated with marching cubes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import measure

from .backend import get_kernels
from .errors import EmptyMeshError
from .gaussians import Camera


@dataclass
class TsdfVolume:
    """Regular grid of truncated signed distances with fusion weights.

    Grid point (i, j, k) sits at origin + index * voxel_size.
    """

    origin: np.ndarray
    voxel_size: float
    dims: tuple
    truncation: float
    tsdf: np.ndarray = None
    weight: np.ndarray = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if any(d < 2 for d in self.dims):
            raise ValueError("volume needs at least 2 grid points per axis")
        if self.truncation < 2.0 * self.voxel_size:
            raise ValueError("truncation must be at least 2 voxel sizes")
        if self.tsdf is None:
            self.tsdf = np.zeros(self.dims, dtype=np.float64)
        if self.weight is None:
            self.weight = np.zeros(self.dims, dtype=np.float64)

    @classmethod
    def from_bbox(cls, bbox, resolution=128, truncation_voxels=4.0, pad=0.05):
        """Cubic-cell volume covering a padded bbox at the given resolution."""
        bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
        center = 0.5 * (bbox[0] + bbox[1])
        half = 0.5 * (bbox[1] - bbox[0]) * (1.0 + pad)
        extent = float(half.max()) * 2.0
        voxel = extent / (resolution - 1)
        dims = np.minimum(
            np.ceil(2.0 * half / voxel).astype(int) + 1, resolution
        )
        origin = center - (dims - 1) * voxel / 2.0
        return cls(
            origin=origin,
            voxel_size=voxel,
            dims=tuple(int(d) for d in dims),
            truncation=truncation_voxels * voxel,
        )


def tsdf_integrate(volume: TsdfVolume, depth, cam: Camera):
    """Fuse one depth map (0 = invalid pixel) into the volume in place."""
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError(
            f"depth shape {depth.shape} does not match camera "
            f"({cam.height}, {cam.width})"
        )
    kern = get_kernels()
    kern.tsdf_fuse(
        volume.tsdf, volume.weight, depth,
        cam.fx, cam.fy, cam.cx, cam.cy,
        np.ascontiguousarray(cam.rotation), np.ascontiguousarray(cam.translation),
        volume.origin, volume.voxel_size, volume.truncation,
    )
    return volume


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = None


def marching_cubes(volume: TsdfVolume):
    """Zero-isosurface mesh of the observed region of a TSDF volume.

    Cells that contain zero-weight (never observed) voxels produce no
    triangles. To keep the extraction local we first copy the sign of the
    nearest observed voxel into each unobserved one, which leaves every
    crossing inside observed cells, then drop any triangle whose cell still
    touches an unobserved voxel.
    """
    observed = volume.weight > 0
    vals = volume.tsdf[observed]
    if vals.size == 0 or vals.min() >= 0.0 or vals.max() <= 0.0:
        raise EmptyMeshError("volume has no zero crossing in observed voxels")

    filled = volume.tsdf.copy()
    if not observed.all():
        idx = ndimage.distance_transform_edt(
            ~observed, return_distances=False, return_indices=True
        )
        nearest = volume.tsdf[tuple(idx)]
        hole = ~observed
        filled[hole] = np.where(nearest[hole] < 0.0, -1.0, 1.0)

    verts, faces, normals, _ = measure.marching_cubes(
        filled,
        level=0.0,
        spacing=(volume.voxel_size,) * 3,
        allow_degenerate=False,
    )

    # every marching-cubes triangle lies inside one grid cell; a cell is
    # valid only when all 8 of its corners were observed
    cell_ok = observed[:-1] & observed[1:]
    cell_ok = cell_ok[:, :-1] & cell_ok[:, 1:]
    cell_ok = cell_ok[:, :, :-1] & cell_ok[:, :, 1:]
    centroids = verts[faces].mean(axis=1) / volume.voxel_size
    cells = np.clip(
        np.floor(centroids).astype(np.int64),
        0,
        np.asarray(cell_ok.shape) - 1,
    )
    keep = cell_ok[cells[:, 0], cells[:, 1], cells[:, 2]]
    faces = faces[keep]
    if faces.shape[0] == 0:
        raise EmptyMeshError("all crossing cells contain unobserved voxels")

    used = np.unique(faces)
    remap = np.full(verts.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.shape[0])
    return TriangleMesh(
        vertices=np.asarray(verts[used], dtype=np.float64) + volume.origin[None, :],
        triangles=remap[faces],
        normals=np.asarray(normals[used], dtype=np.float64),
    )


def mesh_surface_error(mesh: TriangleMesh, surface):
    """Mean and max vertex distance to an analytic surface descriptor.

    Descriptors: {"kind": "sphere", "center", "radius"},
    {"kind": "plane", "normal", "offset"} with the plane n.x = offset, or
    {"kind": "box", "min", "max"} measuring distance to the box shell.
    """
    if mesh.vertices.shape[0] == 0:
        raise ValueError("mesh is empty")
    if not isinstance(surface, dict) or "kind" not in surface:
        raise ValueError("surface descriptor must be a dict with a 'kind'")
    v = mesh.vertices
    kind = surface["kind"]
    if kind == "sphere":
        c = np.asarray(surface["center"], dtype=np.float64).reshape(3)
        r = float(surface["radius"])
        d = np.abs(np.linalg.norm(v - c, axis=-1) - r)
    elif kind == "plane":
        n = np.asarray(surface["normal"], dtype=np.float64).reshape(3)
        n = n / np.linalg.norm(n)
        d = np.abs(v @ n - float(surface["offset"]))
    elif kind == "box":
        lo = np.asarray(surface["min"], dtype=np.float64).reshape(3)
        hi = np.asarray(surface["max"], dtype=np.float64).reshape(3)
        q = np.maximum(lo - v, v - hi)  # negative on all axes = inside
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside_gap = -np.minimum(q.max(axis=-1), 0.0)  # wall distance inside
        d = np.where(outside > 0, outside, inside_gap)
    else:
        raise ValueError(f"unsupported surface kind {kind!r}")
    return float(d.mean()), float(d.max())


def is_watertight(mesh: TriangleMesh):
    """Every edge shared by exactly two triangles (no boundary, manifold)."""
    f = mesh.triangles
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def euler_characteristic(mesh: TriangleMesh):
    f = mesh.triangles
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    n_e = np.unique(edges, axis=0).shape[0]
    n_v = np.unique(f.ravel()).shape[0]
    return n_v - n_e + f.shape[0]


def save_obj(path, mesh: TriangleMesh):
    """ASCII OBJ with 1-based face indices."""
    from .ioutil import atomic_write_text

    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {float(x)!r} {float(y)!r} {float(z)!r}")
    for a, b, c in mesh.triangles + 1:
        lines.append(f"f {a} {b} {c}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def mesh_from_depths(depth_maps, cameras, bbox, resolution=128):
    """Fuse depth maps into a volume over bbox and extract the surface."""
    volume = TsdfVolume.from_bbox(bbox, resolution=resolution)
    for depth, cam in zip(depth_maps, cameras):
        tsdf_integrate(volume, depth, cam)
    return marching_cubes(volume), volume
