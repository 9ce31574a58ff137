"""Checkpoint serialization in the common splatting PLY layout.

Checkpoints are binary little-endian PLY files with one vertex per Gaussian
and float32 properties in this order::

    x y z  nx ny nz  f_dc_0..2  f_rest_*  opacity  scale_0..2  rot_0..3

The normal slots are written as zeros and ignored on read. ``opacity`` holds
the raw logit, ``scale_*`` the raw log-scales, and ``rot_*`` the unnormalized
quaternion, so a written file reproduces the optimizer state exactly. The
higher-order SH block is channel-major: ``f_rest_{c*(n-1) + (j-1)}`` stores
coefficient ``j`` of channel ``c``, matching checkpoints from the wider
ecosystem. The reader keys properties by name and accepts any ordering.
"""

from __future__ import annotations

import numpy as np

from .errors import MissingPropertyError
from .gaussians import GaussianCloud
from .ioutil import atomic_write_bytes

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def _property_names(n_coeffs: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (n_coeffs - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2"]
    names += [f"rot_{i}" for i in range(4)]
    return names


def write_ply(cloud: GaussianCloud) -> bytes:
    """Serialize a cloud to PLY bytes (float32 payload)."""
    n = cloud.count
    n_coeffs = cloud.sh_coeffs.shape[1]
    names = _property_names(n_coeffs)

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    table = np.zeros((n, len(names)), dtype="<f4")
    table[:, 0:3] = cloud.means
    # columns 3:6 stay zero (normal placeholders)
    table[:, 6:9] = cloud.sh_coeffs[:, 0, :]
    col = 9
    if n_coeffs > 1:
        for ch in range(3):
            for j in range(1, n_coeffs):
                table[:, col] = cloud.sh_coeffs[:, j, ch]
                col += 1
    table[:, col] = cloud.raw_opacities
    table[:, col + 1 : col + 4] = cloud.raw_scales
    table[:, col + 4 : col + 8] = cloud.rotations
    return ("\n".join(header) + "\n").encode("ascii") + table.tobytes()


def read_ply(payload: bytes) -> GaussianCloud:
    """Parse PLY bytes into a cloud, keying vertex properties by name."""
    end_marker = b"end_header\n"
    end = payload.find(end_marker)
    if end < 0:
        raise ValueError("not a PLY file: no end_header found")
    header_lines = payload[:end].decode("ascii", errors="replace").splitlines()
    body = payload[end + len(end_marker) :]

    lines = [ln.strip() for ln in header_lines if ln.strip()]
    if not lines or lines[0] != "ply":
        raise ValueError("not a PLY file: missing magic line")
    fmt = next((ln for ln in lines if ln.startswith("format ")), None)
    if fmt != "format binary_little_endian 1.0":
        raise ValueError(f"unsupported PLY format line: {fmt!r}")

    count = None
    fields: list[tuple[str, str]] = []
    in_vertex = False
    for ln in lines:
        parts = ln.split()
        if parts[0] == "element":
            if count is not None:
                break  # properties of later elements are not ours
            if parts[1] != "vertex":
                raise ValueError(
                    f"expected first element to be 'vertex', got {parts[1]!r}"
                )
            count = int(parts[2])
            in_vertex = True
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ValueError("list properties are not supported")
            if parts[1] not in _PLY_TYPES:
                raise ValueError(f"unsupported property type {parts[1]!r}")
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None:
        raise ValueError("PLY header has no vertex element")

    dtype = np.dtype([(name, typ) for name, typ in fields])
    if len(body) < count * dtype.itemsize:
        raise ValueError(
            f"truncated PLY payload: need {count * dtype.itemsize} bytes "
            f"for {count} vertices, have {len(body)}"
        )
    rows = np.frombuffer(body, dtype=dtype, count=count)

    have = {name for name, _ in fields}

    def column(name: str) -> np.ndarray:
        if name not in have:
            raise MissingPropertyError(f"PLY is missing property {name!r}")
        return np.asarray(rows[name], dtype=np.float64)

    rest = sorted(
        int(name[len("f_rest_") :]) for name in have if name.startswith("f_rest_")
    )
    n_rest = len(rest)
    if rest != list(range(n_rest)):
        raise MissingPropertyError("f_rest_* properties are not contiguous from 0")
    if n_rest % 3 != 0:
        raise ValueError(f"f_rest count {n_rest} is not divisible by 3")
    n_coeffs = n_rest // 3 + 1
    if n_coeffs not in (1, 4, 9):
        raise ValueError(f"unsupported SH coefficient count {n_coeffs}")

    means = np.stack([column("x"), column("y"), column("z")], axis=1)
    sh = np.zeros((count, n_coeffs, 3), dtype=np.float64)
    for ch in range(3):
        sh[:, 0, ch] = column(f"f_dc_{ch}")
        for j in range(1, n_coeffs):
            sh[:, j, ch] = column(f"f_rest_{ch * (n_coeffs - 1) + (j - 1)}")
    raw_opacities = column("opacity")
    raw_scales = np.stack([column(f"scale_{i}") for i in range(3)], axis=1)
    rotations = np.stack([column(f"rot_{i}") for i in range(4)], axis=1)
    return GaussianCloud(
        means=means,
        raw_scales=raw_scales,
        rotations=rotations,
        raw_opacities=raw_opacities,
        sh_coeffs=sh,
    )


def save_ply(path, cloud: GaussianCloud) -> None:
    atomic_write_bytes(path, write_ply(cloud))


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as handle:
        return read_ply(handle.read())
