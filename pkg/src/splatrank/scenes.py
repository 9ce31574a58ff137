"""Synthetic scene generation.

Each scene kind places analytic primitives near the origin and renders them
with a small lambertian ray tracer, so the training targets come from a
renderer that shares no code with the splatting pipeline. Cameras sit on a
ring of radius four times the object size, cycling through three elevations
for coverage. Every fourth view is held out for testing.

``thin_rods`` is the stress case: cylinders with a 50:1 length-to-diameter
aspect ratio, the kind of geometry that tempts the optimizer into degenerate
needle Gaussians.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .gaussians import Camera
from .ioutil import load_png, read_json, save_png, write_json

SCENE_KINDS = ("cube", "sphere", "plane_stack", "thin_rods")

_LIGHT_DIR = np.array([0.45, 0.35, 0.82])
_AMBIENT = 0.3
_EPS = 1e-9


@dataclass
class SceneDataset:
    kind: str
    images: list
    cameras: list
    train_indices: list
    test_indices: list
    bbox: np.ndarray  # (2, 3) world-axis-aligned min/max
    background: np.ndarray  # (3,)
    surface: dict | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError("images and cameras must align 1:1")
        if set(self.train_indices) & set(self.test_indices):
            raise ValueError("train/test splits overlap")
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    @property
    def n_views(self) -> int:
        return len(self.images)

    def train_views(self):
        return [(self.cameras[i], self.images[i]) for i in self.train_indices]

    def test_views(self):
        return [(self.cameras[i], self.images[i]) for i in self.test_indices]

    @property
    def scene_extent(self) -> float:
        return 0.5 * float(np.linalg.norm(self.bbox[1] - self.bbox[0]))


def _look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a y-down, z-forward camera."""
    zc = target - position
    zc = zc / np.linalg.norm(zc)
    xc = np.cross(np.array([0.0, 0.0, -1.0]), zc)
    nx = np.linalg.norm(xc)
    if nx < 1e-12:
        xc = np.array([1.0, 0.0, 0.0])
    else:
        xc = xc / nx
    yc = np.cross(zc, xc)
    return np.stack([xc, yc, zc], axis=0)


def make_ring_cameras(
    n_views: int,
    resolution: int,
    radius: float,
    center: np.ndarray | None = None,
    elevations_deg=(-35.0, 0.0, 35.0),
) -> list:
    """Cameras on a ring around ``center``, cycling through elevations."""
    if n_views < 2:
        raise ValueError("need at least 2 views")
    center = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
    w = h = int(resolution)
    fx = fy = 1.5 * w
    cams = []
    for i in range(n_views):
        azim = 2.0 * np.pi * (i + 0.5) / n_views
        elev = np.deg2rad(elevations_deg[i % len(elevations_deg)])
        offset = radius * np.array(
            [np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim), np.sin(elev)]
        )
        position = center + offset
        rot = _look_at(position, center)
        w2c = np.eye(4)
        w2c[:3, :3] = rot
        w2c[:3, 3] = -rot @ position
        cams.append(
            Camera(
                width=w, height=h, fx=fx, fy=fy, cx=w / 2.0, cy=h / 2.0,
                world_to_camera=w2c, near=0.01, far=100.0,
            )
        )
    return cams


# ---------------------------------------------------------------------------
# Primitive intersection, vectorized over rays. Each routine takes ray
# origins o (N,3) and directions d (N,3) and returns (t, normal, albedo)
# with t = inf where the primitive is missed.


def _miss(n: int):
    return np.full(n, np.inf), np.zeros((n, 3)), np.zeros((n, 3))


def _intersect_box(o, d, lo, hi, face_albedos):
    n = o.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_lo = (lo[None, :] - o) * inv
        t_hi = (hi[None, :] - o) * inv
    t_near_ax = np.minimum(t_lo, t_hi)
    t_far_ax = np.maximum(t_lo, t_hi)
    t_near_ax = np.where(np.isnan(t_near_ax), -np.inf, t_near_ax)
    t_far_ax = np.where(np.isnan(t_far_ax), np.inf, t_far_ax)
    t_near = t_near_ax.max(axis=1)
    t_far = t_far_ax.min(axis=1)
    hit = (t_far >= t_near) & (t_near > _EPS)

    t, normal, albedo = _miss(n)
    if not np.any(hit):
        return t, normal, albedo
    axis = np.argmax(t_near_ax, axis=1)
    sign = -np.sign(d[np.arange(n), axis])
    sign = np.where(sign == 0, 1.0, sign)
    t[hit] = t_near[hit]
    normal[hit, axis[hit]] = sign[hit]
    face = axis * 2 + (sign > 0).astype(int)
    albedo[hit] = face_albedos[face[hit]]
    return t, normal, albedo


def _intersect_sphere(o, d, center, radius, color):
    n = o.shape[0]
    oc = o - center[None, :]
    a = np.sum(d * d, axis=1)
    b = 2.0 * np.sum(oc * d, axis=1)
    c = np.sum(oc * oc, axis=1) - radius * radius
    disc = b * b - 4.0 * a * c
    t, normal, albedo = _miss(n)
    ok = disc >= 0
    if not np.any(ok):
        return t, normal, albedo
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    cand = np.where(t0 > _EPS, t0, t1)
    hit = ok & (cand > _EPS)
    t[hit] = cand[hit]
    p = o[hit] + t[hit, None] * d[hit]
    nrm = (p - center[None, :]) / radius
    normal[hit] = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    albedo[hit] = color
    return t, normal, albedo


def _intersect_quad(o, d, point, nrm, half_u, half_v, color):
    """Two-sided axis-aligned quad spanned by x/y around ``point``."""
    n = o.shape[0]
    denom = d @ nrm
    t, normal, albedo = _miss(n)
    ok = np.abs(denom) > _EPS
    tt = np.where(ok, ((point[None, :] - o) @ nrm) / np.where(ok, denom, 1.0), np.inf)
    p = o + tt[:, None] * d
    local = p - point[None, :]
    hit = ok & (tt > _EPS)
    hit &= np.abs(local[:, 0]) <= half_u
    hit &= np.abs(local[:, 1]) <= half_v
    t[hit] = tt[hit]
    facing = np.where(denom < 0, 1.0, -1.0)
    normal[hit] = facing[hit, None] * nrm[None, :]
    albedo[hit] = color
    return t, normal, albedo


def _intersect_cylinder(o, d, p0, p1, radius, color):
    """Capped cylinder from p0 to p1."""
    n = o.shape[0]
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    oc = o - p0[None, :]
    d_ax = d @ axis
    oc_ax = oc @ axis
    d_perp = d - d_ax[:, None] * axis[None, :]
    oc_perp = oc - oc_ax[:, None] * axis[None, :]

    a = np.sum(d_perp * d_perp, axis=1)
    b = 2.0 * np.sum(d_perp * oc_perp, axis=1)
    c = np.sum(oc_perp * oc_perp, axis=1) - radius * radius
    disc = b * b - 4.0 * a * c
    quad_ok = (a > _EPS) & (disc >= 0)
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - sq) / (2.0 * a)
    s_side = oc_ax + t_side * d_ax
    side_hit = quad_ok & (t_side > _EPS) & (s_side >= 0) & (s_side <= length)
    t_side = np.where(side_hit, t_side, np.inf)

    # cap disks
    with np.errstate(divide="ignore", invalid="ignore"):
        t_c0 = -oc_ax / d_ax
        t_c1 = (length - oc_ax) / d_ax
    cap_ok = np.abs(d_ax) > _EPS

    def cap_hit(t_cap):
        p = o + t_cap[:, None] * d
        rel = p - p0[None, :]
        perp = rel - (rel @ axis)[:, None] * axis[None, :]
        inside = np.sum(perp * perp, axis=1) <= radius * radius
        return cap_ok & (t_cap > _EPS) & inside

    t_c0 = np.where(cap_hit(t_c0), t_c0, np.inf)
    t_c1 = np.where(cap_hit(t_c1), t_c1, np.inf)

    t = np.minimum(np.minimum(t_side, t_c0), t_c1)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    hit = np.isfinite(t)
    if not np.any(hit):
        return t, normal, albedo

    from_side = hit & (t == t_side)
    p = o[from_side] + t[from_side, None] * d[from_side]
    rel = p - p0[None, :]
    perp = rel - (rel @ axis)[:, None] * axis[None, :]
    normal[from_side] = perp / np.maximum(
        np.linalg.norm(perp, axis=1, keepdims=True), 1e-12
    )
    normal[hit & (t == t_c0)] = -axis
    normal[hit & (t == t_c1)] = axis
    albedo[hit] = color
    return t, normal, albedo


def _shade(normals, albedos, hit_mask, background):
    light = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)
    lambert = np.maximum(normals @ light, 0.0)
    intensity = _AMBIENT + (1.0 - _AMBIENT) * lambert
    color = albedos * intensity[:, None]
    out = np.where(hit_mask[:, None], color, background[None, :])
    return np.clip(out, 0.0, 1.0)


def render_reference(primitives, camera: Camera, background) -> np.ndarray:
    """Trace one lambertian image of a primitive list."""
    h, w = camera.height, camera.width
    dirs_cam = camera.pixel_rays().reshape(-1, 3)
    dirs = dirs_cam @ camera.rotation
    origin = np.broadcast_to(camera.camera_center, dirs.shape)

    best_t = np.full(dirs.shape[0], np.inf)
    best_n = np.zeros_like(dirs)
    best_a = np.zeros_like(dirs)
    for prim in primitives:
        t, nrm, alb = prim(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n[closer] = nrm[closer]
        best_a[closer] = alb[closer]
    img = _shade(best_n, best_a, np.isfinite(best_t), np.asarray(background))
    return img.reshape(h, w, 3)


def reference_depth(primitives, camera: Camera) -> np.ndarray:
    """Analytic z-depth map (camera-frame z, 0 where nothing is hit)."""
    h, w = camera.height, camera.width
    dirs_cam = camera.pixel_rays().reshape(-1, 3)
    dirs = dirs_cam @ camera.rotation
    origin = np.broadcast_to(camera.camera_center, dirs.shape)
    best_t = np.full(dirs.shape[0], np.inf)
    for prim in primitives:
        t, _, _ = prim(origin, dirs)
        best_t = np.minimum(best_t, t)
    # rays carry unit camera z, so the parameter equals camera-frame depth
    depth = np.where(np.isfinite(best_t), best_t, 0.0)
    return depth.reshape(h, w)


def _scene_primitives(kind: str, rng: np.random.Generator):
    """Build (primitives, object_bbox, surface_descriptor, extras) for a kind."""
    extras = {}
    if kind == "cube":
        half = 0.5
        lo, hi = -half * np.ones(3), half * np.ones(3)
        faces = rng.uniform(0.15, 0.95, size=(6, 3))
        prims = [lambda o, d: _intersect_box(o, d, lo, hi, faces)]
        bbox = np.stack([lo, hi])
        surface = {"kind": "box", "min": lo.tolist(), "max": hi.tolist()}
    elif kind == "sphere":
        radius = 0.5
        color = rng.uniform(0.3, 0.95, size=3)
        center = np.zeros(3)
        prims = [lambda o, d: _intersect_sphere(o, d, center, radius, color)]
        bbox = np.stack([-radius * np.ones(3), radius * np.ones(3)])
        surface = {"kind": "sphere", "center": center.tolist(), "radius": radius}
    elif kind == "plane_stack":
        heights = (-0.3, 0.0, 0.3)
        halves = (0.6, 0.42, 0.26)
        nrm = np.array([0.0, 0.0, 1.0])
        prims = []
        for z, hl in zip(heights, halves):
            color = rng.uniform(0.2, 0.95, size=3)
            point = np.array([0.0, 0.0, z])
            prims.append(
                lambda o, d, p=point, h=hl, c=color: _intersect_quad(
                    o, d, p, nrm, h, h, c
                )
            )
        bbox = np.array([[-0.6, -0.6, -0.3], [0.6, 0.6, 0.3]])
        surface = {"kind": "plane", "normal": [0.0, 0.0, 1.0], "offset": -0.3}
    elif kind == "thin_rods":
        n_rods = 24
        radius = 0.012
        length = 50.0 * (2.0 * radius)  # 50:1 length-to-diameter
        prims = []
        pts = []
        rods = []
        for _ in range(n_rods):
            center = rng.uniform(-0.3, 0.3, size=3)
            axis = rng.normal(size=3)
            axis = axis / np.linalg.norm(axis)
            p0 = center - 0.5 * length * axis
            p1 = center + 0.5 * length * axis
            color = rng.uniform(0.2, 0.95, size=3)
            prims.append(
                lambda o, d, a=p0, b=p1, c=color: _intersect_cylinder(
                    o, d, a, b, radius, c
                )
            )
            pts += [p0, p1]
            rods.append({"p0": p0.tolist(), "p1": p1.tolist(), "radius": radius})
        pts = np.asarray(pts)
        bbox = np.stack([pts.min(axis=0) - radius, pts.max(axis=0) + radius])
        surface = None
        extras["rods"] = rods
    else:
        raise ValueError(f"unsupported scene kind {kind!r}, expected one of {SCENE_KINDS}")
    return prims, bbox, surface, extras


def generate_synthetic_scene(
    kind: str, n_views: int = 16, resolution: int = 128, seed: int = 0
) -> SceneDataset:
    if n_views < 2:
        raise ValueError("need at least 2 views")
    rng = np.random.default_rng(seed)
    prims, obj_bbox, surface, extras = _scene_primitives(kind, rng)

    object_size = 0.5 * float(np.linalg.norm(obj_bbox[1] - obj_bbox[0]))
    center = 0.5 * (obj_bbox[0] + obj_bbox[1])
    cameras = make_ring_cameras(n_views, resolution, 4.0 * object_size, center)

    background = np.ones(3)
    images = [render_reference(prims, cam, background) for cam in cameras]

    test_indices = [i for i in range(n_views) if i % 4 == 3]
    train_indices = [i for i in range(n_views) if i % 4 != 3]
    pad = 0.3 * (obj_bbox[1] - obj_bbox[0])
    bbox = np.stack([obj_bbox[0] - pad, obj_bbox[1] + pad])

    return SceneDataset(
        kind=kind,
        images=images,
        cameras=cameras,
        train_indices=train_indices,
        test_indices=test_indices,
        bbox=bbox,
        background=background,
        surface=surface,
        seed=seed,
        meta={"resolution": resolution, "n_views": n_views,
              "object_bbox": obj_bbox.tolist(), **extras},
    )


def scene_primitives(kind: str, seed: int = 0):
    """Expose the analytic primitives (for reference depth rendering)."""
    rng = np.random.default_rng(seed)
    prims, bbox, surface, _ = _scene_primitives(kind, rng)
    return prims, bbox, surface


# ---------------------------------------------------------------------------
# Disk layout: images/view_###.png, cameras.json, meta.json


def camera_to_dict(cam: Camera) -> dict:
    return {
        "width": cam.width,
        "height": cam.height,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "world_to_camera": np.asarray(cam.world_to_camera).tolist(),
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        width=int(d["width"]),
        height=int(d["height"]),
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        world_to_camera=np.asarray(d["world_to_camera"], dtype=np.float64),
        near=float(d.get("near", 0.01)),
        far=float(d.get("far", 100.0)),
    )


def save_dataset(dataset: SceneDataset, out_dir: str | os.PathLike) -> None:
    out_dir = os.fspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    for i, img in enumerate(dataset.images):
        save_png(os.path.join(img_dir, f"view_{i:03d}.png"), img)
    write_json(
        os.path.join(out_dir, "cameras.json"),
        [camera_to_dict(c) for c in dataset.cameras],
    )
    write_json(
        os.path.join(out_dir, "meta.json"),
        {
            "kind": dataset.kind,
            "seed": dataset.seed,
            "train_indices": list(dataset.train_indices),
            "test_indices": list(dataset.test_indices),
            "bbox": dataset.bbox.tolist(),
            "background": dataset.background.tolist(),
            "surface": dataset.surface,
            "meta": dataset.meta,
        },
    )


def load_dataset(path: str | os.PathLike) -> SceneDataset:
    path = os.fspath(path)
    meta = read_json(os.path.join(path, "meta.json"))
    cameras = [camera_from_dict(d) for d in read_json(os.path.join(path, "cameras.json"))]
    images = [
        load_png(os.path.join(path, "images", f"view_{i:03d}.png"))
        for i in range(len(cameras))
    ]
    return SceneDataset(
        kind=meta["kind"],
        images=images,
        cameras=cameras,
        train_indices=meta["train_indices"],
        test_indices=meta["test_indices"],
        bbox=np.asarray(meta["bbox"], dtype=np.float64),
        background=np.asarray(meta["background"], dtype=np.float64),
        surface=meta.get("surface"),
        seed=int(meta.get("seed", 0)),
        meta=meta.get("meta", {}),
    )
