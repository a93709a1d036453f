"""Synthetic multi-view scenes with analytic ground truth.

Scenes are unions of spheres and axis-aligned boxes (plus an optional ground
plane), shaded with flat albedo under one fixed directional light with a
small ambient floor. Per pixel the tracer reports rgb, far-normalized depth,
a per-instance unit-basis feature vector, and the instance id; cameras sit on
an origin-centered orbit. The on-disk layout is meta.json + 8-bit PNGs for
rgb/instance + "RPNF" float32 buffers for depth/feature.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .cameras import Camera, orbit_camera
from .errors import ConfigurationError, FormatError, MissingFileError
from .imaging import load_float_bin, load_png, save_float_bin, save_png
from .renderer import gen_rays
from .validation import check_positive

LIGHT_DIR = np.array([0.35, 0.25, 0.9])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.25
META_VERSION = 1


@dataclass(frozen=True)
class Primitive:
    shape: str                 # "sphere" | "box"
    center: tuple              # 3-vector, scene units
    size: float                # sphere radius / box half-extent
    albedo: tuple              # rgb in [0, 1]
    feature_id: int

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ConfigurationError(f"unknown primitive shape {self.shape!r}")
        if self.size <= 0:
            raise ConfigurationError("primitive size must be > 0")


@dataclass(frozen=True)
class GroundPlane:
    height: float
    albedo: tuple
    feature_id: int


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    background_color: tuple = (0.0, 0.0, 0.0)
    ground_plane: GroundPlane = None
    rng_seed: int = 0

    def __post_init__(self):
        if not self.primitives:
            raise ConfigurationError("scene needs at least one primitive")
        object.__setattr__(self, "primitives", tuple(self.primitives))
        ids = [p.feature_id for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("feature_ids must be distinct per primitive")
        for p in self.primitives:
            if any(abs(c) + p.size > 1.0 + 1e-9 for c in p.center):
                raise ConfigurationError(
                    f"primitive at {p.center} (size {p.size}) leaves [-1, 1]^3"
                )

    def instance_records(self):
        """(instance_id, feature_id, albedo) rows; ids are 1-based, background 0."""
        rows = [(i + 1, p.feature_id, p.albedo) for i, p in enumerate(self.primitives)]
        if self.ground_plane is not None:
            rows.append((len(self.primitives) + 1,
                         self.ground_plane.feature_id, self.ground_plane.albedo))
        return rows

    def to_json(self):
        d = {
            "primitives": [
                {"shape": p.shape, "center": list(p.center), "size": p.size,
                 "albedo": list(p.albedo), "feature_id": p.feature_id}
                for p in self.primitives
            ],
            "background_color": list(self.background_color),
            "rng_seed": self.rng_seed,
        }
        if self.ground_plane is not None:
            g = self.ground_plane
            d["ground_plane"] = {"height": g.height, "albedo": list(g.albedo),
                                 "feature_id": g.feature_id}
        return d

    @classmethod
    def from_json(cls, d):
        prims = tuple(
            Primitive(shape=p["shape"], center=tuple(p["center"]), size=p["size"],
                      albedo=tuple(p["albedo"]), feature_id=int(p["feature_id"]))
            for p in d["primitives"]
        )
        plane = None
        if d.get("ground_plane"):
            g = d["ground_plane"]
            plane = GroundPlane(height=g["height"], albedo=tuple(g["albedo"]),
                                feature_id=int(g["feature_id"]))
        return cls(primitives=prims,
                   background_color=tuple(d.get("background_color", (0, 0, 0))),
                   ground_plane=plane, rng_seed=int(d.get("rng_seed", 0)))


@dataclass
class GroundTruthView:
    rgb: np.ndarray        # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray      # (H, W) float32, far-normalized
    feature: np.ndarray    # (H, W, D) float32
    instance: np.ndarray   # (H, W) uint8, 0 = background
    camera: Camera


@dataclass
class Dataset:
    views: list
    feature_dim: int

    @property
    def resolution(self):
        v = self.views[0]
        return v.rgb.shape[0], v.rgb.shape[1]

    @property
    def cameras(self):
        return [v.camera for v in self.views]

    def __len__(self):
        return len(self.views)


# ---- analytic intersections (vectorized over rays) ----

_EPS = 1e-9


def _hit_sphere(o, d, center, radius):
    oc = o - center
    b = np.einsum("ij,ij->i", oc, d)
    disc = b * b - (np.einsum("ij,ij->i", oc, oc) - radius * radius)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > _EPS, t0, t1)
    t = np.where(ok & (t > _EPS), t, np.inf)
    return t


def _sphere_normal(p, center, radius):
    return (p - center) / radius


def _hit_box(o, d, center, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    lo = (center - half - o) * inv
    hi = (center + half - o) * inv
    tmin = np.minimum(lo, hi)
    tmax = np.maximum(lo, hi)
    # a zero direction component misses unless origin is inside the slab
    zero = np.abs(d) < 1e-12
    inside = (np.abs(o - center) <= half + 1e-12)
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), tmax)
    t_enter = tmin.max(axis=1)
    t_exit = tmax.min(axis=1)
    ok = (t_exit >= t_enter) & (t_exit > _EPS)
    t = np.where(t_enter > _EPS, t_enter, t_exit)
    return np.where(ok, t, np.inf)


def _box_normal(p, center, half):
    q = (p - center) / half
    axis = np.argmax(np.abs(q), axis=1)
    n = np.zeros_like(p)
    n[np.arange(len(p)), axis] = np.sign(q[np.arange(len(p)), axis])
    return n


def _hit_plane(o, d, height):
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (height - o[:, 2]) / dz
    t = np.where((np.abs(dz) > 1e-12) & (t > _EPS), t, np.inf)
    return t


def trace_ground_truth(scene, camera, feature_dim=8):
    """Per-pixel nearest intersection: rgb (Lambertian + ambient floor),
    far-normalized depth, instance ids, and unit-basis feature vectors.
    Background pixels get background_color / depth 1 / zero feature / id 0.
    """
    check_positive(feature_dim, "feature_dim")
    for p in scene.primitives:
        if not (0 <= p.feature_id < feature_dim):
            raise ConfigurationError(
                f"feature_id {p.feature_id} outside [0, {feature_dim})"
            )
    if scene.ground_plane is not None and not (0 <= scene.ground_plane.feature_id < feature_dim):
        raise ConfigurationError("ground plane feature_id outside embedding range")

    rays = gen_rays(camera)
    o, d = rays.o, rays.d
    n_rays = len(rays)

    t_best = np.full(n_rays, np.inf)
    which = np.full(n_rays, -1, dtype=np.int64)

    geoms = [("sphere" if p.shape == "sphere" else "box",
              np.asarray(p.center, dtype=np.float64), p.size) for p in scene.primitives]
    for gi, (kind, center, size) in enumerate(geoms):
        t = _hit_sphere(o, d, center, size) if kind == "sphere" else _hit_box(o, d, center, size)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        which = np.where(closer, gi, which)
    if scene.ground_plane is not None:
        t = _hit_plane(o, d, scene.ground_plane.height)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        which = np.where(closer, len(geoms), which)

    h, w = camera.height, camera.width
    records = scene.instance_records()
    rgb = np.empty((n_rays, 3))
    rgb[:] = np.asarray(scene.background_color, dtype=np.float64)
    depth = np.ones(n_rays)
    feat = np.zeros((n_rays, feature_dim))
    inst = np.zeros(n_rays, dtype=np.uint8)

    hit = which >= 0
    if hit.any():
        idx = np.flatnonzero(hit)
        p_hit = o[idx] + d[idx] * t_best[idx, None]
        normals = np.zeros_like(p_hit)
        for gi, (kind, center, size) in enumerate(geoms):
            sel = which[idx] == gi
            if not sel.any():
                continue
            if kind == "sphere":
                normals[sel] = _sphere_normal(p_hit[sel], center, size)
            else:
                normals[sel] = _box_normal(p_hit[sel], center, size)
        if scene.ground_plane is not None:
            sel = which[idx] == len(geoms)
            if sel.any():
                up = np.where(d[idx][sel][:, 2:3] < 0, 1.0, -1.0)
                normals[sel] = np.concatenate(
                    [np.zeros((sel.sum(), 2)), up], axis=1
                )
        shade = AMBIENT + (1.0 - AMBIENT) * np.maximum(normals @ LIGHT_DIR, 0.0)
        for gi, (inst_id, fid, albedo) in enumerate(records):
            sel = which[idx] == gi
            if not sel.any():
                continue
            rows = idx[sel]
            rgb[rows] = np.asarray(albedo)[None, :] * shade[sel][:, None]
            feat[rows, fid] = 1.0
            inst[rows] = inst_id
        depth[idx] = np.minimum(t_best[idx] / camera.far, 1.0)

    return GroundTruthView(
        rgb=rgb.reshape(h, w, 3).astype(np.float32),
        depth=depth.reshape(h, w).astype(np.float32),
        feature=feat.reshape(h, w, feature_dim).astype(np.float32),
        instance=inst.reshape(h, w),
        camera=camera,
    )


def make_dataset(scene, n_views=20, resolution=64, orbit_radius=2.0,
                 elevation_deg=30.0, feature_dim=8, fov_deg=50.0):
    """Trace `n_views` cameras on an orbit with evenly spaced azimuths, all
    looking at the origin. rgb is quantized to the 8-bit grid so the PNG
    round trip is bit-exact.
    """
    if n_views < 2:
        raise ConfigurationError(f"n_views must be >= 2, got {n_views}")
    check_positive(resolution, "resolution")
    views = []
    for i in range(n_views):
        cam = orbit_camera(360.0 * i / n_views, elevation_deg, orbit_radius,
                           resolution, fov_deg=fov_deg)
        v = trace_ground_truth(scene, cam, feature_dim=feature_dim)
        v.rgb = (np.round(v.rgb * 255.0) / 255.0).astype(np.float32)
        views.append(v)
    return Dataset(views=views, feature_dim=feature_dim)


def perturb_depth(view, scale, shift, noise_sd, seed=0):
    """clamp(scale * depth + shift + N(0, noise_sd), 0, 1), deterministic per seed.

    Emulates the affine ambiguity and noise of a monocular depth predictor.
    """
    check_positive(scale, "scale")
    depth = view.depth if hasattr(view, "depth") else np.asarray(view)
    out = scale * depth.astype(np.float64) + shift
    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sd, size=depth.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---- on-disk format ----

def write_dataset(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    meta = {"version": META_VERSION,
            "resolution": list(ds.resolution),
            "feature_dim": ds.feature_dim,
            "views": []}
    for i, v in enumerate(ds.views):
        names = {"rgb": f"rgb_{i:03d}.png", "depth": f"depth_{i:03d}.bin",
                 "feature": f"feat_{i:03d}.bin", "instance": f"instance_{i:03d}.png"}
        save_png(os.path.join(out_dir, names["rgb"]), v.rgb)
        save_float_bin(os.path.join(out_dir, names["depth"]), v.depth)
        save_float_bin(os.path.join(out_dir, names["feature"]), v.feature)
        save_png(os.path.join(out_dir, names["instance"]), v.instance)
        rec = v.camera.to_meta()
        rec["files"] = names
        meta["views"].append(rec)
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)
    return out_dir


def load_dataset(in_dir):
    meta_path = os.path.join(in_dir, "meta.json")
    if not os.path.exists(meta_path):
        raise MissingFileError(f"missing meta file: {meta_path}")
    with open(meta_path, encoding="utf-8") as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{meta_path}: invalid json ({e})") from None
    if meta.get("version") != META_VERSION:
        raise FormatError(f"{meta_path}: unsupported version {meta.get('version')}")
    views = []
    d = int(meta["feature_dim"])
    for rec in meta["views"]:
        cam = Camera.from_meta(rec)
        names = rec["files"]
        rgb = load_png(os.path.join(in_dir, names["rgb"]))
        depth = load_float_bin(os.path.join(in_dir, names["depth"]))[:, :, 0]
        feat = load_float_bin(os.path.join(in_dir, names["feature"]))
        inst = load_png(os.path.join(in_dir, names["instance"]), as_float=False)
        if feat.shape[2] != d:
            raise FormatError(
                f"{names['feature']}: feature dim {feat.shape[2]} != meta {d}"
            )
        views.append(GroundTruthView(rgb=rgb.astype(np.float32), depth=depth,
                                     feature=feat, instance=inst.astype(np.uint8),
                                     camera=cam))
    return Dataset(views=views, feature_dim=d)


# ---- named scenes for the CLI and tests ----

def named_scene(name):
    scenes = {
        # the second sphere's chartreuse albedo sits one hue bin from the
        # "leaves" palette, so embedding-guidance effects on the surround are
        # measurable (a pure red/blue scene has zero coupling to green)
        "two_spheres": SceneSpec(
            primitives=(
                Primitive("sphere", (-0.45, 0.0, 0.05), 0.35, (0.85, 0.25, 0.18), 1),
                Primitive("sphere", (0.45, 0.12, -0.05), 0.28, (0.45, 0.62, 0.2), 2),
            ),
        ),
        "sphere_box": SceneSpec(
            primitives=(
                Primitive("sphere", (-0.45, 0.0, 0.05), 0.35, (0.85, 0.25, 0.18), 1),
                Primitive("box", (0.45, 0.05, -0.08), 0.26, (0.2, 0.4, 0.85), 2),
            ),
        ),
        "sphere_on_ground": SceneSpec(
            primitives=(
                Primitive("sphere", (0.0, 0.0, -0.1), 0.4, (0.85, 0.3, 0.2), 1),
            ),
            ground_plane=GroundPlane(height=-0.5, albedo=(0.35, 0.45, 0.3), feature_id=2),
        ),
    }
    if name not in scenes:
        raise ConfigurationError(
            f"unknown scene {name!r}; known: {sorted(scenes)}"
        )
    return scenes[name]
