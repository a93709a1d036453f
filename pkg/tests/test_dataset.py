import os

import numpy as np
import pytest

from raypaint.cameras import Camera, look_at, orbit_camera
from raypaint.dataset import (GroundPlane, Primitive, SceneSpec, load_dataset,
                              make_dataset, named_scene, perturb_depth,
                              trace_ground_truth, write_dataset)
from raypaint.errors import ConfigurationError, FormatError, MissingFileError
from raypaint.imaging import load_float_bin, save_float_bin
from raypaint.renderer import gen_rays


# ---- brute-force ray-march oracle over the analytic SDF ----

def _prim_sdf(prim, pts):
    c = np.asarray(prim.center)
    if prim.shape == "sphere":
        return np.linalg.norm(pts - c, axis=-1) - prim.size
    q = np.abs(pts - c) - prim.size
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def march_oracle(scene, camera, step=1e-4, point_budget=2_000_000):
    """March every ray at a fixed step; report the first sample where the
    scene SDF goes non-positive (instance = closest primitive there)."""
    rays = gen_rays(camera)
    n = len(rays)
    t_hit = np.full(n, np.inf)
    inst = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    records = scene.instance_records()
    t_vals = np.arange(step, camera.far, step)
    start = 0
    while start < len(t_vals):
        if alive.size == 0:
            break
        chunk = max(256, point_budget // alive.size)
        ts = t_vals[start:start + chunk]
        start += chunk
        pts = rays.o[alive, None, :] + rays.d[alive, None, :] * ts[None, :, None]
        sdfs = np.stack([_prim_sdf(p, pts) for p in scene.primitives], axis=0)
        if scene.ground_plane is not None:
            sdfs = np.concatenate(
                [sdfs, (pts[..., 2] - scene.ground_plane.height)[None]], axis=0)
        best = sdfs.min(axis=0)
        hit_any = (best <= 0.0).any(axis=1)
        for local_i in np.flatnonzero(hit_any):
            ray = alive[local_i]
            j = int(np.argmax(best[local_i] <= 0.0))
            t_hit[ray] = ts[j]
            which = int(np.argmin(sdfs[:, local_i, j]))
            inst[ray] = records[which][0]
        alive = alive[~hit_any]
    depth = np.minimum(np.where(np.isfinite(t_hit), t_hit, camera.far) / camera.far, 1.0)
    h, w = camera.height, camera.width
    return depth.reshape(h, w), inst.reshape(h, w)


def _frontal_camera(distance=2.0, res=9, far=4.0):
    return Camera(width=res, height=res, fx=1.2 * res, fy=1.2 * res,
                  cx=res / 2.0, cy=res / 2.0,
                  cam_to_world=look_at((0.0, 0.0, distance), (0.0, 0.0, 0.0),
                                       up=(0.0, 1.0, 0.0)),
                  near=0.5, far=far)


def test_central_ray_hits_sphere_front():
    scene = SceneSpec(primitives=(Primitive("sphere", (0, 0, 0), 0.5, (1, 0, 0), 1),))
    cam = _frontal_camera()
    view = trace_ground_truth(scene, cam)
    assert view.instance[4, 4] == 1
    np.testing.assert_allclose(view.depth[4, 4], 1.5 / 4.0, atol=1e-6)


def test_miss_gets_background():
    scene = SceneSpec(
        primitives=(Primitive("sphere", (0, 0, 0), 0.2, (1, 0, 0), 1),),
        background_color=(0.1, 0.2, 0.3),
    )
    cam = _frontal_camera()
    view = trace_ground_truth(scene, cam)
    assert view.instance[0, 0] == 0
    np.testing.assert_allclose(view.rgb[0, 0], (0.1, 0.2, 0.3), atol=1e-6)
    assert view.depth[0, 0] == 1.0
    np.testing.assert_array_equal(view.feature[0, 0], 0.0)


def test_trace_matches_march_oracle_32():
    """Module invariant: exact instance agreement and depth within 2e-4 of
    the 1e-4-step SDF march on a 32x32 view."""
    scene = named_scene("two_spheres")
    cam = orbit_camera(25.0, 30.0, 2.0, resolution=32)
    view = trace_ground_truth(scene, cam)
    depth_o, inst_o = march_oracle(scene, cam)
    np.testing.assert_array_equal(view.instance, inst_o)
    assert np.max(np.abs(view.depth - depth_o)) < 2e-4


@pytest.mark.slow
def test_trace_matches_march_oracle_full_view():
    scene = named_scene("two_spheres")
    cam = orbit_camera(70.0, 30.0, 2.0, resolution=64)
    view = trace_ground_truth(scene, cam)
    depth_o, inst_o = march_oracle(scene, cam)
    np.testing.assert_array_equal(view.instance, inst_o)
    assert np.max(np.abs(view.depth - depth_o)) < 2e-4


def test_instance_partition_and_feature_orthogonality(tiny_dataset):
    for v in tiny_dataset.views:
        ids = np.unique(v.instance)
        feats = {i: v.feature[v.instance == i][0] for i in ids}
        for i in ids:
            rows = v.feature[v.instance == i]
            assert np.all(rows == rows[0])
        nz = [i for i in ids if i != 0]
        for a in nz:
            assert abs(np.linalg.norm(feats[a]) - 1.0) < 1e-6
            for b in nz:
                if a < b:
                    assert abs(feats[a] @ feats[b]) < 1e-9
        if 0 in feats:
            np.testing.assert_array_equal(feats[0], 0.0)


def test_make_dataset_orbit_geometry():
    ds = make_dataset(named_scene("two_spheres"), n_views=8, resolution=16,
                      orbit_radius=2.0, elevation_deg=30.0)
    el = np.deg2rad(30.0)
    for i, cam in enumerate(ds.cameras):
        az = np.deg2rad(360.0 * i / 8)
        expect = 2.0 * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                                 np.sin(el)])
        np.testing.assert_allclose(cam.position, expect, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(cam.position), 2.0, atol=1e-12)


def test_make_dataset_deterministic():
    a = make_dataset(named_scene("sphere_box"), n_views=3, resolution=16)
    b = make_dataset(named_scene("sphere_box"), n_views=3, resolution=16)
    for va, vb in zip(a.views, b.views):
        np.testing.assert_array_equal(va.rgb, vb.rgb)
        np.testing.assert_array_equal(va.depth, vb.depth)
        np.testing.assert_array_equal(va.feature, vb.feature)
        np.testing.assert_array_equal(va.instance, vb.instance)


def test_make_dataset_validation():
    with pytest.raises(ConfigurationError):
        make_dataset(named_scene("two_spheres"), n_views=1)
    with pytest.raises(ConfigurationError):
        make_dataset(named_scene("two_spheres"), n_views=4, resolution=0)


def test_scene_validation():
    with pytest.raises(ConfigurationError):
        SceneSpec(primitives=())
    with pytest.raises(ConfigurationError):
        SceneSpec(primitives=(Primitive("sphere", (0.9, 0, 0), 0.5, (1, 0, 0), 1),))
    with pytest.raises(ConfigurationError):
        SceneSpec(primitives=(
            Primitive("sphere", (0, 0, 0), 0.2, (1, 0, 0), 1),
            Primitive("sphere", (0.5, 0, 0), 0.2, (0, 1, 0), 1),
        ))


def test_degenerate_camera_rejected():
    with pytest.raises(ConfigurationError):
        Camera(width=8, height=8, fx=8, fy=8, cx=4, cy=4,
               cam_to_world=np.eye(4), near=2.0, far=1.0)


def test_dataset_roundtrip_lossless(tiny_dataset, tmp_path):
    out = os.path.join(tmp_path, "ds")
    write_dataset(tiny_dataset, out)
    back = load_dataset(out)
    assert back.feature_dim == tiny_dataset.feature_dim
    for va, vb in zip(tiny_dataset.views, back.views):
        np.testing.assert_array_equal(va.rgb, vb.rgb)
        np.testing.assert_array_equal(va.depth, vb.depth)
        np.testing.assert_array_equal(va.feature, vb.feature)
        np.testing.assert_array_equal(va.instance, vb.instance)
        np.testing.assert_allclose(va.camera.cam_to_world, vb.camera.cam_to_world,
                                   atol=0.0)
        assert va.camera.near == vb.camera.near and va.camera.far == vb.camera.far


def test_truncated_float_buffer_rejected(tmp_path):
    path = os.path.join(tmp_path, "d.bin")
    save_float_bin(path, np.zeros((64, 64), dtype=np.float32))
    raw = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(raw[:-4])  # one float short
    with pytest.raises(FormatError, match="truncated"):
        load_float_bin(path)


def test_bad_magic_rejected(tmp_path):
    path = os.path.join(tmp_path, "d.bin")
    save_float_bin(path, np.zeros((4, 4), dtype=np.float32))
    raw = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_float_bin(path)


def test_meta_referencing_missing_file(tiny_dataset, tmp_path):
    out = os.path.join(tmp_path, "ds")
    write_dataset(tiny_dataset, out)
    os.remove(os.path.join(out, "rgb_002.png"))
    with pytest.raises(MissingFileError, match="rgb_002.png"):
        load_dataset(out)


def test_missing_meta(tmp_path):
    with pytest.raises(MissingFileError, match="meta.json"):
        load_dataset(os.path.join(tmp_path, "nowhere"))


def test_perturb_depth_identity_and_clamp():
    depth = np.array([[0.2, 0.95]], dtype=np.float32)
    np.testing.assert_array_equal(perturb_depth(depth, 1.0, 0.0, 0.0), depth)
    out = perturb_depth(depth, 1.0, 0.1, 0.0)
    np.testing.assert_allclose(out, [[0.3, 1.0]], atol=1e-7)
    with pytest.raises(ConfigurationError):
        perturb_depth(depth, 0.0, 0.0, 0.0)


def test_perturb_depth_noise_statistics():
    depth = np.full((1000, 1000), 0.5, dtype=np.float32)
    out = perturb_depth(depth, 1.0, 0.0, 0.05, seed=123)
    mean_shift = float(np.mean(out.astype(np.float64) - 0.5))
    assert abs(mean_shift) < 3 * (0.05 / 1000.0)
    assert abs(np.std(out.astype(np.float64)) - 0.05) < 5e-4


def test_perturb_depth_deterministic_per_seed():
    depth = np.full((32, 32), 0.4, dtype=np.float32)
    a = perturb_depth(depth, 1.1, 0.02, 0.03, seed=9)
    b = perturb_depth(depth, 1.1, 0.02, 0.03, seed=9)
    c = perturb_depth(depth, 1.1, 0.02, 0.03, seed=10)
    np.testing.assert_array_equal(a, b)
    assert np.any(a != c)


def test_ground_plane_scene():
    scene = named_scene("sphere_on_ground")
    cam = orbit_camera(0.0, 35.0, 2.0, resolution=16)
    view = trace_ground_truth(scene, cam)
    # plane id is n_primitives + 1 = 2; it must be visible below the horizon
    assert (view.instance == 2).any()
    assert (view.instance == 1).any()
