import os

import numpy as np
import pytest

from raypaint.errors import ConfigurationError, ContractViolation, FormatError, NumericFault
from raypaint.field import (AdamState, GradientBuffer, HashGridConfig, RadianceField,
                            adam_step, load_checkpoint, save_checkpoint, softplus)

from conftest import make_mini_field

# independent reimplementation of the corner hash (uint32 wraparound)
PX, PY, PZ = 73856093, 19349663, 83492791
M32 = 0xFFFFFFFF


def corner_hash(cx, cy, cz, table_size):
    return (((cx * PX) & M32) ^ ((cy * PY) & M32) ^ ((cz * PZ) & M32)) & (table_size - 1)


def test_grid_config_validation():
    with pytest.raises(ConfigurationError):
        HashGridConfig(table_size=1000)      # not a power of two
    with pytest.raises(ConfigurationError):
        HashGridConfig(per_level_scale=1.0)
    with pytest.raises(ConfigurationError):
        HashGridConfig(n_levels=0)


def test_hash_encode_at_grid_corner(mini_field):
    f = mini_field
    g = f.grid
    res = g.resolutions()
    lo = np.asarray(g.bounds_lo)
    hi = np.asarray(g.bounds_hi)
    table = f.view("grid")
    for level in range(g.n_levels):
        r = res[level]
        corner = np.array([1, 2, 1]) % (r + 1)
        x = lo + (hi - lo) * corner / r
        enc = f.hash_encode(x[None, :])[0]
        h = corner_hash(*corner, g.table_size)
        np.testing.assert_allclose(
            enc[level * 2:(level + 1) * 2], table[level, h], atol=1e-10
        )


def test_hash_encode_at_cell_center(mini_field):
    f = mini_field
    g = f.grid
    res = g.resolutions()
    lo = np.asarray(g.bounds_lo)
    hi = np.asarray(g.bounds_hi)
    table = f.view("grid")
    for level in range(g.n_levels):
        r = res[level]
        cell = np.array([0, 1, 2]) % r
        x = lo + (hi - lo) * (cell + 0.5) / r
        enc = f.hash_encode(x[None, :])[0]
        corners = [table[level, corner_hash(cell[0] + dx, cell[1] + dy, cell[2] + dz,
                                            g.table_size)]
                   for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]
        np.testing.assert_allclose(
            enc[level * 2:(level + 1) * 2], np.mean(corners, axis=0), atol=1e-10
        )


def test_hash_encode_directional_derivative(mini_field):
    f = mini_field
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.0, 1.0, (20, 3))
    v = np.array([1.0, 0.0, 0.0])
    h = 1e-4
    analytic = f.hash_encode_grad_x(x)[:, :, 0]
    fd = (f.hash_encode(x + h * v) - f.hash_encode(x - h * v)) / (2 * h)
    denom = np.maximum(np.abs(analytic), np.abs(fd))
    scale = max(denom.max(), 1e-12)
    assert np.all(np.abs(analytic - fd) <= 1e-3 * denom + 1e-6 * scale)


def test_hash_encode_continuity(mini_field):
    """No jumps across cell boundaries: |enc(x) - enc(x+delta)| <= K ||delta||
    with K measured from coarse differences."""
    f = mini_field
    rng = np.random.default_rng(4)
    x = rng.uniform(-1.3, 1.3, (200, 3))
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    coarse = np.abs(f.hash_encode(x + 5e-4 * d) - f.hash_encode(x - 5e-4 * d))
    k = coarse.max() / 1e-3 * 3.0 + 1e-9
    eps = 1e-6
    fine = np.abs(f.hash_encode(x + eps * d) - f.hash_encode(x))
    assert fine.max() <= k * eps


def test_hash_encode_clamps_outside_bounds(mini_field):
    f = mini_field
    far_out = np.array([[5.0, -3.0, 2.0]])
    clamped = np.array([[1.4, -1.4, 1.4]])
    np.testing.assert_array_equal(f.hash_encode(far_out), f.hash_encode(clamped))


def test_fresh_field_sigma_is_softplus_zero():
    f = RadianceField(seed=0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, (50, 3))
    ev = f.eval_points(x, d=np.array([0.0, 0.0, 1.0]), need_feature=False)
    np.testing.assert_allclose(ev.sigma, softplus(0.0), atol=1e-3)


def test_activation_ranges(mini_field):
    rng = np.random.default_rng(5)
    x = rng.uniform(-1.5, 1.5, (100, 3))
    d = rng.normal(size=(100, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ev = mini_field.eval_points(x, d)
    assert np.all(ev.sigma >= 0.0)
    assert np.all((ev.color >= 0.0) & (ev.color <= 1.0))


def test_feature_and_sigma_direction_invariant(mini_field):
    rng = np.random.default_rng(6)
    x = rng.uniform(-1.0, 1.0, (40, 3))
    d1 = rng.normal(size=(40, 3))
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    d2 = rng.normal(size=(40, 3))
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    e1 = mini_field.eval_points(x, d1)
    e2 = mini_field.eval_points(x, d2)
    assert np.max(np.linalg.norm(e1.feature - e2.feature, axis=1)) == 0.0
    assert np.max(np.abs(e1.sigma - e2.sigma)) == 0.0


def test_batched_equals_per_point(mini_field):
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.0, 1.0, (10, 3))
    d = rng.normal(size=(10, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    batch = mini_field.eval_points(x, d)
    for i in range(10):
        single = mini_field.eval_points(x[i:i + 1], d[i:i + 1])
        assert single.sigma[0] == batch.sigma[i]
        np.testing.assert_array_equal(single.color[0], batch.color[i])
        np.testing.assert_array_equal(single.feature[0], batch.feature[i])


def test_non_unit_direction_rejected(mini_field):
    with pytest.raises(ContractViolation):
        mini_field.eval_points(np.zeros((1, 3)), d=np.array([[0.0, 0.0, 2.0]]))


def test_adam_zero_grad_keeps_theta():
    f = RadianceField(seed=1)
    before = f.theta.copy()
    adam_step(f.theta, np.zeros_like(f.theta), AdamState.for_field(f), lr=1e-2)
    np.testing.assert_array_equal(f.theta, before)


def test_adam_first_step_is_signed_lr():
    f = make_mini_field()
    g = np.random.default_rng(8).normal(size=f.theta.shape)
    g[np.abs(g) < 1e-2] = 0.5    # keep |g| >> eps so the step is ~lr*sign(g)
    before = f.theta.copy()
    adam_step(f.theta, g, AdamState.for_field(f), lr=1e-3)
    delta = f.theta - before
    nz = g != 0
    np.testing.assert_allclose(delta[nz], -1e-3 * np.sign(g[nz]), rtol=1e-5)


def test_adam_deterministic_trajectory():
    runs = []
    for _ in range(2):
        f = make_mini_field()
        state = AdamState.for_field(f)
        rng = np.random.default_rng(9)
        for step in range(5):
            adam_step(f.theta, rng.normal(size=f.theta.shape), state, lr=1e-2)
        runs.append(f.theta.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_adam_rejects_bad_lr_and_shapes():
    f = make_mini_field()
    with pytest.raises(ConfigurationError):
        adam_step(f.theta, np.zeros_like(f.theta), AdamState.for_field(f), lr=0.0)
    bad = AdamState(m=np.zeros(3), v=np.zeros(3))
    with pytest.raises(ContractViolation):
        adam_step(f.theta, np.zeros_like(f.theta), bad, lr=1e-2)


def test_gradient_buffer_reports_nonfinite_parameter(mini_field):
    grad = GradientBuffer(mini_field)
    grad.values[1030] = np.nan
    with pytest.raises(NumericFault, match="1030"):
        grad.check_finite()


def test_checkpoint_roundtrip(tmp_path):
    f = RadianceField(seed=3)
    state = AdamState.for_field(f)
    state.m[...] = 0.25
    state.step = 17
    path = os.path.join(tmp_path, "f.rpck")
    save_checkpoint(path, f, adam_state=state)
    f2, s2 = load_checkpoint(path, with_adam=True)
    np.testing.assert_array_equal(f.theta.astype(np.float32), f2.theta)
    np.testing.assert_array_equal(s2.m, np.float32(0.25))
    assert s2.step == 17
    assert f2.grid == f.grid


def test_checkpoint_grid_mismatch(tmp_path):
    f = RadianceField(grid=HashGridConfig(n_levels=4), seed=0)
    path = os.path.join(tmp_path, "f.rpck")
    save_checkpoint(path, f)
    with pytest.raises(FormatError, match="n_levels.*expected 8.*got 4"):
        load_checkpoint(path, grid=HashGridConfig(n_levels=8))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    f = RadianceField(grid=HashGridConfig(n_levels=2, table_size=256), seed=0)
    path = os.path.join(tmp_path, "f.rpck")
    save_checkpoint(path, f)
    raw = open(path, "rb").read()
    bad = os.path.join(tmp_path, "bad.rpck")
    with open(bad, "wb") as fh:
        fh.write(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(bad)
    trunc = os.path.join(tmp_path, "trunc.rpck")
    with open(trunc, "wb") as fh:
        fh.write(raw[:len(raw) - 40])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(trunc)


def test_checkpoint_rerenders_identically(tmp_path):
    from raypaint.cameras import orbit_camera
    from raypaint.renderer import render_view
    f = RadianceField(grid=HashGridConfig(n_levels=3, table_size=512), seed=4)
    f.theta[...] = np.random.default_rng(10).normal(0, 0.2, f.theta.shape).astype(np.float32)
    path = os.path.join(tmp_path, "f.rpck")
    save_checkpoint(path, f)
    f2 = load_checkpoint(path)
    cam = orbit_camera(10.0, 25.0, 2.0, resolution=16)
    p1 = render_view(f, cam, heads=("color",), n_samples=16)
    p2 = render_view(f2, cam, heads=("color",), n_samples=16)
    np.testing.assert_array_equal(p1["color"], p2["color"])
