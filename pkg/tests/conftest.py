import numpy as np
import pytest

from raypaint.cameras import orbit_camera
from raypaint.dataset import make_dataset, named_scene
from raypaint.field import HashGridConfig, RadianceField
from raypaint.renderer import Rays, gen_rays

# one line per acceptance criterion, echoed after the run (see the
# pytest_terminal_summary hook below)
ACCEPTANCE_REPORT = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)


def make_mini_field(seed=7):
    """Miniature float64 field for finite-difference checks:
    2 levels, table 2^8, width-16 heads, 4-dim features, generic theta."""
    grid = HashGridConfig(n_levels=2, base_resolution=4, per_level_scale=1.5,
                          table_size=2 ** 8, feats_per_level=2)
    f = RadianceField(grid=grid, feature_dim=4, head_width=16, seed=seed,
                      dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    f.theta[...] = rng.normal(0.0, 0.25, f.theta.shape)
    return f


@pytest.fixture
def mini_field():
    return make_mini_field()


@pytest.fixture
def mini_rays():
    cam = orbit_camera(30.0, 20.0, 2.0, resolution=8)
    rng = np.random.default_rng(11)
    pix = np.stack([rng.integers(0, 8, 6), rng.integers(0, 8, 6)], axis=1)
    return gen_rays(cam, pix)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small traced dataset shared by io/pipeline tests."""
    return make_dataset(named_scene("two_spheres"), n_views=6, resolution=24,
                        feature_dim=8)


def fd_theta_grad(loss_fn, theta, indices, h=1e-4):
    """Central finite differences of a scalar loss over selected parameters."""
    out = np.empty(len(indices))
    for n, i in enumerate(indices):
        old = theta[i]
        theta[i] = old + h
        lp = loss_fn()
        theta[i] = old - h
        lm = loss_fn()
        theta[i] = old
        out[n] = (lp - lm) / (2.0 * h)
    return out


def assert_grad_close(analytic, fd, rtol=1e-3, what=""):
    """|a - f| <= rtol * max(|a|, |f|) + atol, atol scaled to the gradient
    magnitude so untouched (zero/zero) parameters pass trivially."""
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
    denom = np.maximum(np.abs(analytic), np.abs(fd))
    bad = np.abs(analytic - fd) > rtol * denom + 1e-6 * scale
    assert not bad.any(), (
        f"{what}: {bad.sum()} of {bad.size} gradient entries off; worst "
        f"analytic={analytic[bad][0]:.6g} fd={fd[bad][0]:.6g}"
    )


def pick_param_indices(field, n, seed=5):
    """Random parameter indices biased so every head is represented."""
    rng = np.random.default_rng(seed)
    idx = set(rng.integers(0, field.n_params, n // 2).tolist())
    names = [entry[0] for entry in field._layout]
    for name in names:
        off, shape = next((o, s) for nm, o, s in field._layout if nm == name)
        size = int(np.prod(shape))
        idx.update((off + rng.integers(0, size, max(2, n // (2 * len(names))))).tolist())
    return sorted(idx)[:n + 20]
