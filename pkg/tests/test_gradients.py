"""Finite-difference contract: every scalar objective, chained through the
renderer into the flat parameter vector, matches 64-bit central differences
(h = 1e-4) within 1e-3 relative error on the miniature field.
"""

import numpy as np
import pytest

from raypaint.field import GradientBuffer
from raypaint.guidance import ToyPaletteEmbedder, clip_loss, clip_loss_grad
from raypaint.losses import (LossWeights, PixelBatch, color_loss, color_loss_grad,
                             depth_loss, depth_loss_grad, feature_loss,
                             feature_loss_grad, stage1_loss, stage1_loss_grad,
                             unmask_loss, unmask_loss_grad)
from raypaint.renderer import render_rays, render_rays_backward

from conftest import assert_grad_close, fd_theta_grad, make_mini_field, pick_param_indices

N_SAMPLES = 8


def _render(field, rays, need_feature=True, need_depth=True):
    return render_rays(field, rays, n_samples=N_SAMPLES, rng=None,
                       need_color=True, need_feature=need_feature,
                       need_depth=need_depth)


def _gt(mini_rays, dim, seed):
    rng = np.random.default_rng(seed)
    n = len(mini_rays)
    return rng.uniform(0.0, 1.0, (n, dim)) if dim > 1 else rng.uniform(0.0, 1.0, n)


def _check(mini_field, mini_rays, loss_fn, adjoint_fn, what, n_params=100):
    """loss_fn(outputs) -> scalar; adjoint_fn(outputs) -> dict of adjoints."""
    field = mini_field

    def value():
        res = _render(field, mini_rays)
        return loss_fn(res.outputs)

    res = _render(field, mini_rays)
    adjoints = adjoint_fn(res.outputs)
    grad = GradientBuffer(field)
    render_rays_backward(field, res, grad, **adjoints)
    idx = pick_param_indices(field, n_params)
    fd = fd_theta_grad(value, field.theta, idx)
    assert_grad_close(grad.values[idx], fd, what=what)


def test_color_loss_gradient(mini_field, mini_rays):
    gt = _gt(mini_rays, 3, 21)
    _check(mini_field, mini_rays,
           lambda out: color_loss(out["color"], gt),
           lambda out: {"d_color": color_loss_grad(out["color"], gt)[1]},
           "color_loss")


def test_feature_loss_gradient(mini_field, mini_rays):
    gt = _gt(mini_rays, 4, 22)
    _check(mini_field, mini_rays,
           lambda out: feature_loss(out["feature"], gt),
           lambda out: {"d_feature": feature_loss_grad(out["feature"], gt)[1]},
           "feature_loss")


def test_depth_loss_gradient(mini_field, mini_rays):
    gt = _gt(mini_rays, 1, 23)
    _check(mini_field, mini_rays,
           lambda out: depth_loss(out["depth"], gt),
           lambda out: {"d_depth": depth_loss_grad(out["depth"], gt)[1]},
           "depth_loss")


def test_stage1_loss_gradient(mini_field, mini_rays):
    cgt = _gt(mini_rays, 3, 24)
    fgt = _gt(mini_rays, 4, 25)
    dgt = _gt(mini_rays, 1, 26)
    w = LossWeights(feature=0.7, depth=0.3)

    def batch(out):
        return PixelBatch(color_pred=out["color"], color_gt=cgt,
                          feature_pred=out["feature"], feature_gt=fgt,
                          depth_pred=out["depth"], depth_gt=dgt)

    def adj(out):
        _, _, dc, df, dd = stage1_loss_grad(batch(out), w)
        return {"d_color": dc, "d_feature": df, "d_depth": dd}

    _check(mini_field, mini_rays,
           lambda out: stage1_loss(batch(out), w)[0], adj, "stage1_loss")


def test_unmask_loss_gradient(mini_field, mini_rays):
    gt = _gt(mini_rays, 3, 27)
    mask = (np.arange(len(mini_rays)) % 2).astype(np.float64)
    _check(mini_field, mini_rays,
           lambda out: unmask_loss(out["color"], gt, mask),
           lambda out: {"d_color": unmask_loss_grad(out["color"], gt, mask)[1]},
           "unmask_loss")


def test_clip_loss_gradient_through_renderer(mini_field, mini_rays):
    embedder = ToyPaletteEmbedder()
    mask = (np.arange(len(mini_rays)) % 3 == 0).astype(np.float64)
    keep = (mask < 0.5).astype(np.float64)[:, None]
    shape = (1, len(mini_rays), 3)

    def composite(out):
        return (out["color"] * keep).reshape(shape)

    def loss(out):
        return clip_loss(composite(out), "leaves", embedder)

    def adj(out):
        _, d_img = clip_loss_grad(composite(out), "leaves", embedder)
        return {"d_color": d_img.reshape(-1, 3) * keep}

    _check(mini_field, mini_rays, loss, adj, "clip_loss", n_params=80)


def test_composite_output_gradients(mini_field, mini_rays):
    """Random linear functionals of every composite output (C, F, depth,
    opacity) act as losses; their adjoints are the coefficients."""
    rng = np.random.default_rng(31)
    n = len(mini_rays)
    a = rng.normal(size=(n, 3))
    b = rng.normal(size=(n, 4))
    c = rng.normal(size=n)
    e = rng.normal(size=n)

    def loss(out):
        return (float(np.sum(a * out["color"])) + float(np.sum(b * out["feature"]))
                + float(np.sum(c * out["depth"])) + float(np.sum(e * out["opacity"])))

    def adj(out):
        return {"d_color": a, "d_feature": b, "d_depth": c, "d_opacity": e}

    _check(mini_field, mini_rays, loss, adj, "composite_outputs")


def test_gradient_buffer_additivity(mini_field, mini_rays):
    gt = _gt(mini_rays, 3, 33)
    res = _render(mini_field, mini_rays)
    _, d = color_loss_grad(res.outputs["color"], gt)
    g1 = GradientBuffer(mini_field)
    render_rays_backward(mini_field, res, g1, d_color=d)
    g2 = GradientBuffer(mini_field)
    render_rays_backward(mini_field, res, g2, d_color=d)
    render_rays_backward(mini_field, res, g2, d_color=d)
    np.testing.assert_array_equal(g2.values, 2.0 * g1.values)


def test_constant_loss_zero_gradient(mini_field, mini_rays):
    res = _render(mini_field, mini_rays)
    grad = GradientBuffer(mini_field)
    n = len(mini_rays)
    render_rays_backward(mini_field, res, grad, d_color=np.zeros((n, 3)),
                         d_feature=np.zeros((n, 4)), d_depth=np.zeros(n))
    assert np.all(grad.values == 0.0)


def test_pruned_path_matches_exact_gradients(mini_field, mini_rays):
    """The training-only weight-pruned path differs from the exact path by
    at most the pruning tolerance."""
    gt = _gt(mini_rays, 3, 34)
    exact = render_rays(mini_field, mini_rays, n_samples=N_SAMPLES, rng=None)
    pruned = render_rays(mini_field, mini_rays, n_samples=N_SAMPLES, rng=None,
                         min_weight=1e-5)
    _, d1 = color_loss_grad(exact.outputs["color"], gt)
    _, d2 = color_loss_grad(pruned.outputs["color"], gt)
    g1 = GradientBuffer(mini_field)
    g2 = GradientBuffer(mini_field)
    render_rays_backward(mini_field, exact, g1, d_color=d1)
    render_rays_backward(mini_field, pruned, g2, d_color=d2)
    assert np.max(np.abs(g1.values - g2.values)) < 1e-3 * max(np.abs(g1.values).max(), 1e-9)
