"""Ray generation, stratified sampling, and differentiable compositing of
color / feature / depth along rays.

composite() implements the discretized volume-rendering quadrature
    alpha_i = 1 - exp(-sigma_i * delta_i)
    T_i     = exp(-sum_{j<i} sigma_j delta_j)
    w_i     = T_i * alpha_i
with depth filling residual transmittance at the far plane, so empty rays
report depth exactly 1.0 (the dataset convention). composite_backward is the
hand-derived adjoint; render_rays / render_rays_backward glue the field's
heads to the quadrature for the training loops.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .field import GEO_DIM, dir_encode
from .validation import check_positive

__all__ = [
    "Rays", "gen_rays", "sample_stratified", "composite", "composite_backward",
    "render_rays", "render_rays_backward", "render_view",
]


@dataclass
class Rays:
    o: np.ndarray        # (R, 3)
    d: np.ndarray        # (R, 3) unit
    t_n: np.ndarray      # (R,)
    t_f: np.ndarray      # (R,)
    pixels: np.ndarray   # (R, 2) int (row, col)

    def __len__(self):
        return self.o.shape[0]


def gen_rays(camera, pixels=None):
    """Through-pixel-center world-space rays; t_n/t_f from the camera.

    pixels: (K, 2) int array of (row, col), or None for every pixel in
    row-major order.
    """
    if pixels is None:
        rr, cc = np.mgrid[0:camera.height, 0:camera.width]
        pixels = np.stack([rr.ravel(), cc.ravel()], axis=1)
    else:
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if (pixels[:, 0] < 0).any() or (pixels[:, 0] >= camera.height).any() \
           or (pixels[:, 1] < 0).any() or (pixels[:, 1] >= camera.width).any():
            raise ContractViolation("pixel selection outside image bounds")
    d = camera.pixel_dirs(pixels[:, 0], pixels[:, 1])
    r = pixels.shape[0]
    o = np.broadcast_to(camera.position, (r, 3)).copy()
    return Rays(
        o=o, d=d,
        t_n=np.full(r, camera.near, dtype=np.float64),
        t_f=np.full(r, camera.far, dtype=np.float64),
        pixels=pixels,
    )


def sample_stratified(rays, n_samples=64, rng=None):
    """One t per equal bin of [t_n, t_f]: bin centers, or uniform within the
    bin when an rng is supplied. Returns t (R, S) ascending and delta (R, S)
    with delta_i = t_{i+1} - t_i and the last delta = t_f - t_N.
    """
    check_positive(n_samples, "n_samples")
    r = len(rays)
    span = (rays.t_f - rays.t_n)[:, None]
    edges = np.arange(n_samples, dtype=np.float64)[None, :] / n_samples
    if rng is None:
        offs = np.full((r, n_samples), 0.5 / n_samples)
    else:
        offs = rng.random((r, n_samples)) / n_samples
    t = rays.t_n[:, None] + (edges + offs) * span
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = rays.t_f - t[:, -1]
    return t, delta


class CompositeCache:
    __slots__ = ("sigma", "delta", "t", "t_f", "trans", "alpha", "weights",
                 "color", "feature")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def composite(sigma, t, delta, t_f, color=None, feature=None, want_depth=True):
    """Composite per-sample quantities into per-ray outputs.

    sigma (R, S), t (R, S), delta (R, S), t_f (R,); color (R, S, 3) and
    feature (R, S, D) optional. Returns a dict with keys among
    {color, feature, depth, opacity, weights} plus a cache for the adjoint.
    """
    sigma = np.asarray(sigma)
    if (sigma < 0).any():
        raise ContractViolation("negative sigma in composite")
    if (delta <= 0).any():
        raise ContractViolation("non-positive segment length in composite")
    s = sigma * delta
    alpha = -np.expm1(-s)                      # 1 - exp(-sigma*delta)
    acc = np.cumsum(s, axis=1)
    trans = np.empty_like(s)
    trans[:, 0] = 1.0
    trans[:, 1:] = np.exp(-acc[:, :-1])        # T_i = exp(-sum_{j<i} s_j)
    weights = trans * alpha
    opacity = weights.sum(axis=1)
    out = {"opacity": opacity, "weights": weights}
    if color is not None:
        out["color"] = np.einsum("rs,rsc->rc", weights, color, optimize=True)
    if feature is not None:
        out["feature"] = np.einsum("rs,rsc->rc", weights, feature, optimize=True)
    if want_depth:
        out["depth"] = (weights * (t / t_f[:, None])).sum(axis=1) + (1.0 - opacity)
    cache = CompositeCache(sigma=sigma, delta=delta, t=t, t_f=t_f, trans=trans,
                           alpha=alpha, weights=weights, color=color, feature=feature)
    return out, cache


def composite_backward(cache, d_color=None, d_feature=None, d_depth=None,
                       d_opacity=None):
    """Adjoint of composite: per-ray output adjoints -> per-sample adjoints.

    Returns (d_sigma (R,S), d_sample_color (R,S,3)|None, d_sample_feature|None).
    """
    w = cache.weights
    r, s = w.shape
    a = np.zeros((r, s))                       # dL/dw_i
    d_sc = d_sf = None
    if d_color is not None:
        a += np.einsum("rc,rsc->rs", d_color, cache.color, optimize=True)
        d_sc = w[:, :, None] * d_color[:, None, :]
    if d_feature is not None:
        a += np.einsum("rc,rsc->rs", d_feature, cache.feature, optimize=True)
        d_sf = w[:, :, None] * d_feature[:, None, :]
    if d_depth is not None:
        a += d_depth[:, None] * (cache.t / cache.t_f[:, None] - 1.0)
    if d_opacity is not None:
        a += d_opacity[:, None]
    aw = a * w
    # suffix_i = sum_{j>i} a_j w_j
    suffix = np.zeros_like(aw)
    suffix[:, :-1] = np.cumsum(aw[:, ::-1], axis=1)[:, ::-1][:, 1:]
    ds = (cache.trans - w) * a - suffix        # dL/d(sigma_i*delta_i)
    d_sigma = ds * cache.delta
    return d_sigma, d_sc, d_sf


class RenderResult:
    """Forward products plus everything needed to run the adjoint."""

    __slots__ = ("outputs", "rays", "t", "delta", "density_cache", "comp_cache",
                 "survivors", "appearance_cache", "n_samples", "denc_rays")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def render_rays(field, rays, n_samples=64, rng=None, need_color=True,
                need_feature=True, need_depth=True, min_weight=0.0):
    """Differentiable render of a ray batch against the field.

    min_weight > 0 skips the color/feature heads for samples whose
    compositing weight is at most that threshold (their contribution is
    dropped from the sums); 0.0 is the exact path.
    """
    r = len(rays)
    t, delta = sample_stratified(rays, n_samples, rng=rng)
    o32 = rays.o.astype(field.dtype)
    d32 = rays.d.astype(field.dtype)
    x = (o32[:, None, :] + d32[:, None, :] * t[:, :, None].astype(field.dtype)).reshape(-1, 3)
    sigma_flat, dcache = field.density(x)
    sigma = sigma_flat.reshape(r, n_samples).astype(np.float64)

    # weights first so the appearance pass can prune
    s = sigma * delta
    alpha = -np.expm1(-s)
    acc = np.cumsum(s, axis=1)
    trans = np.empty_like(s)
    trans[:, 0] = 1.0
    trans[:, 1:] = np.exp(-acc[:, :-1])
    weights = trans * alpha

    if min_weight > 0.0:
        survivors = np.flatnonzero(weights.reshape(-1) > min_weight)
    else:
        survivors = None  # all samples

    denc_rays = None
    color_s = feat_s = acache = None
    if need_color or need_feature:
        if need_color:
            denc_rays = dir_encode(rays.d, dtype=field.dtype)
        if survivors is None:
            geo_sel = dcache.geo
            denc_sel = (np.repeat(denc_rays, n_samples, axis=0)
                        if need_color else None)
        else:
            geo_sel = dcache.geo[survivors]
            denc_sel = denc_rays[survivors // n_samples] if need_color else None
        color_s, feat_s, acache = field.appearance(
            geo_sel, denc_sel, need_color=need_color, need_feature=need_feature
        )

    def scatter(values, dim):
        if values is None:
            return None
        full = np.zeros((r * n_samples, dim))
        if survivors is None:
            full[...] = values
        else:
            full[survivors] = values
        return full.reshape(r, n_samples, dim)

    color_full = scatter(color_s, 3) if need_color else None
    feat_full = scatter(feat_s, field.feature_dim) if need_feature else None

    outputs = {"opacity": weights.sum(axis=1), "weights": weights}
    if need_color:
        outputs["color"] = np.einsum("rs,rsc->rc", weights, color_full, optimize=True)
    if need_feature:
        outputs["feature"] = np.einsum("rs,rsc->rc", weights, feat_full, optimize=True)
    if need_depth:
        outputs["depth"] = (weights * (t / rays.t_f[:, None])).sum(axis=1) \
            + (1.0 - outputs["opacity"])

    comp_cache = CompositeCache(sigma=sigma, delta=delta, t=t, t_f=rays.t_f,
                                trans=trans, alpha=alpha, weights=weights,
                                color=color_full, feature=feat_full)
    return RenderResult(outputs=outputs, rays=rays, t=t, delta=delta,
                        density_cache=dcache, comp_cache=comp_cache,
                        survivors=survivors, appearance_cache=acache,
                        n_samples=n_samples, denc_rays=denc_rays)


def render_rays_backward(field, result, grad, d_color=None, d_feature=None,
                         d_depth=None, d_opacity=None, min_ray_adjoint=0.0):
    """Chain per-ray output adjoints through compositing and the field heads
    into the gradient buffer.

    min_ray_adjoint > 0 drops entire rays from the density backward when the
    largest |d sigma| on the ray is at most the threshold; 0.0 is exact.
    """
    d_sigma, d_sc, d_sf = composite_backward(
        result.comp_cache, d_color=d_color, d_feature=d_feature,
        d_depth=d_depth, d_opacity=d_opacity,
    )
    r, s = d_sigma.shape
    n = r * s
    dcol_sel = dft_sel = None
    if result.appearance_cache is not None:
        if result.survivors is None:
            dcol_sel = d_sc.reshape(n, 3) if d_sc is not None else None
            dft_sel = d_sf.reshape(n, -1) if d_sf is not None else None
        else:
            sel = result.survivors
            if d_sc is not None:
                dcol_sel = d_sc.reshape(n, 3)[sel]
            if d_sf is not None:
                dft_sel = d_sf.reshape(n, -1)[sel]
        dgeo_sel = field.appearance_backward(
            result.appearance_cache, dcol_sel, dft_sel, grad
        )
    else:
        dgeo_sel = None

    dgeo_full = np.zeros((n, GEO_DIM), dtype=field.dtype)
    if dgeo_sel is not None:
        if result.survivors is None:
            dgeo_full[...] = dgeo_sel
        else:
            dgeo_full[result.survivors] = dgeo_sel

    dsig_flat = d_sigma.reshape(-1).astype(field.dtype)
    dc = result.density_cache
    if min_ray_adjoint > 0.0:
        ray_mag = np.abs(d_sigma).max(axis=1)
        keep = np.flatnonzero(ray_mag > min_ray_adjoint)
        if keep.size == 0:
            return grad
        if keep.size < r:
            idx = (keep[:, None] * s + np.arange(s)[None, :]).reshape(-1)
            sub = _DensitySubset(dc, idx)
            field.density_backward(sub, dsig_flat[idx], dgeo_full[idx], grad)
            return grad
    field.density_backward(dc, dsig_flat, dgeo_full, grad)
    return grad


class _DensitySubset:
    """Row-subset view of a density cache for ray-sparse backward passes."""

    __slots__ = ("x", "enc", "h0", "sigma", "geo")

    def __init__(self, cache, idx):
        self.x = np.ascontiguousarray(cache.x[idx])
        self.enc = np.ascontiguousarray(cache.enc[idx])
        self.h0 = np.ascontiguousarray(cache.h0[idx])
        self.sigma = cache.sigma[idx]
        self.geo = cache.geo[idx]


def render_view(field, camera, heads=("color", "feature", "depth", "opacity"),
                n_samples=64, chunk=8192):
    """Deterministic full-view render; returns image planes keyed by head.

    color -> (H, W, 3); feature -> (H, W, D); depth / opacity -> (H, W).
    Requesting a subset of heads skips the other heads' arithmetic but the
    values are identical to a full render (shared weights).
    """
    need_color = "color" in heads
    need_feature = "feature" in heads
    rays_all = gen_rays(camera)
    planes = {}
    total = len(rays_all)
    parts = {h: [] for h in heads}
    for start in range(0, total, chunk):
        sl = slice(start, min(start + chunk, total))
        rays = Rays(o=rays_all.o[sl], d=rays_all.d[sl], t_n=rays_all.t_n[sl],
                    t_f=rays_all.t_f[sl], pixels=rays_all.pixels[sl])
        res = render_rays(field, rays, n_samples=n_samples, rng=None,
                          need_color=need_color, need_feature=need_feature,
                          need_depth="depth" in heads)
        for h in heads:
            parts[h].append(res.outputs[h])
    h_img, w_img = camera.height, camera.width
    for h in heads:
        flat = np.concatenate(parts[h], axis=0)
        if flat.ndim == 1:
            planes[h] = flat.reshape(h_img, w_img)
        else:
            planes[h] = flat.reshape(h_img, w_img, flat.shape[1])
    return planes
