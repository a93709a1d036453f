"""Training orchestration: stage-1 distillation (color + feature + depth),
color-only base pretraining, the guided repaint loop, and evaluation metrics.

The three loops are sklearn-style estimators (get_params/set_params, fit
returns self, learned state in trailing-underscore attributes) so lambda
sweeps compose with the usual tooling; train_stage1 / pretrain_base /
repaint are thin functional wrappers over them.
"""

import csv
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigurationError, ContractViolation, NumericFault
from .field import AdamState, GradientBuffer, RadianceField, adam_step
from .guidance import clip_loss_grad, sds_pixel_grad
from .losses import LossWeights, PixelBatch, stage1_loss_grad, unmask_loss_grad
from .renderer import Rays, gen_rays, render_rays, render_rays_backward, render_view
from .validation import check_fitted, check_positive

# training-only speed knob: samples with compositing weight below this skip
# the color/feature heads (contributes < 64 * MIN_TRAIN_WEIGHT per pixel);
# exact paths pass 0.0 instead
MIN_TRAIN_WEIGHT = 1e-5

LOSS_CSV_FIELDS = ["step", "L_color", "L_feature", "L_depth", "L_unmask",
                   "L_clip", "sds_grad_norm"]


@dataclass
class JobStatus:
    job_id: str
    phase: str = "pretrain"          # pretrain | repaint | done | failed
    step: int = 0
    losses: dict = dc_field(default_factory=dict)
    preview_view: int = 0
    error: str = ""

    def to_json(self):
        return {"job_id": self.job_id, "phase": self.phase, "step": self.step,
                "losses": {k: float(v) for k, v in self.losses.items()},
                "preview_view": self.preview_view, "error": self.error}


class _LossLog:
    """Per-step loss rows, optionally mirrored to a CSV file."""

    def __init__(self, path=None):
        self.rows = []
        self._path = path
        self._fh = None
        self._writer = None
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            self._fh = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOSS_CSV_FIELDS)

    def add(self, step, color=0.0, feature=0.0, depth=0.0, unmask=0.0,
            clip=0.0, sds_norm=0.0):
        row = (step, color, feature, depth, unmask, clip, sds_norm)
        self.rows.append(row)
        if self._writer:
            self._writer.writerow([f"{v:.10g}" for v in row])

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _flatten_dataset(dataset, depth_maps=None):
    """Precompute per-pixel rays and supervision arrays over all views."""
    views = dataset.views
    h, w = dataset.resolution
    dirs, colors, feats, depths, origins, tn, tf = [], [], [], [], [], [], []
    for i, v in enumerate(views):
        rays = gen_rays(v.camera)
        dirs.append(rays.d)
        origins.append(rays.o)
        tn.append(rays.t_n)
        tf.append(rays.t_f)
        colors.append(v.rgb.reshape(-1, 3))
        feats.append(v.feature.reshape(-1, dataset.feature_dim))
        dmap = depth_maps[i] if depth_maps is not None else v.depth
        depths.append(np.asarray(dmap).reshape(-1))
    return {
        "o": np.concatenate(origins), "d": np.concatenate(dirs),
        "t_n": np.concatenate(tn), "t_f": np.concatenate(tf),
        "color": np.concatenate(colors).astype(np.float64),
        "feature": np.concatenate(feats).astype(np.float64),
        "depth": np.concatenate(depths).astype(np.float64),
        "pixels_per_view": h * w, "n_views": len(views),
    }


class Stage1Trainer(BaseEstimator):
    """Distill color + feature + depth into a fresh field (stage-1 objective
    color_loss + lambda_feature * feature_loss + lambda_depth * depth_loss).

    With depth_supervision=False the depth term is forced to zero (the
    depth-ablation arm). fit(dataset) leaves the trained field in `field_`
    and the per-step loss rows in `loss_trace_`.
    """

    def __init__(self, steps=2000, lr=1e-2, ray_batch=4096, lambda_feature=1.0,
                 lambda_depth=0.1, depth_supervision=True, seed=0, n_samples=64,
                 grid=None, feature_dim=None, log_path=None):
        self.steps = steps
        self.lr = lr
        self.ray_batch = ray_batch
        self.lambda_feature = lambda_feature
        self.lambda_depth = lambda_depth
        self.depth_supervision = depth_supervision
        self.seed = seed
        self.n_samples = n_samples
        self.grid = grid
        self.feature_dim = feature_dim
        self.log_path = log_path

    def fit(self, dataset, depth_maps=None, progress=None):
        check_positive(self.steps, "steps")
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.lr}")
        weights = LossWeights(
            feature=self.lambda_feature,
            depth=self.lambda_depth if self.depth_supervision else 0.0,
        )
        fdim = self.feature_dim or dataset.feature_dim
        rng = np.random.default_rng(self.seed)
        field = RadianceField(grid=self.grid, feature_dim=fdim, seed=self.seed)
        state = AdamState.for_field(field)
        grad = GradientBuffer(field)
        flat = _flatten_dataset(dataset, depth_maps)
        total = flat["n_views"] * flat["pixels_per_view"]
        log = _LossLog(self.log_path)
        need_feat = weights.feature > 0
        need_depth = weights.depth > 0
        last_good = field.theta.copy()
        try:
            for step in range(self.steps):
                idx = rng.integers(0, total, size=self.ray_batch)
                rays = Rays(o=flat["o"][idx], d=flat["d"][idx],
                            t_n=flat["t_n"][idx], t_f=flat["t_f"][idx],
                            pixels=np.zeros((self.ray_batch, 2), dtype=np.int64))
                res = render_rays(field, rays, n_samples=self.n_samples, rng=rng,
                                  need_color=True, need_feature=need_feat,
                                  need_depth=need_depth,
                                  min_weight=MIN_TRAIN_WEIGHT)
                batch = PixelBatch(
                    color_pred=res.outputs["color"], color_gt=flat["color"][idx],
                    feature_pred=res.outputs.get("feature"),
                    feature_gt=flat["feature"][idx] if need_feat else None,
                    depth_pred=res.outputs.get("depth"),
                    depth_gt=flat["depth"][idx] if need_depth else None,
                )
                val, parts, dcol, dfeat, ddep = stage1_loss_grad(batch, weights)
                if not np.isfinite(val):
                    field.theta[...] = last_good
                    raise NumericFault(
                        f"non-finite stage-1 loss at step {step}; "
                        f"field restored to last finite state"
                    )
                grad.zero_()
                render_rays_backward(field, res, grad, d_color=dcol,
                                     d_feature=dfeat, d_depth=ddep)
                grad.check_finite()
                adam_step(field.theta, grad.values, state, self.lr)
                log.add(step, color=parts["color"], feature=parts["feature"],
                        depth=parts["depth"])
                if step % 50 == 0:
                    last_good = field.theta.copy()
                    if progress:
                        progress(step, val)
        finally:
            log.close()
        self.field_ = field
        self.adam_state_ = state
        self.loss_trace_ = log.rows
        return self

    def render(self, camera, heads=("color",), n_samples=None):
        check_fitted(self, "field_")
        return render_view(self.field_, camera, heads=heads,
                           n_samples=n_samples or self.n_samples)


class BasePretrainer(BaseEstimator):
    """Color-only pretraining for the repaint base model: one whole training
    image per iteration, learning rate decaying linearly lr_start -> lr_end.
    Feature and depth heads receive no gradient.
    """

    def __init__(self, steps=3000, lr_start=1e-3, lr_end=1e-4, seed=0,
                 n_samples=64, grid=None, feature_dim=None, log_path=None):
        self.steps = steps
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.seed = seed
        self.n_samples = n_samples
        self.grid = grid
        self.feature_dim = feature_dim
        self.log_path = log_path

    def _lr(self, step):
        if self.steps <= 1:
            return self.lr_start
        f = step / (self.steps - 1)
        return self.lr_start + (self.lr_end - self.lr_start) * f

    def fit(self, dataset, progress=None):
        check_positive(self.steps, "steps")
        rng = np.random.default_rng(self.seed)
        fdim = self.feature_dim or dataset.feature_dim
        field = RadianceField(grid=self.grid, feature_dim=fdim, seed=self.seed)
        state = AdamState.for_field(field)
        grad = GradientBuffer(field)
        rays_per_view = [gen_rays(v.camera) for v in dataset.views]
        colors = [v.rgb.reshape(-1, 3).astype(np.float64) for v in dataset.views]
        log = _LossLog(self.log_path)
        weights = LossWeights(feature=0.0, depth=0.0)
        last_good = field.theta.copy()
        try:
            for step in range(self.steps):
                vi = int(rng.integers(0, len(dataset.views)))
                res = render_rays(field, rays_per_view[vi], n_samples=self.n_samples,
                                  rng=rng, need_color=True, need_feature=False,
                                  need_depth=False, min_weight=MIN_TRAIN_WEIGHT)
                batch = PixelBatch(color_pred=res.outputs["color"], color_gt=colors[vi])
                val, parts, dcol, _, _ = stage1_loss_grad(batch, weights)
                if not np.isfinite(val):
                    field.theta[...] = last_good
                    raise NumericFault(f"non-finite pretrain loss at step {step}")
                grad.zero_()
                render_rays_backward(field, res, grad, d_color=dcol)
                grad.check_finite()
                adam_step(field.theta, grad.values, state, self._lr(step))
                log.add(step, color=val)
                if step % 50 == 0:
                    last_good = field.theta.copy()
                    if progress:
                        progress(step, val)
        finally:
            log.close()
        self.field_ = field
        self.adam_state_ = state
        self.loss_trace_ = log.rows
        return self


class Repainter(BaseEstimator):
    """Stage-2 repaint: per step, render one full training view, accumulate
    the SDS pixel adjoint over the whole image plus the lambda-weighted
    unmask and embedding-loss adjoints, and take one Adam step.

    Ablation flags mirror the paper's arms: sds (denoiser guidance on/off),
    bgt_in_prompt (background fill in the prompt target on/off), clip
    (embedding loss on/off).
    """

    def __init__(self, prompt="a green sphere", bgt="leaves", lambda_unmask=100.0,
                 lambda_clip=1.0, repaint_steps=10000, lr_start=1e-3, lr_end=1e-4,
                 seed=0, n_samples=64, sds=True, bgt_in_prompt=True, clip=True,
                 w_fn=None, log_path=None, job_id="edit", preview_every=50,
                 status_cb=None):
        self.prompt = prompt
        self.bgt = bgt
        self.lambda_unmask = lambda_unmask
        self.lambda_clip = lambda_clip
        self.repaint_steps = repaint_steps
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.seed = seed
        self.n_samples = n_samples
        self.sds = sds
        self.bgt_in_prompt = bgt_in_prompt
        self.clip = clip
        self.w_fn = w_fn
        self.log_path = log_path
        self.job_id = job_id
        self.preview_every = preview_every
        self.status_cb = status_cb

    def _lr(self, step):
        if self.repaint_steps <= 1:
            return self.lr_start
        f = step / (self.repaint_steps - 1)
        return self.lr_start + (self.lr_end - self.lr_start) * f

    def fit(self, base_field, mask_set, dataset, denoiser, embedder, schedule):
        check_positive(self.repaint_steps, "repaint_steps")
        if self.lambda_unmask < 0 or self.lambda_clip < 0:
            raise ConfigurationError("lambda weights must be nonnegative")
        if self.clip and not self.bgt:
            raise ConfigurationError("clip loss enabled but no background prompt given")
        # fail before any optimization if the registries cannot resolve
        if self.sds:
            denoiser.resolve(self.prompt)
        if self.clip:
            embedder.embed_text(self.bgt)

        rng = np.random.default_rng(self.seed)
        field = base_field.clone()   # the base checkpoint is never mutated
        state = AdamState.for_field(field)
        grad = GradientBuffer(field)
        h, w = dataset.resolution
        rays_per_view = [gen_rays(v.camera) for v in dataset.views]
        gt_colors = [v.rgb.reshape(-1, 3).astype(np.float64) for v in dataset.views]
        masks = [m.reshape(-1).astype(np.float64) for m in mask_set.masks]
        log = _LossLog(self.log_path)
        status = JobStatus(job_id=self.job_id, phase="repaint")
        try:
            for step in range(self.repaint_steps):
                vi = int(rng.integers(0, len(dataset.views)))
                # deterministic bin-center sampling and the exact (unpruned)
                # path: the rendered image is a pure function of (theta, view)
                # and matches render_view bit for bit, so the toy denoiser's
                # fixed point (render == target -> zero update) is exact
                res = render_rays(field, rays_per_view[vi], n_samples=self.n_samples,
                                  rng=None, need_color=True, need_feature=False,
                                  need_depth=False)
                pred = res.outputs["color"]          # (H*W, 3)
                d_color = np.zeros_like(pred)
                sds_norm = 0.0
                if self.sds:
                    image = pred.reshape(h, w, 3)
                    t = schedule.sample_timestep(rng)
                    eps = rng.standard_normal((h, w, 3))
                    g = sds_pixel_grad(
                        image, self.prompt, t, eps,
                        denoiser.for_view(vi, include_fill=self.bgt_in_prompt),
                        schedule, w_fn=self.w_fn,
                    )
                    sds_norm = float(np.linalg.norm(g))
                    d_color += g.reshape(-1, 3)
                unmask_val = 0.0
                if self.lambda_unmask > 0:
                    unmask_val, d_um = unmask_loss_grad(pred, gt_colors[vi], masks[vi])
                    d_color += self.lambda_unmask * d_um
                clip_val = 0.0
                if self.clip and self.lambda_clip > 0:
                    keep = (masks[vi] < 0.5).astype(np.float64)[:, None]
                    composite = (pred * keep).reshape(h, w, 3)
                    clip_val, d_img = clip_loss_grad(composite, self.bgt, embedder)
                    d_color += self.lambda_clip * d_img.reshape(-1, 3) * keep
                if not np.all(np.isfinite(d_color)):
                    raise NumericFault(f"non-finite repaint adjoint at step {step}")
                grad.zero_()
                render_rays_backward(field, res, grad, d_color=d_color)
                grad.check_finite()
                adam_step(field.theta, grad.values, state, self._lr(step))
                log.add(step, unmask=unmask_val, clip=clip_val, sds_norm=sds_norm)
                status.step = step + 1
                status.losses = {"unmask": unmask_val, "clip": clip_val,
                                 "sds_grad_norm": sds_norm}
                status.preview_view = vi
                if self.status_cb and (step % self.preview_every == 0
                                       or step == self.repaint_steps - 1):
                    self.status_cb(status, pred.reshape(h, w, 3))
        except Exception as e:
            status.phase = "failed"
            status.error = str(e)
            if self.status_cb:
                self.status_cb(status, None)
            raise
        finally:
            log.close()
        status.phase = "done"
        if self.status_cb:
            self.status_cb(status, None)
        self.field_ = field
        self.loss_trace_ = log.rows
        self.status_ = status
        return self


# ---- functional wrappers (single source of truth for CLI / HTTP) ----

def train_stage1(dataset, depth_maps=None, **params):
    return Stage1Trainer(**params).fit(dataset, depth_maps=depth_maps)


def pretrain_base(dataset, **params):
    return BasePretrainer(**params).fit(dataset)


def repaint(base_field, mask_set, dataset, denoiser, embedder, schedule, **params):
    return Repainter(**params).fit(base_field, mask_set, dataset, denoiser,
                                   embedder, schedule)


# ---- metrics ----

PSNR_CAP = 99.0


def eval_psnr(img_a, img_b, region=None):
    """10*log10(1/MSE) for images in [0,1]; identical images report the
    99.0 dB sentinel. `region` restricts to a boolean/0-1 mask."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"image shapes differ: {a.shape} vs {b.shape}")
    if region is not None:
        region = np.asarray(region).astype(bool)
        if region.shape != a.shape[:region.ndim]:
            raise ContractViolation("region mask shape mismatch")
        if not region.any():
            raise ContractViolation("empty region for PSNR")
        a, b = a[region], b[region]
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def eval_iou(mask_a, mask_b):
    """|A & B| / |A | B|; two empty masks agree perfectly (1.0)."""
    a = np.asarray(mask_a).astype(bool)
    b = np.asarray(mask_b).astype(bool)
    if a.shape != b.shape:
        raise ContractViolation(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
