"""Diffusion noise schedule, score-distillation pixel gradients, an
embedding-similarity loss, and the analytically verifiable toy providers
that stand in for pretrained diffusion / CLIP models.

ToyDeltaDenoiser is the exact posterior denoiser for a point-mass data
distribution at a per-(prompt, view) target image T: its predicted noise is
(I_t - sqrt(ab_t) * T) / sqrt(1 - ab_t), which makes the SDS factor collapse
to w(t) * sqrt(ab_t / (1 - ab_t)) * (I - T) with the sampled noise cancelling
exactly -- the module's master algebraic property.

ToyPaletteEmbedder embeds images as unit-normalized 16-bin hue/saturation
histograms with triangular (piecewise-linear) binning so the similarity loss
is differentiable; pixels with luminance <= 0.02 contribute exactly nothing.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericFault
from .imaging import load_png

SQRT3_2 = np.sqrt(3.0) / 2.0


# ---- noise schedule ----

class NoiseSchedule:
    """Linear-beta DDPM schedule with cumulative products alpha_bar."""

    def __init__(self, t_max=1000, beta_start=1e-4, beta_end=2e-2):
        if t_max < 2:
            raise ConfigurationError("t_max must be >= 2")
        self.t_max = int(t_max)
        self.betas = np.linspace(beta_start, beta_end, self.t_max)
        self.alpha_bars = np.cumprod(1.0 - self.betas)
        if not np.all(np.diff(self.alpha_bars) < 0):
            raise ConfigurationError("alpha_bar must be strictly decreasing")
        if not self.alpha_bars[0] > 0.999:
            raise ConfigurationError(
                f"alpha_bar_1 = {self.alpha_bars[0]:.6f} must exceed 0.999"
            )
        if not self.alpha_bars[-1] < 0.01:
            raise ConfigurationError(
                f"alpha_bar_T = {self.alpha_bars[-1]:.6f} must be below 0.01"
            )
        self.t_low = int(np.ceil(0.02 * self.t_max))
        self.t_high = int(np.floor(0.98 * self.t_max))

    def alpha_bar(self, t):
        t = int(t)
        if not 1 <= t <= self.t_max:
            raise ContractViolation(f"t = {t} outside [1, {self.t_max}]")
        return float(self.alpha_bars[t - 1])

    def sample_timestep(self, rng):
        """Uniform integer in [0.02 T, 0.98 T]."""
        return int(rng.integers(self.t_low, self.t_high + 1))


def perturb_image(image, t, eps, schedule, literal_shift=False):
    """Forward-process a clean image to step t with the given unit noise.

    Standard form sqrt(ab_t) * I + sqrt(1 - ab_t) * eps; `literal_shift`
    selects the plain I + eps variant kept for comparison.
    """
    image = np.asarray(image, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != image.shape:
        raise ContractViolation(f"noise shape {eps.shape} != image shape {image.shape}")
    if literal_shift:
        schedule.alpha_bar(t)  # still validates the range
        return image + eps
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * image + np.sqrt(1.0 - ab) * eps


def sds_pixel_grad(image, prompt, t, eps, denoiser, schedule, w_fn=None,
                   literal_shift=False):
    """The w(t) * (eps_hat - eps) factor of the score-distillation gradient.

    The returned array is applied as the incoming adjoint of the rendered
    image by the field's backward pass; nothing propagates into the provider.
    """
    noisy = perturb_image(image, t, eps, schedule, literal_shift=literal_shift)
    eps_hat = np.asarray(denoiser.predict_noise(noisy, prompt, t), dtype=np.float64)
    w = 1.0 if w_fn is None else float(w_fn(t))
    if w < 0:
        raise ContractViolation("w(t) must be nonnegative")
    eps = np.asarray(eps, dtype=np.float64)
    diff = eps_hat - eps
    # clamp machine-cancellation residue to exactly zero: when the denoiser
    # reproduces the sampled noise (the provider's fixed point), the rounding
    # dust left by the forward/backward scaling must not leak into Adam,
    # whose scale invariance would amplify it into full-size steps
    dust = np.abs(diff) <= 1e-12 * (np.abs(eps_hat) + np.abs(eps) + 1.0)
    diff[dust] = 0.0
    g = w * diff
    if not np.all(np.isfinite(g)):
        raise NumericFault("denoiser produced a non-finite SDS gradient")
    return g


def sample_timestep(schedule, rng):
    """Uniform timestep in the schedule's clipped range, deterministic per rng."""
    return schedule.sample_timestep(rng)


def w_one_minus_alpha_bar(schedule):
    """Optional weighting w(t) = 1 - alpha_bar_t."""
    return lambda t: 1.0 - schedule.alpha_bar(t)


# ---- provider interfaces ----

class DenoiserProvider:
    """Interface: predict_noise(I_t, prompt, t) -> eps_hat, deterministic."""

    def predict_noise(self, noisy, prompt, t):
        raise NotImplementedError

    def for_view(self, view_index, include_fill=True):
        """Bind the provider to a training view; default providers are
        view-independent and return self."""
        return self

    def resolve(self, prompt):
        """Validate a prompt before optimization starts; default accepts all."""
        return None

    def known_prompts(self):
        return []


class EmbeddingProvider:
    """Interface: unit-norm image/text embeddings with dot-product similarity."""

    def embed_image(self, image):
        raise NotImplementedError

    def embed_text(self, prompt):
        raise NotImplementedError

    def sim(self, a, b):
        return float(np.dot(a, b))

    def embed_image_adjoint(self, image, d_embedding):
        raise NotImplementedError


# ---- toy denoiser ----

@dataclass(frozen=True)
class TargetSpec:
    """How a prompt paints the masked region of each view.

    kind: "palette" (flat color), "stripes" (two-color procedural stripes),
    or "image" (a supplied H x W x 3 array). shrink_px > 0 erodes the mask
    before painting, exposing a ring that is filled with fill_color when the
    background prompt is active (include_fill) and black otherwise.
    """
    kind: str = "palette"
    color: tuple = (0.2, 0.35, 0.9)
    colors: tuple = ((0.2, 0.35, 0.9), (0.9, 0.85, 0.2))
    period: int = 6
    axis: int = 0
    image: object = None
    shrink_px: int = 0
    fill_color: tuple = None

    @classmethod
    def from_json(cls, d):
        kw = dict(d)
        if "image" in kw and isinstance(kw["image"], str):
            kw["image"] = load_png(kw["image"])
        for key in ("color", "fill_color"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if "colors" in kw:
            kw["colors"] = tuple(tuple(c) for c in kw["colors"])
        return cls(**kw)


def binary_erode(mask, iterations):
    """3x3 erosion of a {0,1} mask, `iterations` times (outside = 0)."""
    m = (np.asarray(mask) >= 0.5)
    for _ in range(int(iterations)):
        p = np.pad(m, 1, constant_values=False)
        m = (p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
             & p[1:-1, 1:-1] & p[:-2, :-2] & p[:-2, 2:] & p[2:, :-2] & p[2:, 2:])
    return m


def _paint(spec, shape, view_index=0):
    h, w = shape
    if spec.kind == "palette":
        return np.broadcast_to(np.asarray(spec.color, dtype=np.float64), (h, w, 3)).copy()
    if spec.kind == "stripes":
        coords = np.arange(h)[:, None] if spec.axis == 0 else np.arange(w)[None, :]
        band = ((coords // max(spec.period, 1)) % 2).astype(np.float64)
        band = np.broadcast_to(band, (h, w))[:, :, None]
        c0 = np.asarray(spec.colors[0], dtype=np.float64)
        c1 = np.asarray(spec.colors[1], dtype=np.float64)
        return (1.0 - band) * c0 + band * c1
    if spec.kind == "image":
        img = spec.image
        if isinstance(img, (list, tuple)):      # one supplied image per view
            img = img[view_index]
        img = np.asarray(img, dtype=np.float64)
        if img.shape[:2] != (h, w):
            raise ConfigurationError(
                f"target image shape {img.shape[:2]} != view shape {(h, w)}"
            )
        return img[:, :, :3]
    raise ConfigurationError(f"unknown target kind {spec.kind!r}")


class ToyDeltaDenoiser(DenoiserProvider):
    """Exact posterior denoiser for a point mass at per-(prompt, view)
    target images; targets composite prompt content over the original
    unmasked pixels.

    views: list of (rgb, mask) pairs per training view (float images in
    [0, 1], mask in {0, 1}).
    """

    def __init__(self, schedule, registry, views):
        self.schedule = schedule
        self.registry = dict(registry)
        self.views = [(np.asarray(rgb, dtype=np.float64), np.asarray(m, dtype=np.float64))
                      for rgb, m in views]
        self._cache = {}

    def known_prompts(self):
        return sorted(self.registry)

    def resolve(self, prompt):
        if prompt not in self.registry:
            raise ConfigurationError(
                f"unknown prompt {prompt!r}; known prompts: {self.known_prompts()}"
            )
        return self.registry[prompt]

    def target_image(self, prompt, view_index=0, include_fill=True):
        key = (prompt, int(view_index), bool(include_fill))
        if key in self._cache:
            return self._cache[key]
        spec = self.resolve(prompt)
        rgb, mask = self.views[view_index]
        painted = _paint(spec, rgb.shape[:2], view_index)
        inner = mask >= 0.5
        if spec.shrink_px > 0:
            inner = binary_erode(mask, spec.shrink_px)
        target = rgb.copy()
        ring = (mask >= 0.5) & ~inner
        target[inner] = painted[inner]
        if ring.any():
            if include_fill and spec.fill_color is not None:
                target[ring] = np.asarray(spec.fill_color, dtype=np.float64)
            else:
                target[ring] = 0.0
        self._cache[key] = target
        return target

    def predict_noise(self, noisy, prompt, t, view_index=0, include_fill=True):
        ab = self.schedule.alpha_bar(t)
        target = self.target_image(prompt, view_index, include_fill)
        noisy = np.asarray(noisy, dtype=np.float64)
        if noisy.shape != target.shape:
            raise ContractViolation(
                f"noisy image shape {noisy.shape} != target shape {target.shape}"
            )
        return (noisy - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)

    def for_view(self, view_index, include_fill=True):
        return _ViewBoundDenoiser(self, view_index, include_fill)


class _ViewBoundDenoiser(DenoiserProvider):
    def __init__(self, base, view_index, include_fill):
        self.base = base
        self.view_index = view_index
        self.include_fill = include_fill

    def predict_noise(self, noisy, prompt, t):
        return self.base.predict_noise(noisy, prompt, t, self.view_index,
                                       self.include_fill)

    def target_image(self, prompt):
        return self.base.target_image(prompt, self.view_index, self.include_fill)

    def known_prompts(self):
        return self.base.known_prompts()


# ---- toy embedder ----

_LUM_ON = 0.02
_LUM_FULL = 0.04
_SAT_ON = 0.2
_SAT_FULL = 0.6
_N_HUE = 8
_HUE_H = 2.0 * np.pi / _N_HUE
_HUE_CENTERS = -np.pi + (np.arange(_N_HUE) + 0.5) * _HUE_H


class ToyPaletteEmbedder(EmbeddingProvider):
    """16-bin hue/saturation histogram embedder (8 hue x 2 saturation tiers),
    soft triangular binning, luminance gate that zeroes black pixels exactly.
    """

    E = 16
    REFERENCE = np.full(16, 0.25)  # all-black images embed here

    def __init__(self, palettes=None):
        self.palettes = dict(palettes) if palettes else dict(DEFAULT_PALETTES)
        self._text_cache = {}

    # forward pieces shared by value and adjoint
    def _pixel_terms(self, image):
        rgb = np.asarray(image, dtype=np.float64).reshape(-1, 3)
        r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
        lum = rgb.mean(axis=1)
        gate = np.clip((lum - _LUM_ON) / (_LUM_FULL - _LUM_ON), 0.0, 1.0)
        u = r - 0.5 * (g + b)
        v = SQRT3_2 * (g - b)
        phi = np.arctan2(v, u)
        chroma = np.hypot(u, v)
        sat = chroma / (lum + 1e-6)
        hi = np.clip((sat - _SAT_ON) / (_SAT_FULL - _SAT_ON), 0.0, 1.0)
        delta = np.mod(phi[:, None] - _HUE_CENTERS[None, :] + np.pi, 2 * np.pi) - np.pi
        tri = np.maximum(0.0, 1.0 - np.abs(delta) / _HUE_H)
        return rgb, lum, gate, u, v, phi, chroma, sat, hi, delta, tri

    def _histogram(self, image):
        _, _, gate, _, _, _, _, _, hi, _, tri = self._pixel_terms(image)
        lo = 1.0 - hi
        gt = gate[:, None] * tri
        hist = np.empty(16)
        hist[0::2] = (gt * lo[:, None]).sum(axis=0)
        hist[1::2] = (gt * hi[:, None]).sum(axis=0)
        return hist

    def embed_image(self, image):
        hist = self._histogram(image)
        norm = np.linalg.norm(hist)
        if norm < 1e-12:
            return self.REFERENCE.copy()
        return hist / norm

    def embed_text(self, prompt):
        if prompt not in self.palettes:
            raise ConfigurationError(
                f"unknown palette {prompt!r}; known palettes: {sorted(self.palettes)}"
            )
        if prompt not in self._text_cache:
            colors = self.palettes[prompt]
            if np.ndim(colors) == 1:
                colors = [colors]
            swatch = np.asarray(colors, dtype=np.float64).reshape(1, -1, 3)
            self._text_cache[prompt] = self.embed_image(swatch)
        return self._text_cache[prompt].copy()

    def embed_image_adjoint(self, image, d_embedding):
        """d(loss)/d(image) given d(loss)/d(embedding); zero for all-black."""
        image = np.asarray(image, dtype=np.float64)
        shape = image.shape
        rgb, lum, gate, u, v, phi, chroma, sat, hi, delta, tri = self._pixel_terms(image)
        lo = 1.0 - hi
        hist = np.empty(16)
        gt = gate[:, None] * tri
        hist[0::2] = (gt * lo[:, None]).sum(axis=0)
        hist[1::2] = (gt * hi[:, None]).sum(axis=0)
        norm = np.linalg.norm(hist)
        if norm < 1e-12:
            return np.zeros(shape)
        emb = hist / norm
        d_hist = (np.asarray(d_embedding) - np.dot(d_embedding, emb) * emb) / norm

        a_lo = d_hist[0::2]
        a_hi = d_hist[1::2]
        # per-pixel partials of hist contributions gate * tri_k * tier
        b = lo[:, None] * a_lo[None, :] + hi[:, None] * a_hi[None, :]   # (P, 8)
        d_gate = (tri * b).sum(axis=1)
        d_tri = gate[:, None] * b                                       # (P, 8)
        d_hi = gate * (tri * (a_hi - a_lo)[None, :]).sum(axis=1)

        dgate_dlum = np.where((lum > _LUM_ON) & (lum < _LUM_FULL),
                              1.0 / (_LUM_FULL - _LUM_ON), 0.0)
        dtri_dphi = np.where(np.abs(delta) < _HUE_H,
                             -np.sign(delta) / _HUE_H, 0.0)
        dhi_dsat = np.where((sat > _SAT_ON) & (sat < _SAT_FULL),
                            1.0 / (_SAT_FULL - _SAT_ON), 0.0)

        d_phi = (d_tri * dtri_dphi).sum(axis=1)
        d_sat = d_hi * dhi_dsat

        denom = u * u + v * v + 1e-12
        du = d_phi * (-v / denom)
        dv = d_phi * (u / denom)
        safe_chroma = np.maximum(chroma, 1e-9)
        du += d_sat * (u / safe_chroma) / (lum + 1e-6)
        dv += d_sat * (v / safe_chroma) / (lum + 1e-6)
        d_lum = d_gate * dgate_dlum - d_sat * chroma / (lum + 1e-6) ** 2

        d_rgb = np.empty_like(rgb)
        d_rgb[:, 0] = d_lum / 3.0 + du
        d_rgb[:, 1] = d_lum / 3.0 - 0.5 * du + SQRT3_2 * dv
        d_rgb[:, 2] = d_lum / 3.0 - 0.5 * du - SQRT3_2 * dv
        return d_rgb.reshape(shape)


def clip_loss(image, bgt, provider):
    """-sim(embed_image(I), embed_text(bgt)); I must have masked pixels set
    to exactly 0 (the unmask composite)."""
    return -provider.sim(provider.embed_image(image), provider.embed_text(bgt))


def clip_loss_grad(image, bgt, provider):
    z = provider.embed_text(bgt)
    val = -provider.sim(provider.embed_image(image), z)
    d_image = provider.embed_image_adjoint(image, -z)
    return val, d_image


# ---- default registries and config parsing ----

DEFAULT_PALETTES = {
    "leaves": (0.2, 0.55, 0.15),
    "sky": (0.35, 0.55, 0.9),
    "lava": (0.9, 0.3, 0.08),
    "sand": (0.85, 0.7, 0.45),
}

DEFAULT_TARGETS = {
    "a green sphere": TargetSpec(kind="palette", color=(0.2, 0.55, 0.15)),
    "a blue sphere": TargetSpec(kind="palette", color=(0.2, 0.35, 0.9)),
    "a blue sphere in leaves": TargetSpec(
        kind="palette", color=(0.2, 0.35, 0.9), fill_color=DEFAULT_PALETTES["leaves"]),
    "a small blue sphere": TargetSpec(
        kind="palette", color=(0.2, 0.35, 0.9), shrink_px=3),
    "a small blue sphere in leaves": TargetSpec(
        kind="palette", color=(0.2, 0.35, 0.9), shrink_px=3,
        fill_color=DEFAULT_PALETTES["leaves"]),
    "striped": TargetSpec(kind="stripes"),
}


def build_guidance(config=None, views=None):
    """Build (schedule, denoiser, embedder) from a run-config dict.

    config keys (all optional): schedule {t_max, beta_start, beta_end},
    targets {prompt: TargetSpec json}, palettes {name: rgb | [rgb...]}.
    """
    config = config or {}
    sched_cfg = config.get("schedule", {})
    schedule = NoiseSchedule(
        t_max=sched_cfg.get("t_max", 1000),
        beta_start=sched_cfg.get("beta_start", 1e-4),
        beta_end=sched_cfg.get("beta_end", 2e-2),
    )
    targets = dict(DEFAULT_TARGETS)
    for prompt, spec in config.get("targets", {}).items():
        targets[prompt] = spec if isinstance(spec, TargetSpec) else TargetSpec.from_json(spec)
    palettes = dict(DEFAULT_PALETTES)
    palettes.update({k: tuple(v) if np.ndim(v) == 1 else [tuple(c) for c in v]
                     for k, v in config.get("palettes", {}).items()})
    denoiser = ToyDeltaDenoiser(schedule, targets, views or [])
    embedder = ToyPaletteEmbedder(palettes)
    return schedule, denoiser, embedder
