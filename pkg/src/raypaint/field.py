"""The parameterized radiance field: a multi-resolution hash grid feeding
three small ReLU heads (density+geometry, view-dependent color,
view-independent feature), with all parameters living in one flat vector.

Differentiation is hand-derived: forward passes record the intermediates
needed by the matching *_backward routines, which accumulate d(loss)/d(theta)
into a GradientBuffer. The finite-difference suite in tests/ is the contract.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, ContractViolation, FormatError, NumericFault
from .validation import check_positive, check_unit

GEO_DIM = 15          # geometry code shared by color/feature heads
DIR_FREQS = 4         # sinusoidal direction encoding -> 3 * 2 * 4 floats
DIR_DIM = 3 * 2 * DIR_FREQS

CHECKPOINT_MAGIC = b"RPCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HashGridConfig:
    n_levels: int = 8
    base_resolution: int = 16
    per_level_scale: float = 1.5
    table_size: int = 2 ** 14
    feats_per_level: int = 2
    bounds_lo: tuple = (-1.4, -1.4, -1.4)
    bounds_hi: tuple = (1.4, 1.4, 1.4)

    def __post_init__(self):
        if self.n_levels < 1:
            raise ConfigurationError(f"n_levels must be >= 1, got {self.n_levels}")
        if self.per_level_scale <= 1.0:
            raise ConfigurationError(
                f"per_level_scale must be > 1, got {self.per_level_scale}"
            )
        t = self.table_size
        if t <= 0 or (t & (t - 1)) != 0:
            raise ConfigurationError(f"table_size must be a power of two, got {t}")
        if self.feats_per_level < 1:
            raise ConfigurationError("feats_per_level must be >= 1")
        if any(l >= h for l, h in zip(self.bounds_lo, self.bounds_hi)):
            raise ConfigurationError("bounds_lo must be < bounds_hi per axis")

    @property
    def enc_dim(self):
        return self.n_levels * self.feats_per_level

    def resolutions(self):
        ls = np.arange(self.n_levels)
        return np.floor(self.base_resolution * self.per_level_scale ** ls).astype(np.int64)


def dir_encode(d, dtype=np.float32):
    """4-frequency sinusoidal encoding of unit directions, (..., 3) -> (..., 24)."""
    d = np.asarray(d, dtype=dtype)
    parts = []
    for k in range(DIR_FREQS):
        s = (2.0 ** k) * d
        parts.append(np.sin(s))
        parts.append(np.cos(s))
    return np.concatenate(parts, axis=-1).astype(dtype, copy=False)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class RadianceField:
    """(x, d) -> (sigma, color, feature) with parameters in one flat vector.

    Parameters
    ----------
    grid : HashGridConfig
    feature_dim : output dimension of the feature head (dataset D)
    head_width : hidden width of the three 2-layer heads
    seed : initialization seed (grid entries uniform in [-1e-4, 1e-4],
        head weights Xavier-uniform, zero biases)
    dtype : np.float32 for training, np.float64 for gradient checks
    """

    def __init__(self, grid=None, feature_dim=8, head_width=64, seed=0, dtype=np.float32):
        self.grid = grid if grid is not None else HashGridConfig()
        self.feature_dim = int(feature_dim)
        self.head_width = int(head_width)
        check_positive(self.feature_dim, "feature_dim")
        check_positive(self.head_width, "head_width")
        self.dtype = np.dtype(dtype)
        self._res = self.grid.resolutions()
        self._lo = np.asarray(self.grid.bounds_lo, dtype=self.dtype)
        self._hi = np.asarray(self.grid.bounds_hi, dtype=self.dtype)
        self._build_layout()
        self.theta = np.zeros(self.n_params, dtype=self.dtype)
        self._init_params(seed)

    # ---- parameter layout ----

    def _build_layout(self):
        g, w, d = self.grid, self.head_width, self.feature_dim
        enc = g.enc_dim
        shapes = [
            ("grid", (g.n_levels, g.table_size, g.feats_per_level)),
            ("w0", (enc, w)), ("b0", (w,)),
            ("w1", (w, 1 + GEO_DIM)), ("b1", (1 + GEO_DIM,)),
            ("wc0", (GEO_DIM + DIR_DIM, w)), ("bc0", (w,)),
            ("wc1", (w, 3)), ("bc1", (3,)),
            ("wf0", (GEO_DIM, w)), ("bf0", (w,)),
            ("wf1", (w, d)), ("bf1", (d,)),
        ]
        self._layout = []
        off = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self._layout.append((name, off, shape))
            off += size
        self.n_params = off

    def view(self, name):
        """Named view into theta; writes through to the flat vector."""
        for n, off, shape in self._layout:
            if n == name:
                return self.theta[off:off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    def param_name(self, index):
        """Human-readable location of a flat parameter index."""
        for n, off, shape in self._layout:
            size = int(np.prod(shape))
            if off <= index < off + size:
                return f"{n}[{index - off}]"
        return f"theta[{index}]"

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        gv = self.view("grid")
        gv[...] = rng.uniform(-1e-4, 1e-4, gv.shape)
        for name in ("w0", "w1", "wc0", "wc1", "wf0", "wf1"):
            wv = self.view(name)
            fan_in, fan_out = wv.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            wv[...] = rng.uniform(-limit, limit, wv.shape)
        # biases stay zero

    def clone(self):
        other = RadianceField.__new__(RadianceField)
        other.grid = self.grid
        other.feature_dim = self.feature_dim
        other.head_width = self.head_width
        other.dtype = self.dtype
        other._res = self._res
        other._lo = self._lo
        other._hi = self._hi
        other._build_layout()
        other.theta = self.theta.copy()
        return other

    # ---- forward ----

    def hash_encode(self, x):
        """Per-level trilinear interpolation of hashed corner entries, (N, 3) -> (N, enc_dim).

        Points outside the bounds are clamped to the bounds.
        """
        x = np.ascontiguousarray(np.asarray(x, dtype=self.dtype).reshape(-1, 3))
        enc = np.empty((x.shape[0], self.grid.enc_dim), dtype=self.dtype)
        _kernels.hash_forward(self.view("grid"), self._res, self._lo, self._hi, x, enc)
        return enc

    def hash_encode_grad_x(self, x):
        """Jacobian of hash_encode w.r.t. the point, (N, enc_dim, 3)."""
        x = np.ascontiguousarray(np.asarray(x, dtype=self.dtype).reshape(-1, 3))
        grad = np.empty((x.shape[0], self.grid.enc_dim, 3), dtype=self.dtype)
        _kernels.hash_grad_x(self.view("grid"), self._res, self._lo, self._hi, x, grad)
        return grad

    def density(self, x):
        """sigma = softplus(raw) plus the geometry code; returns (sigma, cache)."""
        x = np.ascontiguousarray(np.asarray(x, dtype=self.dtype).reshape(-1, 3))
        n = x.shape[0]
        enc = np.empty((n, self.grid.enc_dim), dtype=self.dtype)
        _kernels.hash_forward(self.view("grid"), self._res, self._lo, self._hi, x, enc)
        out = np.empty((n, 1 + GEO_DIM), dtype=self.dtype)
        h0 = np.empty((n, self.head_width), dtype=self.dtype)
        _kernels.mlp2_forward(enc, self.view("w0"), self.view("b0"),
                              np.ascontiguousarray(self.view("w1").T),
                              self.view("b1"), out, h0)
        sigma = softplus(out[:, 0])
        geo = np.ascontiguousarray(out[:, 1:])
        return sigma, _DensityCache(x=x, enc=enc, h0=h0, sigma=sigma, geo=geo)

    def appearance(self, geo, denc=None, need_color=True, need_feature=True):
        """Color / feature heads on geometry codes (and direction encodings)."""
        n = geo.shape[0]
        color = feat = hc = hf = xc = None
        if need_color:
            if denc is None:
                raise ContractViolation("color head needs direction encodings")
            xc = np.ascontiguousarray(np.concatenate([geo, denc], axis=1, dtype=self.dtype))
            yc = np.empty((n, 3), dtype=self.dtype)
            hc = np.empty((n, self.head_width), dtype=self.dtype)
            _kernels.mlp2_forward(xc, self.view("wc0"), self.view("bc0"),
                                  np.ascontiguousarray(self.view("wc1").T),
                                  self.view("bc1"), yc, hc)
            color = sigmoid(yc)
        if need_feature:
            geo = np.ascontiguousarray(geo)
            feat = np.empty((n, self.feature_dim), dtype=self.dtype)
            hf = np.empty((n, self.head_width), dtype=self.dtype)
            _kernels.mlp2_forward(geo, self.view("wf0"), self.view("bf0"),
                                  np.ascontiguousarray(self.view("wf1").T),
                                  self.view("bf1"), feat, hf)
        return color, feat, _AppearanceCache(geo=geo, xc=xc, hc=hc, hf=hf, color=color)

    def eval_points(self, x, d=None, need_color=True, need_feature=True):
        """Full per-point evaluation (sigma, color, feature); the field_eval contract.

        d must be unit length within 1e-6 when the color head is requested.
        """
        sigma, dcache = self.density(x)
        denc = None
        if need_color:
            d = np.asarray(d, dtype=self.dtype)
            if d.ndim == 1:
                d = np.broadcast_to(d, (dcache.x.shape[0], 3))
            check_unit(d)
            denc = dir_encode(d, dtype=self.dtype)
        color, feat, acache = self.appearance(
            dcache.geo, denc, need_color=need_color, need_feature=need_feature
        )
        return FieldEval(sigma=sigma, color=color, feature=feat,
                         density_cache=dcache, appearance_cache=acache)

    # ---- backward (adjoint accumulation) ----

    def density_backward(self, cache, dsigma, dgeo, grad):
        """Accumulate head + grid gradients given adjoints of sigma and geo."""
        n = cache.x.shape[0]
        dout = np.empty((n, 1 + GEO_DIM), dtype=self.dtype)
        # d softplus(r)/dr = sigmoid(r) = 1 - exp(-softplus(r))
        dout[:, 0] = dsigma * (1.0 - np.exp(-cache.sigma))
        dout[:, 1:] = dgeo if dgeo is not None else 0.0
        w1t = np.ascontiguousarray(self.view("w1").T)
        denc = np.empty_like(cache.enc)
        dh0 = np.empty_like(cache.h0)
        _kernels.mlp2_backward(self.view("w0"), w1t, cache.h0, dout, denc, dh0)
        grad.view("w1")[...] += cache.h0.T @ dout
        grad.view("b1")[...] += dout.sum(axis=0)
        grad.view("w0")[...] += cache.enc.T @ dh0
        grad.view("b0")[...] += dh0.sum(axis=0)
        # scatter into a fresh buffer so repeated backward passes accumulate
        # elementwise (exact doubling, not order-dependent)
        dtable = np.zeros_like(self.view("grid"))
        _kernels.hash_backward(self.view("grid"), self._res, self._lo, self._hi,
                               cache.x, denc, dtable)
        grad.view("grid")[...] += dtable

    def appearance_backward(self, cache, dcolor, dfeat, grad):
        """Accumulate color/feature head gradients; returns the geo adjoint."""
        n = cache.geo.shape[0]
        dgeo = np.zeros((n, GEO_DIM), dtype=self.dtype)
        if dcolor is not None:
            dyc = np.ascontiguousarray(
                (dcolor * cache.color * (1.0 - cache.color)).astype(self.dtype)
            )
            wc1t = np.ascontiguousarray(self.view("wc1").T)
            dxc = np.empty_like(cache.xc)
            dhc = np.empty_like(cache.hc)
            _kernels.mlp2_backward(self.view("wc0"), wc1t, cache.hc, dyc, dxc, dhc)
            grad.view("wc1")[...] += cache.hc.T @ dyc
            grad.view("bc1")[...] += dyc.sum(axis=0)
            grad.view("wc0")[...] += cache.xc.T @ dhc
            grad.view("bc0")[...] += dhc.sum(axis=0)
            dgeo += dxc[:, :GEO_DIM]
        if dfeat is not None:
            dfeat = np.ascontiguousarray(dfeat, dtype=self.dtype)
            wf1t = np.ascontiguousarray(self.view("wf1").T)
            dgf = np.empty((n, GEO_DIM), dtype=self.dtype)
            dhf = np.empty_like(cache.hf)
            _kernels.mlp2_backward(self.view("wf0"), wf1t, cache.hf, dfeat, dgf, dhf)
            grad.view("wf1")[...] += cache.hf.T @ dfeat
            grad.view("bf1")[...] += dfeat.sum(axis=0)
            grad.view("wf0")[...] += cache.geo.T @ dhf
            grad.view("bf0")[...] += dhf.sum(axis=0)
            dgeo += dgf
        return dgeo

    def backward_points(self, ev, dsigma=None, dcolor=None, dfeat=None, grad=None):
        """Adjoint of eval_points: accumulate d(loss)/d(theta) into grad."""
        if grad is None:
            grad = GradientBuffer(self)
        n = ev.density_cache.x.shape[0]
        dgeo = self.appearance_backward(ev.appearance_cache, dcolor, dfeat, grad)
        if dsigma is None:
            dsigma = np.zeros(n, dtype=self.dtype)
        self.density_backward(ev.density_cache, dsigma, dgeo, grad)
        return grad


class _DensityCache:
    __slots__ = ("x", "enc", "h0", "sigma", "geo")

    def __init__(self, x, enc, h0, sigma, geo):
        self.x, self.enc, self.h0, self.sigma, self.geo = x, enc, h0, sigma, geo


class _AppearanceCache:
    __slots__ = ("geo", "xc", "hc", "hf", "color")

    def __init__(self, geo, xc, hc, hf, color):
        self.geo, self.xc, self.hc, self.hf, self.color = geo, xc, hc, hf, color


class FieldEval:
    __slots__ = ("sigma", "color", "feature", "density_cache", "appearance_cache")

    def __init__(self, sigma, color, feature, density_cache, appearance_cache):
        self.sigma = sigma
        self.color = color
        self.feature = feature
        self.density_cache = density_cache
        self.appearance_cache = appearance_cache


class GradientBuffer:
    """Flat d(loss)/d(theta) accumulator, shaped like the field's theta."""

    def __init__(self, field):
        self.values = np.zeros_like(field.theta)
        self._field = field

    def view(self, name):
        for n, off, shape in self._field._layout:
            if n == name:
                return self.values[off:off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    def zero_(self):
        self.values[...] = 0.0

    def check_finite(self):
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            idx = int(bad[0])
            raise NumericFault(
                f"non-finite gradient at parameter {idx} ({self._field.param_name(idx)})"
            )
        return self


@dataclass
class AdamState:
    """Moment buffers shaped like theta, plus the step counter."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_field(cls, f):
        return cls(m=np.zeros_like(f.theta), v=np.zeros_like(f.theta))


def adam_step(theta, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, in place on the flat theta."""
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}")
    if state.m.shape != theta.shape or state.v.shape != theta.shape:
        raise ContractViolation("Adam moment buffers must be shaped like theta")
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * np.square(grad)
    mhat = state.m / (1.0 - beta1 ** state.step)
    vhat = state.v / (1.0 - beta2 ** state.step)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)
    return theta


# ---- checkpoint io ----

_HEADER = struct.Struct("<4sI iidqi 6d iiii Q B")


def save_checkpoint(path, field, adam_state=None):
    """Write config + theta (+ optional Adam moments) in the RPCK format."""
    g = field.grid
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        g.n_levels, g.base_resolution, g.per_level_scale, g.table_size, g.feats_per_level,
        *g.bounds_lo, *g.bounds_hi,
        field.feature_dim, field.head_width, GEO_DIM, DIR_FREQS,
        field.n_params, 1 if adam_state is not None else 0,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.asarray(field.theta, dtype=np.float32).tobytes())
        if adam_state is not None:
            f.write(struct.pack("<q", adam_state.step))
            f.write(np.asarray(adam_state.m, dtype=np.float32).tobytes())
            f.write(np.asarray(adam_state.v, dtype=np.float32).tobytes())


def load_checkpoint(path, grid=None, with_adam=False):
    """Read an RPCK checkpoint; returns field or (field, adam_state).

    If `grid` is given, the stored config must match it exactly.
    """
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint header")
        (magic, version, n_levels, base_res, scale, table_size, feats,
         lo0, lo1, lo2, hi0, hi1, hi2,
         feature_dim, head_width, geo, dir_freqs, n_params, flags) = _HEADER.unpack(raw)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        if geo != GEO_DIM or dir_freqs != DIR_FREQS:
            raise FormatError(f"{path}: incompatible head dims (geo={geo}, dir_freqs={dir_freqs})")
        stored = HashGridConfig(
            n_levels=n_levels, base_resolution=base_res, per_level_scale=scale,
            table_size=table_size, feats_per_level=feats,
            bounds_lo=(lo0, lo1, lo2), bounds_hi=(hi0, hi1, hi2),
        )
        if grid is not None and stored != grid:
            for fname in ("n_levels", "base_resolution", "per_level_scale",
                          "table_size", "feats_per_level", "bounds_lo", "bounds_hi"):
                a, b = getattr(grid, fname), getattr(stored, fname)
                if a != b:
                    raise FormatError(
                        f"{path}: grid config mismatch on {fname}: expected {a}, got {b}"
                    )
        fld = RadianceField(grid=stored, feature_dim=feature_dim, head_width=head_width)
        if n_params != fld.n_params:
            raise FormatError(
                f"{path}: parameter count mismatch: expected {fld.n_params}, got {n_params}"
            )
        buf = f.read(4 * n_params)
        if len(buf) != 4 * n_params:
            raise FormatError(f"{path}: truncated parameter buffer")
        fld.theta[...] = np.frombuffer(buf, dtype=np.float32)
        if not with_adam:
            return fld
        state = AdamState.for_field(fld)
        if flags & 1:
            step_raw = f.read(8)
            mb = f.read(4 * n_params)
            vb = f.read(4 * n_params)
            if len(step_raw) != 8 or len(mb) != 4 * n_params or len(vb) != 4 * n_params:
                raise FormatError(f"{path}: truncated Adam moment section")
            state.step = struct.unpack("<q", step_raw)[0]
            state.m[...] = np.frombuffer(mb, dtype=np.float32)
            state.v[...] = np.frombuffer(vb, dtype=np.float32)
        return fld, state
