"""Image and float-buffer IO: 8-bit PNGs, the "RPNF" float32 binary format,
and the PCA visualization used for feature planes.
"""

import struct

import numpy as np
from PIL import Image

from .errors import FormatError, MissingFileError

FLOAT_MAGIC = b"RPNF"
FLOAT_VERSION = 1


def save_png(path, img):
    """Save float image in [0, 1] (H,W) or (H,W,3) as an 8-bit PNG."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path, as_float=True):
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise MissingFileError(f"missing image file: {path}") from None
    arr = np.asarray(img)
    if as_float:
        return arr.astype(np.float32) / 255.0
    return arr


def save_float_bin(path, arr):
    """Write (H, W) or (H, W, C) float32 as magic/version/W/H/C + payload."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(FLOAT_MAGIC)
        f.write(struct.pack("<IIII", FLOAT_VERSION, w, h, c))
        f.write(np.ascontiguousarray(arr).tobytes())


def load_float_bin(path):
    """Read an RPNF buffer back as (H, W, C) float32 (C kept even when 1)."""
    try:
        with open(path, "rb") as f:
            head = f.read(20)
            payload = f.read()
    except FileNotFoundError:
        raise MissingFileError(f"missing float buffer: {path}") from None
    if len(head) < 20:
        raise FormatError(f"{path}: truncated header")
    magic, version, w, h, c = head[:4], *struct.unpack("<IIII", head[4:])
    if magic != FLOAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FLOAT_MAGIC!r}")
    if version != FLOAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 4 * w * h * c
    if len(payload) != expected:
        raise FormatError(
            f"{path}: truncated float buffer: expected {expected} payload bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()


def feature_pca_rgb(feature_plane):
    """Project an (H, W, D) feature plane onto its top-3 principal components
    and normalize each channel to [0, 1] for visualization.
    """
    h, w, d = feature_plane.shape
    flat = feature_plane.reshape(-1, d).astype(np.float64)
    mean = flat.mean(axis=0)
    centered = flat - mean
    # svd of the (D, D) covariance; cheap for desk-scale D
    cov = centered.T @ centered / max(len(flat) - 1, 1)
    _, vecs = np.linalg.eigh(cov)
    comps = vecs[:, ::-1][:, :3]
    proj = centered @ comps
    if proj.shape[1] < 3:
        proj = np.pad(proj, ((0, 0), (0, 3 - proj.shape[1])))
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    rgb = (proj - lo) / span
    return rgb.reshape(h, w, 3).astype(np.float32)
