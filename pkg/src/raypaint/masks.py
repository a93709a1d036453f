"""Patch-driven semantic mask extraction over rendered feature maps.

A user rectangle on one view's rendered feature map yields a mean patch
feature; per-pixel cosine similarity against every view's feature map,
thresholded strictly above alpha, gives one binary mask per training view.
Masks are extracted once from a trained field and then frozen.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ContractViolation, DegenerateFieldError, MissingFileError
from .imaging import load_png, save_png
from .renderer import render_view
from .validation import check_rect


@dataclass(frozen=True)
class PatchSelection:
    view_index: int
    rect: tuple          # (row0, col0, row1, col1), inclusive-exclusive
    alpha: float = 0.85  # similarity threshold in (-1, 1]

    def __post_init__(self):
        if not (-1.0 < self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must be in (-1, 1], got {self.alpha}")


@dataclass
class MaskSet:
    masks: list                 # per view, (H, W) uint8 in {0, 1}
    selection: PatchSelection
    checkpoint_id: str = ""

    def __len__(self):
        return len(self.masks)


def patch_mean(feature_map, rect):
    """Arithmetic mean feature over an inclusive-exclusive rectangle."""
    h, w = feature_map.shape[:2]
    r0, c0, r1, c1 = check_rect(rect, h, w)
    return feature_map[r0:r1, c0:c1].reshape(-1, feature_map.shape[2]).mean(axis=0)


EMPTY_FEATURE_NORM = 1e-2


def similarity_map(patch_feature, feature_map):
    """Per-pixel cosine similarity; zero-norm pixels map to similarity 0.

    "Zero" is read numerically: a rendered feature whose magnitude is below
    EMPTY_FEATURE_NORM is quadrature dust from an empty ray (opaque pixels
    sit near 1), and its direction is meaningless, so it gets similarity 0
    rather than an arbitrary cosine.
    """
    patch_feature = np.asarray(patch_feature, dtype=np.float64)
    if feature_map.shape[-1] != patch_feature.shape[0]:
        raise ContractViolation(
            f"feature dim mismatch: map {feature_map.shape[-1]} vs patch {patch_feature.shape[0]}"
        )
    fm = feature_map.astype(np.float64)
    pn = np.linalg.norm(patch_feature)
    if pn < EMPTY_FEATURE_NORM:
        return np.zeros(fm.shape[:2])
    norms = np.linalg.norm(fm, axis=-1)
    dots = fm @ (patch_feature / pn)
    out = np.zeros(fm.shape[:2])
    ok = norms > EMPTY_FEATURE_NORM
    out[ok] = dots[ok] / norms[ok]
    return out


def threshold_mask(sim_map, alpha):
    """Strict inequality: mask = 1 where similarity > alpha."""
    if not (-1.0 < alpha <= 1.0):
        raise ConfigurationError(f"alpha must be in (-1, 1], got {alpha}")
    return (np.asarray(sim_map) > alpha).astype(np.uint8)


def postprocess_mask(mask, min_component=16, dilate=0):
    """Optional cleanup: drop connected components below the area threshold,
    optionally dilate. Off by default everywhere; thresholding alone is the
    contract, and the default postprocess only removes small components so it
    differs from the raw mask exactly at those components.
    """
    m = mask.astype(bool)
    labels, n = ndimage.label(m)
    if n:
        sizes = ndimage.sum_labels(m, labels, index=np.arange(1, n + 1))
        drop = np.flatnonzero(sizes < min_component) + 1
        if drop.size:
            m[np.isin(labels, drop)] = False
    if dilate:
        m = ndimage.binary_dilation(m, iterations=dilate)
    return m.astype(np.uint8)


def extract_mask_set(field, cameras, selection, n_samples=64, postprocess=False,
                     checkpoint_id="", feature_planes=None):
    """Render the selection view's feature map, take the patch mean, then
    similarity+threshold every training view with the same patch feature and
    alpha. feature_planes, when given, must be the cached per-view rendered
    feature maps for exactly these cameras (used by the preview service).
    """
    if feature_planes is None:
        feature_planes = [
            render_view(field, cam, heads=("feature",), n_samples=n_samples)["feature"]
            for cam in cameras
        ]
    ref = feature_planes[selection.view_index]
    if float(np.max(np.abs(ref))) < 1e-9:
        raise DegenerateFieldError(
            "feature head renders all zeros; train stage 1 before extracting masks"
        )
    patch = patch_mean(ref, selection.rect)
    masks = []
    for plane in feature_planes:
        m = threshold_mask(similarity_map(patch, plane), selection.alpha)
        if postprocess:
            m = postprocess_mask(m)
        masks.append(m)
    return MaskSet(masks=masks, selection=selection, checkpoint_id=checkpoint_id)


def save_mask_set(mask_set, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, m in enumerate(mask_set.masks):
        name = f"mask_{i:03d}.png"
        save_png(os.path.join(out_dir, name), (m * 255).astype(np.uint8))
        files.append(name)
    sel = mask_set.selection
    with open(os.path.join(out_dir, "maskset.json"), "w", encoding="utf-8") as f:
        json.dump({
            "view": sel.view_index,
            "rect": list(sel.rect),
            "alpha": sel.alpha,
            "checkpoint_id": mask_set.checkpoint_id,
            "files": files,
        }, f, indent=1)
    return out_dir


def load_mask_set(in_dir):
    meta_path = os.path.join(in_dir, "maskset.json")
    if not os.path.exists(meta_path):
        raise MissingFileError(f"missing maskset file: {meta_path}")
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    masks = []
    for name in meta["files"]:
        arr = load_png(os.path.join(in_dir, name), as_float=False)
        masks.append((arr >= 128).astype(np.uint8))
    sel = PatchSelection(view_index=int(meta["view"]), rect=tuple(meta["rect"]),
                         alpha=float(meta["alpha"]))
    return MaskSet(masks=masks, selection=sel,
                   checkpoint_id=meta.get("checkpoint_id", ""))


def reprojection_consistency(mask_set, depth_planes, opacity_planes, cameras,
                             opacity_threshold=0.95):
    """View-consistency proxy: fraction of masked opaque pixels whose 3D
    points (from rendered depth) land inside every other view's mask.
    Returns the minimum fraction over ordered view pairs.
    """
    worst = 1.0
    n = len(cameras)
    for i in range(n):
        cam = cameras[i]
        m = mask_set.masks[i].astype(bool)
        opaque = opacity_planes[i] > opacity_threshold
        rows, cols = np.nonzero(m & opaque)
        if rows.size == 0:
            continue
        t = depth_planes[i][rows, cols] * cam.far
        rays_d = cam.pixel_dirs(rows, cols)
        pts = cam.position[None, :] + rays_d * t[:, None]
        for j in range(n):
            if j == i:
                continue
            rr, cc, in_front = cameras[j].project(pts)
            ri = np.round(rr).astype(np.int64)
            ci = np.round(cc).astype(np.int64)
            h, w = mask_set.masks[j].shape
            ok = in_front & (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
            hit = np.zeros(rows.size, dtype=bool)
            hit[ok] = mask_set.masks[j][ri[ok], ci[ok]] > 0
            worst = min(worst, float(hit.mean()))
    return worst
