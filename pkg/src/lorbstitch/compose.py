"""Panorama compositing: canvas layout, homography warping, seam masks and
multi-band (Laplacian pyramid) blending."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import imgcore
from .errors import MaskMismatch, SingularHomography, TooManyLevels
from .imgcore import Image, Pyramid, downsample_array, upsample_array
from .matchlsh import Homography, apply_h


def _as_matrix(h) -> np.ndarray:
    m = h.h if isinstance(h, Homography) else np.asarray(h, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) < 1e-9:
        raise SingularHomography("homography is not invertible")
    return m


def _corners(w, h):
    return np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)


@dataclass(frozen=True)
class Canvas:
    """Panorama raster size plus the integral translation applied after each
    camera's homography (``offsets[c]``)."""

    width: int
    height: int
    offsets: tuple

    def placement(self, camera: int, h) -> np.ndarray:
        ox, oy = self.offsets[camera]
        return np.array([[1, 0, ox], [0, 1, oy], [0, 0, 1]], dtype=np.float64) @ _as_matrix(h)


def compute_canvas(dims: Sequence, homographies: Sequence) -> Canvas:
    """Integral bounding box of every camera's corners mapped into the
    reference frame.  ``dims`` holds ``(width, height)`` per camera."""
    pts = []
    for (w, h), hom in zip(dims, homographies):
        mapped = apply_h(_as_matrix(hom), _corners(w, h))
        if not np.all(np.isfinite(mapped)):
            raise SingularHomography("corner maps to infinity")
        pts.append(mapped)
    pts = np.concatenate(pts)
    x_min = math.floor(pts[:, 0].min() + 1e-9)
    y_min = math.floor(pts[:, 1].min() + 1e-9)
    x_max = math.ceil(pts[:, 0].max() - 1e-9)
    y_max = math.ceil(pts[:, 1].max() - 1e-9)
    offset = (-x_min, -y_min)
    return Canvas(x_max - x_min + 1, y_max - y_min + 1, tuple(offset for _ in dims))


def warp_image(img, h, canvas: Canvas, camera: int = 0):
    """Inverse-map ``img`` onto the canvas with bilinear sampling.

    Returns ``(values, coverage)``: float32 canvas rasters, coverage 1 where the
    back-projected point lands inside the source, 0 elsewhere (values 0 there).
    """
    src = imgcore.as_array(img)
    sh, sw = src.shape[:2]
    fwd = canvas.placement(camera, h)
    inv = np.linalg.inv(fwd)
    out_shape = (canvas.height, canvas.width) + src.shape[2:]
    values = np.zeros(out_shape, dtype=np.float32)
    coverage = np.zeros((canvas.height, canvas.width), dtype=np.float32)

    # restrict to the warped footprint (a projective map of a rectangle stays
    # inside the hull of its mapped corners)
    mapped = apply_h(fwd, _corners(sw, sh))
    if not np.all(np.isfinite(mapped)):
        raise SingularHomography("corner maps to infinity")
    bx0 = max(math.floor(mapped[:, 0].min()) - 1, 0)
    by0 = max(math.floor(mapped[:, 1].min()) - 1, 0)
    bx1 = min(math.ceil(mapped[:, 0].max()) + 2, canvas.width)
    by1 = min(math.ceil(mapped[:, 1].max()) + 2, canvas.height)
    if bx0 >= bx1 or by0 >= by1:
        return values, coverage

    gx, gy = np.meshgrid(np.arange(bx0, bx1, dtype=np.float64), np.arange(by0, by1, dtype=np.float64))
    den = inv[2, 0] * gx + inv[2, 1] * gy + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]) / den
        sy = (inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]) / den
    eps = 1e-6
    inside = (sx >= -eps) & (sx <= sw - 1 + eps) & (sy >= -eps) & (sy <= sh - 1 + eps)
    sx = np.clip(np.where(inside, sx, 0.0), 0.0, sw - 1)
    sy = np.clip(np.where(inside, sy, 0.0), 0.0, sh - 1)
    x0 = np.minimum(np.floor(sx).astype(np.intp), max(sw - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(np.intp), max(sh - 2, 0))
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = (sx - x0).astype(np.float32)
    fy = (sy - y0).astype(np.float32)
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    s = src.astype(np.float32, copy=False)
    top = s[y0, x0] * (1 - fx) + s[y0, x1] * fx
    bot = s[y1, x0] * (1 - fx) + s[y1, x1] * fx
    patch = top * (1 - fy) + bot * fy
    ins = inside[..., None] if src.ndim == 3 else inside
    values[by0:by1, bx0:bx1] = np.where(ins, patch, 0.0)
    coverage[by0:by1, bx0:bx1] = inside
    return values, coverage


def linear_seam_mask(coverages: Sequence[np.ndarray]) -> list:
    """Per-camera weights summing to 1 on covered pixels.

    Exclusive zones get weight 1.  Where two cameras overlap the weight ramps
    linearly across the overlap along the line joining their coverage
    centroids; cameras with coincident centroids share equally.
    """
    covs = [np.asarray(c, dtype=np.float64) > 0 for c in coverages]
    if not covs:
        raise MaskMismatch("need at least one coverage mask")
    shape = covs[0].shape
    if any(c.shape != shape for c in covs):
        raise MaskMismatch("coverage masks differ in shape")
    raw = [c.astype(np.float64) for c in covs]
    yy, xx = np.indices(shape, dtype=np.float64)
    cents = []
    for c in covs:
        n = c.sum()
        cents.append((xx[c].mean(), yy[c].mean()) if n else (np.nan, np.nan))
    for i in range(len(covs)):
        for j in range(i + 1, len(covs)):
            both = covs[i] & covs[j]
            if not both.any():
                continue
            axis = np.subtract(cents[j], cents[i])
            norm = math.hypot(*axis)
            if not norm > 1e-9:
                continue
            ux, uy = axis / norm
            t = xx[both] * ux + yy[both] * uy
            span = t.max() - t.min()
            s = (t - t.min()) / span if span > 0 else np.full(t.shape, 0.5)
            raw[i][both] *= 1 - s
            raw[j][both] *= s
    total = np.sum(raw, axis=0)
    covered = np.any(covs, axis=0)
    # pixels where every ramp hit zero (3-way overlaps): share equally
    dead = covered & (total <= 0)
    if dead.any():
        for r, c in zip(raw, covs):
            r[dead & c] = 1.0
        total = np.sum(raw, axis=0)
    safe = np.where(total > 0, total, 1.0)
    return [np.where(covered, r / safe, 0.0).astype(np.float32) for r in raw]


def max_levels(width: int, height: int) -> int:
    return int(math.floor(math.log2(max(min(width, height), 1)))) + 1


def build_laplacian(img, levels: int) -> Pyramid:
    """Band-pass pyramid: ``L_k = G_k - up(G_{k+1})``, top level ``G_{levels-1}``."""
    arr = np.asarray(imgcore.as_array(img), dtype=np.float32)
    if levels < 1:
        raise TooManyLevels("levels must be >= 1")
    h, w = arr.shape[:2]
    if min(w, h) < 2 ** (levels - 1):
        raise TooManyLevels(f"{levels} levels need both dimensions >= {2 ** (levels - 1)}, got {w}x{h}")
    gauss = [arr]
    for _ in range(levels - 1):
        gauss.append(downsample_array(gauss[-1]))
    bands = []
    for k in range(levels - 1):
        gh, gw = gauss[k].shape[:2]
        bands.append(gauss[k] - upsample_array(gauss[k + 1], gw, gh))
    bands.append(gauss[-1])
    return Pyramid(bands)


def collapse_laplacian(pyr: Pyramid) -> np.ndarray:
    out = pyr.levels[-1]
    for band in reversed(pyr.levels[:-1]):
        h, w = band.shape[:2]
        out = upsample_array(out, w, h) + band
    return out


def _fill_uncovered(values: np.ndarray, coverage: np.ndarray) -> np.ndarray:
    """Push-pull fill of uncovered pixels from coarser averages so pyramid
    bands do not ring at coverage borders."""
    cov = coverage.astype(np.float32)
    if cov.min() > 0:
        return values
    if cov.max() <= 0:
        return values
    c3 = cov[..., None] if values.ndim == 3 else cov
    nums = [values * c3]
    dens = [cov]
    while min(dens[-1].shape) >= 2 and dens[-1].min() <= 0:
        nums.append(downsample_array(nums[-1]))
        dens.append(downsample_array(dens[-1]))
    def ratio(num, den):
        d = den[..., None] if num.ndim == 3 else den
        return np.where(d > 1e-6, num / np.maximum(d, 1e-6), 0.0).astype(np.float32)
    filled = ratio(nums[-1], dens[-1])
    top_den = dens[-1]
    if top_den.min() <= 1e-6:
        valid = top_den > 1e-6
        mean = filled[valid].mean(axis=0)
        filled = np.where((valid[..., None] if filled.ndim == 3 else valid), filled, mean).astype(np.float32)
    for num, den in zip(reversed(nums[:-1]), reversed(dens[:-1])):
        h, w = den.shape
        up = upsample_array(filled, w, h)
        here = ratio(num, den)
        d = den[..., None] if num.ndim == 3 else den
        filled = np.where(d > 1e-6, here, up).astype(np.float32)
    return np.where(c3 > 0, values, filled).astype(np.float32)


def multiband_blend(images: Sequence[np.ndarray], masks: Sequence[np.ndarray], levels: int = 4,
                    coverages: Optional[Sequence[np.ndarray]] = None) -> Image:
    """Blend canvas-sized rasters band by band.

    Band ``k`` of the output is the mask-weighted sum of band ``k`` of every
    input, weights being the Gaussian-pyramid level ``k`` of each mask,
    renormalized where the blurred weights no longer sum to 1 (canvas
    borders).  Pixels no mask covers come out 0.  Result is clamped to u8.
    """
    images = [np.asarray(imgcore.as_array(i), dtype=np.float32) for i in images]
    masks = [np.asarray(m, dtype=np.float32) for m in masks]
    if not images or len(images) != len(masks):
        raise MaskMismatch("need one mask per image")
    shape = images[0].shape
    if any(i.shape != shape for i in images) or any(m.shape != shape[:2] for m in masks):
        raise MaskMismatch("images and masks must share the canvas shape")
    if coverages is not None:
        if len(coverages) != len(images):
            raise MaskMismatch("need one coverage raster per image")
        images = [_fill_uncovered(i, np.asarray(c)) for i, c in zip(images, coverages)]
        covered = np.any([np.asarray(c) > 0 for c in coverages], axis=0)
    else:
        covered = np.sum(masks, axis=0) > 0

    acc = None
    wsum = None
    for img, mask in zip(images, masks):
        lap = build_laplacian(img, levels)
        gm = imgcore.gaussian_pyramid(mask, levels)
        terms = [band * (g[..., None] if band.ndim == 3 else g) for band, g in zip(lap.levels, gm.levels)]
        if acc is None:
            acc, wsum = terms, list(gm.levels)
        else:
            acc = [a + t for a, t in zip(acc, terms)]
            wsum = [a + g for a, g in zip(wsum, gm.levels)]
    norm = []
    for a, w in zip(acc, wsum):
        w3 = w[..., None] if a.ndim == 3 else w
        norm.append(np.where(w3 > 1e-6, a / np.maximum(w3, 1e-6), 0.0).astype(np.float32))
    out = collapse_laplacian(Pyramid(norm))
    out = np.clip(out, 0, 255)
    out = np.where(covered[..., None] if out.ndim == 3 else covered, out, 0.0)
    return Image(imgcore.to_u8(out))


def feather_blend(images: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> Image:
    """Single-band weighted average (the baseline multi-band improves on)."""
    acc = np.zeros(np.asarray(images[0]).shape, dtype=np.float32)
    for img, m in zip(images, masks):
        m = np.asarray(m, dtype=np.float32)
        acc += np.asarray(img, dtype=np.float32) * (m[..., None] if acc.ndim == 3 else m)
    return Image(imgcore.to_u8(np.clip(acc, 0, 255)))
