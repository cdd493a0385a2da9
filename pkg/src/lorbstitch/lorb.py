"""L-ORB feature extraction.

Detection is confined to the strips where adjacent cameras overlap.  Inside a
strip: FAST segment-test candidates are ranked by the Harris measure,
thresholded, thinned by non-maximum suppression and capped at ``top_n``.  Each
survivor gets a ternary BRIEF code (``+1``/``-1``/``0`` per point pair) stored
as two packed bitplanes.  There is no scale pyramid and no orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import imgcore
from .errors import (
    NoOverlap,
    OverlapExceedsImage,
    PatchOutOfBounds,
    RegionTooSmall,
    WindowOutOfBounds,
)

# radius-3 Bresenham circle, clockwise from straight up (image y points down)
RING = np.array(
    [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
     (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)],
    dtype=np.intp,
)
RING_RADIUS = 3


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class DetectionRegion:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)`` on one camera."""

    x0: int
    y0: int
    x1: int
    y1: int
    camera_id: int = 0
    pair: Optional[int] = None  # adjacent-pair index this strip serves

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"invalid region {self}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    def inset(self, margin: int, width: int, height: int):
        """Bounds ``(x0, y0, x1, y1)`` whose ``margin`` neighbourhood stays in the image.

        The result may be empty (``x0 >= x1``).
        """
        return (max(self.x0, margin), max(self.y0, margin),
                min(self.x1, width - margin), min(self.y1, height - margin))

    def contains(self, x, y) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class CameraLayout:
    """Rough relative placement of a left-to-right camera row.

    ``overlaps[i]`` is the fraction of image width shared by cameras ``i`` and
    ``i + 1``.  ``regions`` overrides the computed strips when given.
    """

    n_cameras: int
    overlaps: Sequence[float] = ()
    regions: Optional[Sequence[DetectionRegion]] = None

    @classmethod
    def uniform(cls, n_cameras: int, overlap: float):
        return cls(n_cameras, tuple([overlap] * (n_cameras - 1)))


def partition_regions(layout: CameraLayout, dims) -> list:
    """Overlap strips per adjacent camera pair.

    ``dims`` lists ``(width, height)`` per camera.  For pair ``(i, i+1)`` with
    overlap ``f`` the left image keeps ``x in [round(w(1-f)), w)`` and the right
    image ``x in [0, round(w f))``, full height.  A single-camera layout yields
    one full-frame region.
    """
    if layout.regions is not None:
        out = list(layout.regions)
        for r in out:
            w, h = dims[r.camera_id]
            if r.x1 > w or r.y1 > h:
                raise OverlapExceedsImage(f"region {r} exceeds {w}x{h}")
        return out
    if layout.n_cameras == 1:
        w, h = dims[0]
        return [DetectionRegion(0, 0, w, h, 0)]
    if len(layout.overlaps) != layout.n_cameras - 1:
        raise ValueError("need one overlap fraction per adjacent camera pair")
    regions = []
    for i, f in enumerate(layout.overlaps):
        if not f > 0:
            raise NoOverlap(f"overlap fraction {f} for cameras {i},{i + 1}")
        if f > 1:
            raise OverlapExceedsImage(f"overlap fraction {f} exceeds 1")
        wl, hl = dims[i]
        wr, hr = dims[i + 1]
        lx0 = min(_round_half_up(wl * (1 - f)), wl - 1)
        rx1 = max(_round_half_up(wr * f), 1)
        regions.append(DetectionRegion(lx0, 0, wl, hl, i, pair=i))
        regions.append(DetectionRegion(0, 0, rx1, hr, i + 1, pair=i))
    return regions


# ---------------------------------------------------------------------------
# FAST


def _fast_min_compass(arc: int) -> int:
    # any contiguous arc of `arc` ring pixels covers at least this many of
    # the four compass pixels (ring indices 0, 4, 8, 12)
    return arc // 4


def fast_corners(img, region: DetectionRegion, threshold, arc: int = 9) -> np.ndarray:
    """FAST segment test over ``region``; returns an ``(N, 2)`` array of (x, y).

    A pixel qualifies when at least ``arc`` contiguous ring pixels are all
    brighter than ``I + threshold`` or all darker than ``I - threshold``.  Only
    pixels whose full ring lies inside the image are tested.  Output is sorted
    by (y, x).
    """
    if not 9 <= arc <= 16:
        raise ValueError(f"arc must be in [9, 16], got {arc}")
    arr = imgcore.as_array(img)
    if arr.ndim != 2:
        raise ValueError("fast_corners expects a grayscale image")
    h, w = arr.shape
    x0, y0, x1, y1 = region.inset(RING_RADIUS, w, h)
    if x0 >= x1 or y0 >= y1:
        raise RegionTooSmall(f"no pixel of {region} admits the radius-3 ring")
    src = arr.astype(np.int32) if arr.dtype.kind in "ui" else arr.astype(np.float32)
    center = src[y0:y1, x0:x1]
    hi = center + threshold
    lo = center - threshold

    need = _fast_min_compass(arc)
    bright = np.zeros(center.shape, np.int8)
    dark = np.zeros(center.shape, np.int8)
    for k in (0, 4, 8, 12):
        dx, dy = RING[k]
        ring = src[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        bright += ring > hi
        dark += ring < lo
    ys, xs = np.nonzero((bright >= need) | (dark >= need))
    if ys.size == 0:
        return np.empty((0, 2), dtype=np.int64)

    ys = ys + y0
    xs = xs + x0
    vals = src[ys[:, None] + RING[:, 1], xs[:, None] + RING[:, 0]]
    c = src[ys, xs][:, None]
    ok = _has_arc(vals > c + threshold, arc) | _has_arc(vals < c - threshold, arc)
    return np.stack([xs[ok], ys[ok]], axis=1).astype(np.int64)


def _has_arc(flags: np.ndarray, arc: int) -> np.ndarray:
    wrapped = np.concatenate([flags, flags[:, :arc - 1]], axis=1).astype(np.int16)
    csum = np.concatenate([np.zeros((flags.shape[0], 1), np.int16), np.cumsum(wrapped, axis=1, dtype=np.int16)], axis=1)
    window = csum[:, arc:] - csum[:, :-arc]
    return (window >= arc).any(axis=1)


# ---------------------------------------------------------------------------
# Harris


def harris_response(img, points, alpha: float = 0.04, sigma: float = 1.0) -> np.ndarray:
    """Harris measure ``det M - alpha * trace(M)^2`` at integer points.

    ``M`` sums the gradient products over a Gaussian window (radius
    ``ceil(3 sigma)``, weights normalized to 1).  Gradients are computed only
    on a crop around the query points; results equal a full-image evaluation.
    """
    arr = imgcore.as_array(img)
    if arr.ndim != 2:
        raise ValueError("harris_response expects a grayscale image")
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        return np.empty(0, dtype=np.float64)
    h, w = arr.shape
    kern = imgcore.gaussian_kernel(sigma)
    r = (len(kern) - 1) // 2
    xs, ys = pts[:, 0], pts[:, 1]
    if xs.min() - r < 0 or ys.min() - r < 0 or xs.max() + r > w - 1 or ys.max() + r > h - 1:
        raise WindowOutOfBounds(f"Harris window of radius {r} leaves the {w}x{h} image")

    cx0 = max(int(xs.min()) - r - 1, 0)
    cy0 = max(int(ys.min()) - r - 1, 0)
    cx1 = min(int(xs.max()) + r + 2, w)
    cy1 = min(int(ys.max()) + r + 2, h)
    ix, iy = imgcore.gradient_arrays(arr[cy0:cy1, cx0:cx1])
    ix = ix.astype(np.float64)
    iy = iy.astype(np.float64)

    weights = np.outer(kern, kern).ravel()
    off = np.arange(-r, r + 1)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    gy = (ys - cy0)[:, None] + oy.ravel()
    gx = (xs - cx0)[:, None] + ox.ravel()
    wx = ix[gy, gx]
    wy = iy[gy, gx]
    a = (wx * wx) @ weights
    b = (wy * wy) @ weights
    c = (wx * wy) @ weights
    return (a * b - c * c) - alpha * (a + b) ** 2


# ---------------------------------------------------------------------------
# keypoints, suppression, ranking


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    response: float
    region_id: int = 0


def nms_indices(points, responses, radius: int = 1) -> np.ndarray:
    """Indices (ascending) of points that beat every neighbour within ``radius``.

    Neighbourhood is Chebyshev distance.  On exactly equal responses the point
    with the smaller (y, x) wins.
    """
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    resp = np.asarray(responses, dtype=np.float64)
    n = len(pts)
    if n == 0:
        return np.empty(0, dtype=np.intp)
    pairs = cKDTree(pts).query_pairs(r=radius, p=np.inf, output_type="ndarray")
    beaten = np.zeros(n, dtype=bool)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        ri, rj = resp[i], resp[j]
        yx_i = pts[i, 1] * (pts[:, 0].max() + 1) + pts[i, 0]
        yx_j = pts[j, 1] * (pts[:, 0].max() + 1) + pts[j, 0]
        i_wins = (ri > rj) | ((ri == rj) & (yx_i < yx_j))
        j_wins = (rj > ri) | ((ri == rj) & (yx_j < yx_i))
        beaten[j[i_wins]] = True
        beaten[i[j_wins]] = True
    return np.flatnonzero(~beaten)


def nms(keypoints: Sequence[Keypoint], radius: int = 1) -> list:
    """Non-maximum suppression over a list of :class:`Keypoint`."""
    if not keypoints:
        return []
    pts = [(k.x, k.y) for k in keypoints]
    keep = nms_indices(pts, [k.response for k in keypoints], radius)
    return [keypoints[i] for i in keep]


def top_n_indices(points, responses, n: int) -> np.ndarray:
    """Indices of the ``n`` strongest points: response desc, then (y, x) asc."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    resp = np.asarray(responses, dtype=np.float64)
    order = np.lexsort((pts[:, 0], pts[:, 1], -resp))
    return order[:n]


def select_top_n(keypoints: Sequence[Keypoint], n: int) -> list:
    if n < 1:
        raise ValueError("n must be >= 1")
    return sorted(keypoints, key=lambda k: (-k.response, k.y, k.x))[:n]


# ---------------------------------------------------------------------------
# ternary BRIEF


@dataclass(frozen=True, eq=False)
class BriefPattern:
    """``pairs`` rows are ``(dx_p, dy_p, dx_q, dy_q)`` offsets from the keypoint."""

    pairs: np.ndarray
    patch_half: int
    seed: int

    @property
    def n_d(self) -> int:
        return len(self.pairs)

    def __eq__(self, other):
        return (isinstance(other, BriefPattern) and self.patch_half == other.patch_half
                and np.array_equal(self.pairs, other.pairs))


def pattern_sigma(patch_half: int) -> float:
    return patch_half / 2.5


def brief_pattern(n_d: int, patch_half: int, seed: int) -> BriefPattern:
    """Sample ``n_d`` point pairs from a Gaussian truncated to the patch.

    Each coordinate is drawn from N(0, (patch_half/2.5)^2), rounded to the
    nearest pixel, and redrawn while it falls outside ``[-patch_half,
    patch_half]``.
    """
    if n_d < 1:
        raise ValueError("n_d must be >= 1")
    if patch_half < 1:
        raise ValueError("patch_half must be >= 1")
    rng = np.random.default_rng(seed)
    offsets = _truncated_offsets(rng, 4 * n_d, pattern_sigma(patch_half), patch_half)
    pairs = offsets.reshape(n_d, 4)
    pairs.flags.writeable = False
    return BriefPattern(pairs, patch_half, seed)


def _truncated_offsets(rng, count, sigma, bound):
    out = np.empty(0, dtype=np.int64)
    while out.size < count:
        draw = np.rint(rng.normal(0.0, sigma, size=2 * (count - out.size) + 16)).astype(np.int64)
        out = np.concatenate([out, draw[np.abs(draw) <= bound]])
    return out[:count]


@dataclass(frozen=True, eq=False)
class Descriptor:
    """Ternary code as two packed bitplanes (MSB-first, like ``np.packbits``)."""

    gt: np.ndarray
    lt: np.ndarray
    n_d: int

    def __post_init__(self):
        if self.gt.shape != self.lt.shape or self.gt.shape != ((self.n_d + 7) // 8,):
            raise ValueError("bitplane shapes do not match n_d")
        if np.any(self.gt & self.lt):
            raise ValueError("gt and lt planes overlap")

    @classmethod
    def from_trits(cls, trits):
        t = np.asarray(trits)
        return cls(np.packbits(t > 0), np.packbits(t < 0), len(t))

    def trits(self) -> np.ndarray:
        gt = np.unpackbits(self.gt)[: self.n_d].astype(np.int8)
        lt = np.unpackbits(self.lt)[: self.n_d].astype(np.int8)
        return gt - lt

    def __eq__(self, other):
        return (isinstance(other, Descriptor) and self.n_d == other.n_d
                and np.array_equal(self.gt, other.gt) and np.array_equal(self.lt, other.lt))

    def hex(self):
        return self.gt.tobytes().hex(), self.lt.tobytes().hex()


def brief_planes(smoothed: np.ndarray, xs, ys, pattern: BriefPattern):
    """Packed (gt, lt) planes for many keypoints at once."""
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    nbytes = (pattern.n_d + 7) // 8
    if xs.size == 0:
        empty = np.zeros((0, nbytes), dtype=np.uint8)
        return empty, empty.copy()
    h, w = smoothed.shape
    ph = pattern.patch_half
    if xs.min() < ph or ys.min() < ph or xs.max() > w - 1 - ph or ys.max() > h - 1 - ph:
        raise PatchOutOfBounds(f"BRIEF patch of half-width {ph} leaves the {w}x{h} image")
    p = pattern.pairs
    vp = smoothed[ys[:, None] + p[:, 1], xs[:, None] + p[:, 0]]
    vq = smoothed[ys[:, None] + p[:, 3], xs[:, None] + p[:, 2]]
    return np.packbits(vp > vq, axis=1), np.packbits(vp < vq, axis=1)


def brief_descriptor(smoothed, kp: Keypoint, pattern: BriefPattern) -> Descriptor:
    """Ternary code for one keypoint on an already smoothed image."""
    arr = imgcore.as_array(smoothed)
    gt, lt = brief_planes(arr, [kp.x], [kp.y], pattern)
    return Descriptor(gt[0], lt[0], pattern.n_d)


# ---------------------------------------------------------------------------
# full extraction


@dataclass
class ExtractionConfig:
    fast_threshold: int = 20
    fast_arc: int = 9
    harris_alpha: float = 0.04
    harris_threshold: float = 1.0e4
    harris_sigma: float = 1.0
    top_n: int = 500
    n_d: int = 256
    brief_blur_sigma: float = 2.0
    patch_half: int = 15
    nms_radius: int = 1

    def validate(self):
        if not 9 <= self.fast_arc <= 16:
            raise ValueError(f"fast_arc must be in [9, 16], got {self.fast_arc}")
        if self.top_n < 4:
            raise ValueError(f"top_n must be >= 4, got {self.top_n}")
        if not 64 <= self.n_d <= 512:
            raise ValueError(f"n_d must be in [64, 512], got {self.n_d}")
        if not 0 <= self.fast_threshold <= 255:
            raise ValueError("fast_threshold must be an 8-bit intensity delta")
        if self.harris_sigma <= 0 or self.brief_blur_sigma <= 0:
            raise ValueError("sigmas must be positive")
        if self.patch_half < max(RING_RADIUS, math.ceil(3 * self.harris_sigma)):
            raise ValueError("patch_half must cover the FAST ring and Harris window")
        return self


@dataclass
class FeatureSet:
    """Keypoints plus descriptors in struct-of-arrays form.

    Behaves as a sequence of ``(Keypoint, Descriptor)`` pairs.
    """

    xs: np.ndarray
    ys: np.ndarray
    responses: np.ndarray
    region_ids: np.ndarray
    gt: np.ndarray
    lt: np.ndarray
    n_d: int
    # sub-pixel peak of the Harris response; only used for geometry
    sub_xy: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, n_d: int):
        nb = (n_d + 7) // 8
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64),
                   np.zeros(0, np.int64), np.zeros((0, nb), np.uint8), np.zeros((0, nb), np.uint8), n_d,
                   np.zeros((0, 2), np.float64))

    @classmethod
    def concat(cls, parts, n_d: int):
        parts = list(parts)
        if not parts:
            return cls.empty(n_d)
        arrays = [np.concatenate([getattr(p, f) for p in parts])
                  for f in ("xs", "ys", "responses", "region_ids", "gt", "lt")]
        sub = None
        if all(p.sub_xy is not None for p in parts):
            sub = np.concatenate([p.sub_xy for p in parts])
        return cls(*arrays, n_d, sub)

    def __len__(self):
        return len(self.xs)

    def keypoint(self, i) -> Keypoint:
        return Keypoint(int(self.xs[i]), int(self.ys[i]), float(self.responses[i]), int(self.region_ids[i]))

    def descriptor(self, i) -> Descriptor:
        return Descriptor(self.gt[i], self.lt[i], self.n_d)

    def __getitem__(self, i):
        return self.keypoint(i), self.descriptor(i)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.xs, self.ys], axis=1)

    @property
    def refined_points(self) -> np.ndarray:
        return self.points.astype(np.float64) if self.sub_xy is None else self.sub_xy

    def subset(self, index) -> "FeatureSet":
        sub = None if self.sub_xy is None else self.sub_xy[index]
        return FeatureSet(self.xs[index], self.ys[index], self.responses[index],
                          self.region_ids[index], self.gt[index], self.lt[index], self.n_d, sub)

    def in_regions(self, region_ids) -> "FeatureSet":
        return self.subset(np.isin(self.region_ids, list(region_ids)))


def detect_in_region(gray: np.ndarray, region: DetectionRegion, cfg: ExtractionConfig):
    """Keypoint arrays (xs, ys, responses) for one region, strongest first."""
    h, w = gray.shape
    x0, y0, x1, y1 = region.inset(cfg.patch_half, w, h)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64))
    if x0 >= x1 or y0 >= y1:
        return empty
    inner = DetectionRegion(x0, y0, x1, y1, region.camera_id)
    pts = fast_corners(gray, inner, cfg.fast_threshold, cfg.fast_arc)
    if len(pts) == 0:
        return empty
    resp = harris_response(gray, pts, cfg.harris_alpha, cfg.harris_sigma)
    strong = resp >= cfg.harris_threshold
    pts, resp = pts[strong], resp[strong]
    keep = nms_indices(pts, resp, cfg.nms_radius)
    pts, resp = pts[keep], resp[keep]
    top = top_n_indices(pts, resp, cfg.top_n)
    return pts[top, 0], pts[top, 1], resp[top]


def refine_subpixel(gray: np.ndarray, xs, ys, alpha: float = 0.04, sigma: float = 1.0) -> np.ndarray:
    """Quadratic fit of the Harris response on the 3x3 block around each point.

    Returns ``(N, 2)`` float positions; a point keeps its integer location when
    the fit is not a proper maximum within half a pixel.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    pts = np.stack([xs, ys], axis=1)
    if len(pts) == 0:
        return np.zeros((0, 2), np.float64)
    r = np.empty((len(pts), 3, 3))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            r[:, dy + 1, dx + 1] = harris_response(gray, pts + (dx, dy), alpha, sigma)
    gx = (r[:, 1, 2] - r[:, 1, 0]) / 2
    gy = (r[:, 2, 1] - r[:, 0, 1]) / 2
    hxx = r[:, 1, 2] - 2 * r[:, 1, 1] + r[:, 1, 0]
    hyy = r[:, 2, 1] - 2 * r[:, 1, 1] + r[:, 0, 1]
    hxy = (r[:, 2, 2] - r[:, 2, 0] - r[:, 0, 2] + r[:, 0, 0]) / 4
    det = hxx * hyy - hxy * hxy
    with np.errstate(divide="ignore", invalid="ignore"):
        ox = -(hyy * gx - hxy * gy) / det
        oy = -(hxx * gy - hxy * gx) / det
    ok = (det > 0) & (hxx < 0) & (np.abs(ox) <= 0.5) & (np.abs(oy) <= 0.5)
    return np.stack([xs + np.where(ok, ox, 0.0), ys + np.where(ok, oy, 0.0)], axis=1)


def smoothed_crop(gray: np.ndarray, x0, y0, x1, y1, sigma: float):
    """Blur a padded crop; inside ``[x0,x1) x [y0,y1)`` it equals a full-image blur.

    Returns the blurred crop and its origin.  Smoothing runs in float64 so that
    strict intensity comparisons are stable under additive shifts.
    """
    h, w = gray.shape
    pad = int(math.ceil(3 * sigma))
    cx0, cy0 = max(x0 - pad, 0), max(y0 - pad, 0)
    cx1, cy1 = min(x1 + pad, w), min(y1 + pad, h)
    crop = imgcore.blur_array(gray[cy0:cy1, cx0:cx1], sigma, np.float64)
    return crop, cx0, cy0


def describe_keypoints(gray: np.ndarray, xs, ys, cfg: ExtractionConfig, pattern: BriefPattern):
    """Descriptor bitplanes and sub-pixel positions for one region's keypoints."""
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.size == 0:
        nb = (pattern.n_d + 7) // 8
        return np.zeros((0, nb), np.uint8), np.zeros((0, nb), np.uint8), np.zeros((0, 2))
    ph = pattern.patch_half
    smooth, ox, oy = smoothed_crop(gray, int(xs.min()) - ph, int(ys.min()) - ph,
                                   int(xs.max()) + ph + 1, int(ys.max()) + ph + 1, cfg.brief_blur_sigma)
    gt, lt = brief_planes(smooth, xs - ox, ys - oy, pattern)
    sub = refine_subpixel(gray, xs, ys, cfg.harris_alpha, cfg.harris_sigma)
    return gt, lt, sub


def extract_features(img, regions: Sequence[DetectionRegion], cfg: ExtractionConfig,
                     pattern: BriefPattern) -> FeatureSet:
    """Run detection and description in every region; ``region_id`` is the list index."""
    gray = imgcore.to_grayscale(img).data
    if pattern.n_d != cfg.n_d:
        raise ValueError(f"pattern has {pattern.n_d} pairs but config asks for {cfg.n_d}")
    parts = []
    for rid, region in enumerate(regions):
        xs, ys, resp = detect_in_region(gray, region, cfg)
        if xs.size == 0:
            continue
        gt, lt, sub = describe_keypoints(gray, xs, ys, cfg, pattern)
        parts.append(FeatureSet(xs, ys, resp, np.full(xs.shape, rid, np.int64), gt, lt, cfg.n_d, sub))
    return FeatureSet.concat(parts, cfg.n_d)
