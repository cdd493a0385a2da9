"""Seeded procedural scenes with planted homographies.

Ground truth exists by construction, so benchmarks and tests need no image
assets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .compose import Canvas, warp_image
from .imgcore import Image, to_u8
from .matchlsh import Homography


def texture(width: int, height: int, seed: int = 0, shapes: int = None) -> np.ndarray:
    """Gray float64 texture in [0, 255]: multi-octave noise plus random blocks."""
    rng = np.random.default_rng(seed)
    acc = np.zeros((height, width), dtype=np.float64)
    for cell, amp in ((48, 1.0), (16, 0.6), (6, 0.35)):
        gh = max(height // cell + 2, 2)
        gw = max(width // cell + 2, 2)
        coarse = rng.standard_normal((gh, gw))
        fine = ndimage.zoom(coarse, (height / (gh - 1) + 1e-9, width / (gw - 1) + 1e-9), order=3)
        acc += amp * fine[:height, :width]
    acc = (acc - acc.mean()) / (acc.std() + 1e-12)
    img = 128 + 28 * acc
    if shapes is None:
        shapes = max(width * height // 900, 4)
    for _ in range(shapes):
        w = int(rng.integers(4, 22))
        h = int(rng.integers(4, 22))
        x = int(rng.integers(-w + 1, width))
        y = int(rng.integers(-h + 1, height))
        level = rng.uniform(0, 255)
        img[max(y, 0):y + h, max(x, 0):x + w] = 0.35 * img[max(y, 0):y + h, max(x, 0):x + w] + 0.65 * level
    img = ndimage.gaussian_filter(img, 0.7, mode="nearest")
    return np.clip(img, 0, 255)


def colorize(gray: np.ndarray, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed + 7919)
    tint = rng.uniform(0.8, 1.2, size=3)
    low = ndimage.zoom(rng.standard_normal((4, 4, 3)), (gray.shape[0] / 4, gray.shape[1] / 4, 1), order=1)
    low = low[: gray.shape[0], : gray.shape[1]]
    return np.clip(gray[..., None] * tint + 12 * low, 0, 255)


def textured_image(width: int, height: int, seed: int = 0, channels: int = 1) -> Image:
    g = texture(width, height, seed)
    return Image(to_u8(colorize(g, seed) if channels == 3 else g))


def rotation_about(cx: float, cy: float, degrees: float) -> Homography:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    t = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]])
    ti = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
    return Homography(t @ r @ ti)


def rotate(img, degrees: float) -> Image:
    """Rotate about the image center, same frame size, bilinear; exposed corners are 0."""
    arr = img.data if isinstance(img, Image) else np.asarray(img)
    h, w = arr.shape[:2]
    rot = rotation_about((w - 1) / 2, (h - 1) / 2, degrees)
    vals, _ = warp_image(arr, rot, Canvas(w, h, ((0, 0),)))
    return Image(to_u8(vals))


def planted_pair_homography(width: int, height: int, overlap: float, seed: int = 0,
                            degrees: float = 1.5, perspective: float = 2e-5) -> Homography:
    """Map from the right camera's pixels into the left camera's frame."""
    rng = np.random.default_rng(seed + 104729)
    deg = degrees * rng.uniform(-1, 1)
    rot = rotation_about((width - 1) / 2, (height - 1) / 2, deg).h
    persp = np.eye(3)
    persp[2, 0] = perspective * rng.uniform(-1, 1)
    persp[2, 1] = perspective * rng.uniform(-1, 1)
    shift = np.array([[1, 0, (1 - overlap) * width], [0, 1, rng.uniform(-3, 3)], [0, 0, 1]])
    return Homography(shift @ rot @ persp)


@dataclass
class Rig:
    """Camera row viewing one static scene; ``to_reference[c]`` maps camera
    ``c`` pixels into camera 0's frame."""

    views: list
    to_reference: list
    pair_homographies: list
    width: int
    height: int
    overlap: float


def make_rig(n_cameras: int, width: int, height: int, overlap: float = 0.25, seed: int = 0,
             channels: int = 1, degrees: float = 1.5, perspective: float = 2e-5) -> Rig:
    pairs = [planted_pair_homography(width, height, overlap, seed + i, degrees, perspective)
             for i in range(n_cameras - 1)]
    to_ref = [Homography.identity()]
    for hp in pairs:
        to_ref.append(to_ref[-1] @ hp)
    margin = max(width, height) // 4 + 8
    extent = np.concatenate([h.apply([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]])
                             for h in to_ref])
    sw = int(np.ceil(extent[:, 0].max())) + 2 * margin
    sh = int(np.ceil(extent[:, 1].max() - min(extent[:, 1].min(), 0))) + 2 * margin
    oy = margin - min(int(np.floor(extent[:, 1].min())), 0)
    scene = texture(sw, sh, seed)
    if channels == 3:
        scene = colorize(scene, seed)
    shift = Homography.translation(margin, oy)
    views = []
    for h in to_ref:
        # canvas pixel p (camera c) samples the scene at shift * H_c * p
        place = (shift @ h).inverse()
        vals, _ = warp_image(scene, place, Canvas(width, height, ((0, 0),)))
        views.append(Image(to_u8(vals)))
    return Rig(views, to_ref, pairs, width, height, overlap)


def make_pair(width: int, height: int, overlap: float = 0.25, seed: int = 0, channels: int = 1):
    """Two overlapping views and the planted right-to-left homography."""
    rig = make_rig(2, width, height, overlap, seed, channels)
    return rig.views[0], rig.views[1], rig.pair_homographies[0]


def frame_sequence(rig: Rig, n_frames: int, seed: int = 0, noise: float = 2.0):
    """Yield per-frame camera tuples: the static views plus seeded sensor noise."""
    for f in range(n_frames):
        rng = np.random.default_rng([seed, f])
        frame = []
        for v in rig.views:
            n = rng.normal(0.0, noise, size=v.data.shape) if noise > 0 else 0.0
            frame.append(Image(to_u8(v.data.astype(np.float64) + n)))
        yield tuple(frame)


def planted_matches(n_inliers: int = 70, n_outliers: int = 30, noise: float = 0.5, seed: int = 0,
                    width: int = 640, height: int = 480):
    """Correspondences for robust-estimation checks.

    Returns ``(src, dst, is_inlier, quality, h_true)`` sorted by quality, best
    first.  Inliers tend to score higher quality than outliers, as real
    descriptor distances do, but the two ranges overlap.
    """
    rng = np.random.default_rng(seed)
    h_true = planted_pair_homography(width, height, 0.3, seed, degrees=4.0, perspective=1e-4)
    src_in = rng.uniform([0, 0], [width, height], size=(n_inliers, 2))
    dst_in = h_true.apply(src_in) + rng.normal(0, noise, size=(n_inliers, 2))
    src_out = rng.uniform([0, 0], [width, height], size=(n_outliers, 2))
    dst_out = h_true.apply(rng.uniform([0, 0], [width, height], size=(n_outliers, 2)))
    src = np.concatenate([src_in, src_out])
    dst = np.concatenate([dst_in, dst_out])
    truth = np.r_[np.ones(n_inliers, bool), np.zeros(n_outliers, bool)]
    quality = np.where(truth, rng.uniform(0.55, 1.0, truth.size), rng.uniform(0.3, 0.75, truth.size))
    order = np.argsort(-quality, kind="stable")
    return src[order], dst[order], truth[order], quality[order], h_true
