"""Measurement helpers shared by the rectify tests and the acceptance suite."""

import numpy as np

from lorbstitch import imgcore, lorb, matchlsh
from lorbstitch.lorb import DetectionRegion, ExtractionConfig, FeatureSet


def mutual_match_rate(img, moved, hom, cfg=None, seed=0):
    """Share of keypoints whose descriptor and the descriptor at the mapped
    location in ``moved`` are mutual nearest neighbours.

    ``hom`` maps ``img`` pixels to ``moved`` pixels.  Keypoints whose mapped
    patch would leave the frame are skipped.  Returns ``(rate, n_keypoints)``.
    """
    cfg = cfg or ExtractionConfig()
    a = imgcore.as_array(img)
    b = imgcore.as_array(moved)
    h, w = a.shape
    pattern = lorb.brief_pattern(cfg.n_d, cfg.patch_half, seed)
    fs = lorb.extract_features(a, [DetectionRegion(0, 0, w, h)], cfg, pattern)
    pts = hom.apply(fs.points.astype(np.float64))
    m = cfg.patch_half + 2
    ok = np.all((pts >= m) & (pts < np.array([b.shape[1], b.shape[0]]) - m), axis=1)
    src = fs.subset(ok)
    q = np.rint(pts[ok]).astype(np.int64)
    smooth = imgcore.blur_array(b, cfg.brief_blur_sigma, np.float64)
    gt, lt = lorb.brief_planes(smooth, q[:, 0], q[:, 1], pattern)
    dst = FeatureSet(q[:, 0], q[:, 1], src.responses, src.region_ids, gt, lt, cfg.n_d)
    d = matchlsh.distance_matrix(src, dst)
    if d.size == 0:
        return 0.0, 0
    fwd = d.argmin(axis=1)
    bwd = d.argmin(axis=0)
    idx = np.arange(len(src))
    return float(np.mean((fwd == idx) & (bwd[fwd] == idx))), len(src)


def corner_errors(h_est, h_true, width, height):
    """Transfer distance of the four image corners between two homographies."""
    c = np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]], dtype=np.float64)
    return np.linalg.norm(h_est.apply(c) - h_true.apply(c), axis=1)


def psnr(a, b):
    mse = np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)
    return float("inf") if mse == 0 else 10 * np.log10(255.0 ** 2 / mse)
