"""Desk-scale benchmark suites on seeded synthetic data.

* ``features``: full-frame detection versus overlap-strip detection.
* ``match``: multi-probe LSH recall and latency against brute force.
* ``pipeline``: serial versus pipelined throughput over camera counts and
  frames in flight.

Each suite returns a list of row dicts (CSV-ready).  Timing uses the
monotonic ``perf_counter`` clock.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import imgcore, lorb, matchlsh, pipeline, synth
from .lorb import DetectionRegion, ExtractionConfig, FeatureSet
from .matchlsh import MatchConfig, ProsacConfig

FEATURE_SIZES = ((800, 600), (1920, 1080), (2304, 1728))
PROBE_SWEEP = (1, 2, 4, 8, 16, 32)
CAMERA_SWEEP = tuple(range(2, 8))
IN_FLIGHT_SWEEP = (1, 2, 4, 8)


def _median_ms(fn, runs: int) -> float:
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(times))


# ---------------------------------------------------------------------------
# features


def feature_times(width: int, height: int, overlap: float = 0.25, runs: int = 5, seed: int = 0,
                  cfg: Optional[ExtractionConfig] = None) -> dict:
    """Median extraction time on one camera: whole frame versus its overlap strip.

    The camera is the left member of a pair, so its strip is the right
    ``overlap`` fraction of the frame.
    """
    cfg = cfg or ExtractionConfig()
    img = synth.textured_image(width, height, seed)
    pattern = lorb.brief_pattern(cfg.n_d, cfg.patch_half, seed)
    full = [DetectionRegion(0, 0, width, height)]
    strip = [lorb.partition_regions(lorb.CameraLayout.uniform(2, overlap), [(width, height)] * 2)[0]]
    n_full = len(lorb.extract_features(img, full, cfg, pattern))
    n_strip = len(lorb.extract_features(img, strip, cfg, pattern))
    full_ms = _median_ms(lambda: lorb.extract_features(img, full, cfg, pattern), runs)
    strip_ms = _median_ms(lambda: lorb.extract_features(img, strip, cfg, pattern), runs)
    return {"width": width, "height": height, "overlap": overlap, "runs": runs,
            "full_ms": full_ms, "region_ms": strip_ms, "ratio": strip_ms / full_ms,
            "full_keypoints": n_full, "region_keypoints": n_strip}


def bench_features(sizes: Sequence = FEATURE_SIZES, overlap: float = 0.25, runs: int = 5, seed: int = 0) -> list:
    return [feature_times(w, h, overlap, runs, seed) for w, h in sizes]


# ---------------------------------------------------------------------------
# matching


def descriptor_corpus(n_db: int = 1000, n_queries: int = 100, seed: int = 0, degrees: float = 10.0,
                      noise: float = 8.0):
    """Database descriptors from a textured frame and query descriptors of the
    same scene points in a rotated, noisy copy.

    Returns ``(database, queries, truth)`` where ``truth[i]`` is the database
    row the query was derived from.
    """
    w, h = 960, 720
    rng = np.random.default_rng(seed)
    gray = synth.texture(w, h, seed)
    img = imgcore.Image(imgcore.to_u8(gray))
    cfg = ExtractionConfig(top_n=n_db, harris_threshold=1e3)
    pattern = lorb.brief_pattern(cfg.n_d, cfg.patch_half, seed)
    db = lorb.extract_features(img, [DetectionRegion(0, 0, w, h)], cfg, pattern)
    rot = synth.rotation_about((w - 1) / 2, (h - 1) / 2, degrees)
    moved = synth.rotate(img, degrees).data.astype(np.float64) + rng.normal(0, noise, (h, w))
    smooth = imgcore.blur_array(imgcore.to_u8(moved), cfg.brief_blur_sigma, np.float64)
    pts = rot.apply(db.points.astype(np.float64))
    margin = cfg.patch_half + 25
    ok = np.flatnonzero((pts[:, 0] >= margin) & (pts[:, 0] < w - margin)
                        & (pts[:, 1] >= margin) & (pts[:, 1] < h - margin))
    pick = np.sort(rng.choice(ok, size=min(n_queries, ok.size), replace=False))
    q = np.rint(pts[pick]).astype(np.int64)
    gt, lt = lorb.brief_planes(smooth, q[:, 0], q[:, 1], pattern)
    queries = FeatureSet(q[:, 0], q[:, 1], db.responses[pick], np.zeros(pick.size, np.int64), gt, lt, cfg.n_d)
    return db, queries, pick


def lsh_recall(db: FeatureSet, queries: FeatureSet, cfg: Optional[MatchConfig] = None,
               probes: Optional[int] = None) -> dict:
    """Fraction of queries whose LSH top hit is at the brute-force nearest distance."""
    cfg = cfg or MatchConfig()
    t = cfg.probes if probes is None else probes
    index = matchlsh.build_index(db, cfg.tables, cfg.key_bits, cfg.seed)
    t0 = time.perf_counter()
    qs, ids = matchlsh.candidate_pairs(index, queries.gt, queries.lt, t)
    d = matchlsh.pairwise_distances(queries.gt[qs], queries.lt[qs], index.gt[ids], index.lt[ids])
    best = np.full(len(queries), np.iinfo(np.int64).max)
    np.minimum.at(best, qs, d)
    lsh_ms = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    exact = matchlsh.distance_matrix(queries, db).min(axis=1)
    brute_ms = 1e3 * (time.perf_counter() - t0)
    return {"probes": t, "tables": cfg.tables, "key_bits": cfg.key_bits,
            "recall": float(np.mean(best == exact)),
            "mean_candidates": qs.size / max(len(queries), 1),
            "lsh_ms": lsh_ms, "brute_ms": brute_ms}


def bench_match(seed: int = 0, probes: Sequence[int] = PROBE_SWEEP, n_db: int = 1000, n_queries: int = 100,
                cfg: Optional[MatchConfig] = None) -> list:
    cfg = replace(cfg or MatchConfig(), seed=seed)
    db, queries, _ = descriptor_corpus(n_db, n_queries, seed)
    return [lsh_recall(db, queries, cfg, t) for t in probes]


# ---------------------------------------------------------------------------
# robust estimation


def hypotheses_to_clean_sample(src, dst, is_inlier, sampler_kind: str, seed: int, max_iter: int = 100_000) -> int:
    """Hypotheses drawn until the first sample made only of true inliers."""
    rng = np.random.default_rng(seed)
    n = len(src)
    if sampler_kind == "prosac":
        sampler = matchlsh.ProgressiveSampler(n, 4, ProsacConfig().growth_tn, rng)
    else:
        sampler = matchlsh.UniformSampler(n, 4, rng)
    for t in range(1, max_iter + 1):
        if np.all(is_inlier[sampler.draw()]):
            return t
    return max_iter


def prosac_efficiency(trials: int = 100, seed: int = 0, n_inliers: int = 70, n_outliers: int = 30) -> dict:
    """Mean hypothesis counts to a clean sample, PROSAC versus uniform sampling."""
    pro, uni = [], []
    for k in range(trials):
        src, dst, truth, _, _ = synth.planted_matches(n_inliers, n_outliers, 0.5, seed + k)
        pro.append(hypotheses_to_clean_sample(src, dst, truth, "prosac", seed + k))
        uni.append(hypotheses_to_clean_sample(src, dst, truth, "uniform", seed + k))
    p = n_inliers / (n_inliers + n_outliers)
    clean = math.comb(n_inliers, 4) / math.comb(n_inliers + n_outliers, 4)
    return {"trials": trials, "prosac_mean": float(np.mean(pro)), "uniform_mean": float(np.mean(uni)),
            "ratio": float(np.mean(pro) / np.mean(uni)), "uniform_expected": 1 / clean,
            "inlier_fraction": p}


# ---------------------------------------------------------------------------
# pipeline


def pipeline_throughput(n_cameras: int, mode: str, frames_in_flight: int, n_frames: int = 10,
                        width: int = 320, height: int = 240, seed: int = 0, frames=None) -> dict:
    if frames is None:
        rig = synth.make_rig(n_cameras, width, height, 0.25, seed)
        frames = list(synth.frame_sequence(rig, n_frames, seed))
    cfg = pipeline.PipelineConfig(mode=mode, frames_in_flight=frames_in_flight)
    settings = pipeline.StitchSettings(n_cameras=n_cameras, seed=seed)
    m = pipeline.run(cfg, frames, lambda j, img: None, settings)
    return {"cameras": n_cameras, "mode": mode, "frames_in_flight": frames_in_flight if mode != "serial" else 1,
            "frames": m.frames_out, "dropped": len(m.drops), "wall_s": m.wall_ns * 1e-9,
            "fps": m.throughput, "ms_per_frame": 1e3 / m.throughput if m.throughput else float("nan")}


def bench_pipeline(cameras: Sequence[int] = CAMERA_SWEEP, in_flight: Sequence[int] = IN_FLIGHT_SWEEP,
                   n_frames: int = 10, width: int = 320, height: int = 240, seed: int = 0) -> list:
    rows = []
    for n in cameras:
        rig = synth.make_rig(n, width, height, 0.25, seed)
        frames = list(synth.frame_sequence(rig, n_frames, seed))
        rows.append(pipeline_throughput(n, "serial", 1, seed=seed, frames=frames))
        for f in in_flight:
            rows.append(pipeline_throughput(n, "pipelined", f, seed=seed, frames=frames))
    return rows


SUITES = {"features": bench_features, "match": bench_match, "pipeline": bench_pipeline}
