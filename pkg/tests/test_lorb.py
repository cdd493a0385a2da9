import numpy as np
import pytest

from lorbstitch import imgcore, lorb, synth
from lorbstitch.errors import (NoOverlap, OverlapExceedsImage, PatchOutOfBounds, RegionTooSmall,
                               WindowOutOfBounds)
from lorbstitch.lorb import CameraLayout, DetectionRegion, Descriptor, ExtractionConfig, Keypoint

import oracles

# frozen by oracles.harris_oracle on the 32x32 quadrant image below
QUADRANT_R_CORNER_PIXEL = 37942497.738839194   # last white pixel (15, 15)
QUADRANT_R_DIAGONAL = 7330103.872215006        # first black pixel on the diagonal (16, 16)
# frozen by oracles.discrete_truncated_std(15 / 2.5, 15)
PATTERN_STD = 5.779878573232209


def _quadrant():
    img = np.zeros((32, 32), np.uint8)
    img[:16, :16] = 255
    return img


# ---------------------------------------------------------------- regions


def test_partition_quarter_overlap():
    regions = lorb.partition_regions(CameraLayout.uniform(2, 0.25), [(1000, 600)] * 2)
    assert [(r.camera_id, r.x0, r.x1, r.y0, r.y1) for r in regions] == [(0, 750, 1000, 0, 600), (1, 0, 250, 0, 600)]


def test_partition_full_and_errors():
    regions = lorb.partition_regions(CameraLayout.uniform(2, 1.0), [(80, 60)] * 2)
    assert all((r.x0, r.y0, r.x1, r.y1) == (0, 0, 80, 60) for r in regions)
    with pytest.raises(NoOverlap):
        lorb.partition_regions(CameraLayout.uniform(2, 0.0), [(80, 60)] * 2)
    with pytest.raises(OverlapExceedsImage):
        lorb.partition_regions(CameraLayout.uniform(2, 1.5), [(80, 60)] * 2)


def test_partition_three_cameras_and_explicit():
    regions = lorb.partition_regions(CameraLayout.uniform(3, 0.5), [(100, 50)] * 3)
    assert [(r.camera_id, r.pair, r.x0, r.x1) for r in regions] == [
        (0, 0, 50, 100), (1, 0, 0, 50), (1, 1, 50, 100), (2, 1, 0, 50)]
    explicit = [DetectionRegion(10, 0, 40, 50, 1)]
    assert lorb.partition_regions(CameraLayout(2, (), explicit), [(100, 50)] * 2) == explicit
    with pytest.raises(OverlapExceedsImage):
        lorb.partition_regions(CameraLayout(2, (), [DetectionRegion(10, 0, 140, 50, 1)]), [(100, 50)] * 2)


# ---------------------------------------------------------------- FAST


def _full(img):
    h, w = img.shape
    return DetectionRegion(0, 0, w, h)


def _as_set(pts):
    return {tuple(map(int, p)) for p in pts}


def test_fast_constant_is_empty():
    img = np.full((20, 20), 90, np.uint8)
    assert len(lorb.fast_corners(img, _full(img), 10)) == 0


def test_fast_impulse_matches_oracle():
    img = np.zeros((32, 32), np.uint8)
    img[10, 10] = 255
    got = _as_set(lorb.fast_corners(img, _full(img), 10))
    assert got == set(oracles.fast_oracle(img, 10))
    assert (10, 10) in got


def test_fast_ramp_is_empty():
    img = np.tile(4 * np.arange(40, dtype=np.uint8), (20, 1))
    got = _as_set(lorb.fast_corners(img, _full(img), 10, 9))
    assert got == set(oracles.fast_oracle(img, 10, 9)) == set()


def test_fast_random_and_arcs_match_oracle():
    rng = np.random.default_rng(5)
    for arc in (9, 12, 16):
        img = rng.integers(0, 256, (24, 30)).astype(np.uint8)
        region = DetectionRegion(2, 4, 27, 22)
        got = _as_set(lorb.fast_corners(img, region, 30, arc))
        assert got == set(oracles.fast_oracle(img, 30, arc, (2, 4, 27, 22)))


def test_fast_sorted_and_region_errors():
    img = np.random.default_rng(6).integers(0, 256, (40, 40)).astype(np.uint8)
    pts = lorb.fast_corners(img, _full(img), 20)
    keys = [(y, x) for x, y in pts]
    assert keys == sorted(keys)
    with pytest.raises(RegionTooSmall):
        lorb.fast_corners(img, DetectionRegion(0, 0, 3, 40), 20)
    with pytest.raises(ValueError):
        lorb.fast_corners(img, _full(img), 20, arc=8)


# ---------------------------------------------------------------- Harris


def test_harris_constant_zero():
    img = np.full((20, 20), 40, np.uint8)
    assert np.all(lorb.harris_response(img, [(5, 5), (10, 12)]) == 0)


def test_harris_quadrant_corner_frozen():
    r = lorb.harris_response(_quadrant(), [(15, 15), (16, 16)], 0.04, 1.0)
    assert r[0] == pytest.approx(QUADRANT_R_CORNER_PIXEL, rel=1e-9)
    assert r[1] == pytest.approx(QUADRANT_R_DIAGONAL, rel=1e-9)
    assert np.all(r > 0)


def test_harris_step_edge_negative():
    img = np.zeros((32, 32), np.uint8)
    img[:, 16:] = 255
    r = lorb.harris_response(img, [(15, 16), (16, 16), (16, 8)])
    assert np.all(r < 0)


def test_harris_matches_direct_sums():
    img = np.random.default_rng(7).integers(0, 256, (40, 50)).astype(np.uint8)
    pts = [(x, y) for y in range(3, 37, 5) for x in range(3, 47, 6)]
    got = lorb.harris_response(img, pts, 0.05, 1.0)
    want = oracles.harris_oracle(img, pts, 0.05, 1.0)
    assert np.allclose(got, want, rtol=1e-9, atol=1e-6)


def test_harris_window_out_of_bounds():
    with pytest.raises(WindowOutOfBounds):
        lorb.harris_response(np.zeros((20, 20)), [(2, 10)])


# ---------------------------------------------------------------- NMS / top-n


def test_nms_basic():
    assert lorb.nms([Keypoint(4, 4, 1.0)]) == [Keypoint(4, 4, 1.0)]
    kept = lorb.nms([Keypoint(4, 4, 5.0), Keypoint(5, 4, 3.0)])
    assert kept == [Keypoint(4, 4, 5.0)]
    tie = lorb.nms([Keypoint(5, 4, 2.0), Keypoint(4, 5, 2.0)])
    assert tie == [Keypoint(5, 4, 2.0)]


def test_nms_random_matches_oracle():
    rng = np.random.default_rng(8)
    for radius in (1, 2):
        pts = rng.integers(0, 12, (50, 2))
        pts = np.unique(pts, axis=0)
        resp = rng.integers(0, 6, len(pts)).astype(float)
        got = lorb.nms_indices(pts, resp, radius).tolist()
        assert sorted(got) == oracles.nms_oracle(pts.tolist(), resp.tolist(), radius)


def test_top_n():
    kps = [Keypoint(1, 1, 2.0), Keypoint(0, 0, 5.0), Keypoint(3, 0, 2.0)]
    assert lorb.select_top_n(kps, 5) == [Keypoint(0, 0, 5.0), Keypoint(3, 0, 2.0), Keypoint(1, 1, 2.0)]
    rng = np.random.default_rng(9)
    pts = rng.integers(0, 500, (1000, 2))
    resp = rng.integers(0, 50, 1000).astype(float)
    got = lorb.top_n_indices(pts, resp, 100).tolist()
    assert got == oracles.top_n_oracle(pts.tolist(), resp.tolist(), 100)


# ---------------------------------------------------------------- BRIEF


def test_pattern_determinism_and_bounds():
    a = lorb.brief_pattern(256, 15, 3)
    assert a == lorb.brief_pattern(256, 15, 3)
    assert a != lorb.brief_pattern(256, 15, 4)
    big = lorb.brief_pattern(2500, 15, 0)
    assert big.pairs.size == 10_000 and np.abs(big.pairs).max() <= 15


def test_pattern_std_matches_truncated_gaussian():
    offsets = lorb.brief_pattern(25_000, 15, 11).pairs.ravel()
    assert offsets.size == 100_000
    assert abs(offsets.std() / PATTERN_STD - 1) < 0.05
    assert PATTERN_STD == pytest.approx(oracles.discrete_truncated_std(6.0, 15), rel=1e-12)


def test_descriptor_constant_is_zero():
    pat = lorb.brief_pattern(256, 15, 0)
    d = lorb.brief_descriptor(np.full((40, 40), 7.0), Keypoint(20, 20, 1.0), pat)
    assert not d.gt.any() and not d.lt.any()


def test_descriptor_matches_trit_oracle_and_shift():
    rng = np.random.default_rng(10)
    sm = rng.uniform(20, 200, (50, 50))
    pat = lorb.brief_pattern(128, 15, 1)
    d = lorb.brief_descriptor(sm, Keypoint(24, 25, 1.0), pat)
    assert d.trits().tolist() == oracles.trits_oracle(sm, 24, 25, pat.pairs)
    assert lorb.brief_descriptor(sm + 20, Keypoint(24, 25, 1.0), pat) == d
    with pytest.raises(PatchOutOfBounds):
        lorb.brief_descriptor(sm, Keypoint(5, 25, 1.0), pat)


def test_descriptor_trit_round_trip():
    t = np.random.default_rng(12).integers(-1, 2, 256)
    d = Descriptor.from_trits(t)
    assert np.array_equal(d.trits(), t) and not np.any(d.gt & d.lt)
    with pytest.raises(ValueError):
        Descriptor(np.full(32, 1, np.uint8), np.full(32, 1, np.uint8), 256)


def test_extraction_config_validate():
    ExtractionConfig().validate()
    for bad in (dict(fast_arc=8), dict(top_n=3), dict(n_d=32), dict(n_d=600)):
        with pytest.raises(ValueError):
            ExtractionConfig(**bad).validate()


# ---------------------------------------------------------------- extraction


def test_extract_constant_empty():
    cfg = ExtractionConfig()
    pat = lorb.brief_pattern(cfg.n_d, cfg.patch_half, 0)
    assert len(lorb.extract_features(np.full((64, 64), 99, np.uint8), [_full(np.zeros((64, 64)))], cfg, pat)) == 0


def test_extract_checkerboard_containment():
    # sparse checkerboard: X-junctions defeat a 9-of-16 arc, isolated squares do not
    yy, xx = np.indices((120, 200)) // 8
    board = np.where((yy % 2 == 1) & (xx % 2 == 1), 220, 20).astype(np.uint8)
    cfg = ExtractionConfig()
    pat = lorb.brief_pattern(cfg.n_d, cfg.patch_half, 0)
    region = DetectionRegion(150, 0, 200, 120)
    fs = lorb.extract_features(board, [region], cfg, pat)
    assert len(fs) > 0
    assert np.all(fs.region_ids == 0)
    x0, y0, x1, y1 = region.inset(cfg.patch_half, 200, 120)
    assert np.all((fs.xs >= x0) & (fs.xs < x1) & (fs.ys >= y0) & (fs.ys < y1))


def test_extract_equals_composed_oracle():
    img = synth.textured_image(256, 256, 4).data
    cfg = ExtractionConfig(top_n=60)
    pat = lorb.brief_pattern(cfg.n_d, cfg.patch_half, 4)
    fs = lorb.extract_features(img, [_full(img)], cfg, pat)

    ph = cfg.patch_half
    cands = oracles.fast_oracle(img, cfg.fast_threshold, cfg.fast_arc, (ph, ph, 256 - ph, 256 - ph))
    grads = oracles.gradient_oracle(img)
    resp = oracles.harris_oracle(img, cands, cfg.harris_alpha, cfg.harris_sigma, grads)
    strong = [(p, r) for p, r in zip(cands, resp) if r >= cfg.harris_threshold]
    pts = [p for p, _ in strong]
    rs = [r for _, r in strong]
    keep = oracles.nms_oracle(pts, rs, cfg.nms_radius)
    pts = [pts[i] for i in keep]
    rs = [rs[i] for i in keep]
    top = oracles.top_n_oracle(pts, rs, cfg.top_n)
    assert fs.points.tolist() == [list(pts[i]) for i in top]
    assert np.allclose(fs.responses, [rs[i] for i in top], rtol=1e-9)

    smooth = oracles.blur_oracle(img, cfg.brief_blur_sigma)
    p = pat.pairs
    for i, (x, y) in enumerate(fs.points):
        want = np.array(oracles.trits_oracle(smooth, x, y, p))
        vp = smooth[y + p[:, 1], x + p[:, 0]]
        vq = smooth[y + p[:, 3], x + p[:, 2]]
        decisive = np.abs(vp - vq) > 1e-9
        assert np.array_equal(fs.descriptor(i).trits()[decisive], want[decisive])


def test_extract_deterministic_and_disjoint_planes():
    img = synth.textured_image(160, 120, 2)
    cfg = ExtractionConfig()
    pat = lorb.brief_pattern(cfg.n_d, cfg.patch_half, 2)
    a = lorb.extract_features(img, [DetectionRegion(0, 0, 160, 120)], cfg, pat)
    b = lorb.extract_features(img, [DetectionRegion(0, 0, 160, 120)], cfg, pat)
    assert np.array_equal(a.gt, b.gt) and np.array_equal(a.lt, b.lt) and np.array_equal(a.points, b.points)
    assert not np.any(a.gt & a.lt)
    assert np.all(np.abs(a.sub_xy - a.points) <= 0.5)


def test_extract_top_n_per_region():
    img = synth.textured_image(200, 100, 3)
    cfg = ExtractionConfig(top_n=5, harris_threshold=0)
    pat = lorb.brief_pattern(cfg.n_d, cfg.patch_half, 0)
    fs = lorb.extract_features(img, [DetectionRegion(0, 0, 100, 100), DetectionRegion(100, 0, 200, 100)], cfg, pat)
    assert np.bincount(fs.region_ids).tolist() == [5, 5]
