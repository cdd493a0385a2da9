import numpy as np
import pytest

from lorbstitch import matchlsh, synth
from lorbstitch.errors import (BadParams, DegenerateConfiguration, EmptyInput, InsufficientMatches, LengthMismatch,
                               NoModelFound, ParamMismatch, TooManyProbes)
from lorbstitch.lorb import Descriptor, FeatureSet
from lorbstitch.matchlsh import Homography, MatchConfig, ProsacConfig

import oracles


def _set(trits):
    gt, lt = oracles.pack(trits)
    n = len(trits)
    z = np.zeros(n, np.int64)
    return FeatureSet(z, z, np.zeros(n), z, gt, lt, trits.shape[1])


def _planted(rng, n_db=1000, n_q=100, n_d=256, flips=8):
    db = oracles.random_trits(rng, n_db, n_d)
    truth = rng.choice(n_db, n_q, replace=False)
    q = db[truth].copy()
    for row in q:
        pos = rng.choice(n_d, flips, replace=False)
        # every change moves one step (0 <-> +-1), so the planted distance is exactly `flips`
        row[pos] = np.where(row[pos] == 0, rng.choice([-1, 1], flips), 0)
    return db, q, truth


# ---------------------------------------------------------------- distance


def test_distance_examples():
    a = Descriptor.from_trits(np.ones(256, int))
    b = Descriptor.from_trits(-np.ones(256, int))
    assert matchlsh.descriptor_distance(a, a) == 0
    assert matchlsh.descriptor_distance(a, b) == 512
    with pytest.raises(LengthMismatch):
        matchlsh.descriptor_distance(a, Descriptor.from_trits(np.ones(128, int)))


def test_distance_matches_trit_oracle():
    rng = np.random.default_rng(0)
    t = oracles.random_trits(rng, 40, 256)
    s = _set(t)
    d = matchlsh.distance_matrix(s, s)
    for i in range(0, 40, 3):
        for j in range(0, 40, 7):
            want = oracles.trit_distance_oracle(t[i], t[j])
            assert d[i, j] == want
            assert matchlsh.descriptor_distance(s.descriptor(i), s.descriptor(j)) == want


# ---------------------------------------------------------------- index


def test_build_index_shapes():
    empty = matchlsh.build_index([], 4, 16, 0, n_d=256)
    assert len(empty) == 0
    assert matchlsh.query(empty, Descriptor.from_trits(np.zeros(256, int))) == []
    one = matchlsh.build_index([Descriptor.from_trits(np.ones(256, int))], 3, 16, 0)
    assert sum(len(ids) for t in range(3) for ids in one.buckets(t).values()) == 3
    s = _set(oracles.random_trits(np.random.default_rng(1), 100, 256))
    idx = matchlsh.build_index(s, 4, 12, 0)
    for t in range(4):
        ids = sorted(i for b in idx.buckets(t).values() for i in b)
        assert ids == list(range(100))
    assert np.array_equal(idx.positions, matchlsh.build_index(s, 4, 12, 0).positions)
    for bad in (dict(L=0), dict(k=0), dict(k=513)):
        kw = dict(L=4, k=16)
        kw.update(bad)
        with pytest.raises(BadParams):
            matchlsh.build_index(s, **kw)


def test_hash_keys_follow_sampled_bits():
    s = _set(oracles.random_trits(np.random.default_rng(2), 10, 64))
    idx = matchlsh.build_index(s, 2, 10, 3)
    bits = np.concatenate([np.unpackbits(s.gt, axis=1), np.unpackbits(s.lt, axis=1)], axis=1)
    keys = idx.hash_keys(s.gt, s.lt)
    for t in range(2):
        want = [sum(int(bits[i, p]) << j for j, p in enumerate(idx.positions[t])) for i in range(10)]
        assert keys[t].tolist() == want


# ---------------------------------------------------------------- probes


def test_probe_sequence():
    assert matchlsh.probe_sequence(2, 4) == [(), (0,), (1,), (0, 1)]
    assert matchlsh.probe_sequence(16, 1) == [()]
    assert matchlsh.probe_sequence(8, 37) == oracles.probe_oracle(8, 37)
    assert matchlsh.probe_sequence(4, 16) == oracles.probe_oracle(4, 16)
    with pytest.raises(TooManyProbes):
        matchlsh.probe_sequence(2, 5)


# ---------------------------------------------------------------- query


def test_query_self_and_params():
    t = oracles.random_trits(np.random.default_rng(3), 50, 256)
    s = _set(t)
    idx = matchlsh.build_index(s)
    res = matchlsh.query(idx, s.descriptor(17), 1, 0)
    assert res[0].train_id == 17 and res[0].distance == 0 and res[0].quality == 1.0
    with pytest.raises(ParamMismatch):
        matchlsh.query(idx, Descriptor.from_trits(np.zeros(128, int)))


def test_query_subset_of_brute_force_and_sorted():
    rng = np.random.default_rng(4)
    db, q, _ = _planted(rng, 300, 20)
    s, qs = _set(db), _set(q)
    idx = matchlsh.build_index(s, 4, 16, 0)
    d = matchlsh.distance_matrix(qs, s)
    for i in range(len(q)):
        res = matchlsh.query(idx, qs.descriptor(i), 16, 300)
        brute = {j for j in range(len(db)) if d[i, j] <= 300}
        assert {m.train_id for m in res} <= brute
        assert all(m.distance == d[i, m.train_id] for m in res)
        assert [(m.distance, m.train_id) for m in res] == sorted((m.distance, m.train_id) for m in res)


def test_candidates_monotone_in_probes():
    rng = np.random.default_rng(5)
    db, q, _ = _planted(rng, 500, 30)
    s, qs = _set(db), _set(q)
    idx = matchlsh.build_index(s, 4, 16, 0)
    prev = set()
    for t in (1, 2, 4, 8, 16, 32, 64):
        a, b = matchlsh.candidate_pairs(idx, qs.gt, qs.lt, t)
        cur = set(zip(a.tolist(), b.tolist()))
        assert prev <= cur
        prev = cur


def test_planted_recall_default_params():
    rng = np.random.default_rng(6)
    db, q, truth = _planted(rng)
    s, qs = _set(db), _set(q)
    cfg = MatchConfig()
    idx = matchlsh.build_index(s, cfg.tables, cfg.key_bits, 0)
    exact = matchlsh.distance_matrix(qs, s).min(axis=1)
    hits = 0
    for i in range(len(q)):
        res = matchlsh.query(idx, qs.descriptor(i), cfg.probes, cfg.max_distance)
        hits += bool(res) and res[0].distance == exact[i]
    assert hits / len(q) >= 0.9


# ---------------------------------------------------------------- match_features


def test_match_identical_sets():
    s = _set(oracles.random_trits(np.random.default_rng(7), 80, 256))
    ms = matchlsh.match_features(s, s)
    assert len(ms) == 80
    assert all(m.query_id == m.train_id and m.distance == 0 for m in ms)
    with pytest.raises(EmptyInput):
        matchlsh.match_features(s, s.subset(np.zeros(80, bool)))


def test_match_max_distance_excludes():
    rng = np.random.default_rng(8)
    a = _set(oracles.random_trits(rng, 30, 256))
    b = _set(oracles.random_trits(rng, 30, 256))
    assert matchlsh.match_features(a, b, MatchConfig(probes=64)) == []


def test_match_planted_vs_brute_force():
    rng = np.random.default_rng(9)
    b_trits = oracles.random_trits(rng, 200, 256)
    a_trits = oracles.random_trits(rng, 200, 256)
    planted = rng.choice(200, 150, replace=False)
    for i, j in enumerate(planted):
        row = b_trits[j].copy()
        pos = rng.choice(256, 10, replace=False)
        row[pos] = np.where(row[pos] == 0, 1, 0)
        a_trits[i] = row
    a, b = _set(a_trits), _set(b_trits)
    lsh = matchlsh.match_features(a, b)
    brute = matchlsh.brute_force_match(a, b)
    truth = {(i, int(j)) for i, j in enumerate(planted)}
    lsh_pairs = {(m.query_id, m.train_id) for m in lsh}
    brute_pairs = {(m.query_id, m.train_id) for m in brute}
    assert brute_pairs == truth
    assert lsh_pairs <= truth
    assert len(lsh_pairs) / len(brute_pairs) >= 0.9
    assert [m.quality for m in lsh] == sorted((m.quality for m in lsh), reverse=True)


# ---------------------------------------------------------------- DLT


def test_dlt_exact_cases():
    p = np.array([[0, 0], [10, 0], [10, 10], [0, 10.0]])
    assert np.allclose(matchlsh.dlt_homography(p, p).h, np.eye(3), atol=1e-12)
    t = matchlsh.dlt_homography(p, p + (5, 7)).h
    assert np.allclose(t, [[1, 0, 5], [0, 1, 7], [0, 0, 1]], atol=1e-12)
    with pytest.raises(DegenerateConfiguration):
        matchlsh.dlt_homography(np.array([[0, 0], [1, 1], [2, 2], [0, 5.0]]), p)
    with pytest.raises(DegenerateConfiguration):
        matchlsh.dlt_homography(p[:3], p[:3])


def test_dlt_random_homography():
    rng = np.random.default_rng(10)
    for _ in range(20):
        h = np.eye(3) + rng.normal(0, [[0.1, 0.1, 20], [0.1, 0.1, 20], [1e-4, 1e-4, 0]])
        h /= h[2, 2]
        src = rng.uniform(0, 500, (8, 2))
        dst = oracles.apply_h(h, src)
        est = matchlsh.dlt_homography(src, dst).h
        assert np.linalg.norm(est - h) / np.linalg.norm(h) < 1e-4


def test_symmetric_error_is_rms_of_both_directions():
    h = Homography.translation(3, 4).h
    src = np.array([[0.0, 0.0]])
    dst = np.array([[0.0, 0.0]])
    assert matchlsh.symmetric_transfer_error(h, np.linalg.inv(h), src, dst)[0] == pytest.approx(5.0)


# ---------------------------------------------------------------- PROSAC


def test_prosac_identity_and_errors():
    p = np.array([[0, 0], [10, 0], [10, 10], [0, 10.0]])
    h, mask = matchlsh.prosac_homography(p, p)
    assert np.allclose(h.h, np.eye(3), atol=1e-9) and mask.all()
    with pytest.raises(InsufficientMatches):
        matchlsh.prosac_homography(p[:3], p[:3])
    line = np.c_[np.arange(10.0), 2 * np.arange(10.0)]
    with pytest.raises(NoModelFound):
        matchlsh.prosac_homography(line, line, max_iter=50)


def test_prosac_first_sample_is_top_four_and_deterministic():
    src, dst, _, _, _ = synth.planted_matches(70, 30, 0.5, 3)
    cfg = ProsacConfig(threshold_px=2.0, seed=5)
    a = matchlsh.prosac(src, dst, cfg, record_samples=True)
    assert a.samples[0].tolist() == [0, 1, 2, 3]
    # early draws stay in the quality-ranked head of the list
    assert max(int(s.max()) for s in a.samples[:5]) < 10
    b = matchlsh.prosac(src, dst, cfg, record_samples=True)
    assert np.array_equal(a.homography.h, b.homography.h) and np.array_equal(a.inliers, b.inliers)


def test_prosac_outlier_free_keeps_everything():
    src, dst, truth, _, h = synth.planted_matches(60, 0, 0.3, 4)
    res = matchlsh.prosac(src, dst, ProsacConfig(threshold_px=2.0))
    assert res.inliers.all()


def test_prosac_planted_recovery():
    src, dst, truth, _, h = synth.planted_matches(70, 30, 0.5, 11)
    est, mask = matchlsh.prosac_homography(src, dst, threshold_px=2.0, seed=11)
    err = np.sqrt(np.mean(np.sum((est.apply(src[truth]) - h.apply(src[truth])) ** 2, axis=1)))
    assert err <= 1.0
    assert mask[truth].mean() > 0.95 and not mask[~truth].any()


def test_required_iterations():
    assert matchlsh.required_iterations(1.0, 4, 0.99) == 1.0
    assert matchlsh.required_iterations(0.0, 4, 0.99) == float("inf")
    assert matchlsh.required_iterations(0.5, 4, 0.99) == pytest.approx(np.log(0.01) / np.log(1 - 0.0625))
