"""Feature matching: multi-probe LSH over descriptor bitplanes, then PROSAC.

The hash family is bit sampling: each table looks at ``k`` fixed positions of
the ``2 * n_d`` concatenated bitplanes (gt plane first).  Neighbouring buckets
are reached by flipping key bits in order of flip count.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    BadParams,
    DegenerateConfiguration,
    EmptyInput,
    InsufficientMatches,
    LengthMismatch,
    NoModelFound,
    NumericalFailure,
    ParamMismatch,
    TooManyProbes,
)
from .lorb import Descriptor, FeatureSet

# ---------------------------------------------------------------------------
# distance


def descriptor_distance(a: Descriptor, b: Descriptor) -> int:
    """Hamming distance summed over both bitplanes (``+1`` vs ``-1`` costs 2)."""
    if a.n_d != b.n_d:
        raise LengthMismatch(f"descriptor lengths differ: {a.n_d} vs {b.n_d}")
    return int(np.bitwise_count(a.gt ^ b.gt).sum() + np.bitwise_count(a.lt ^ b.lt).sum())


def pairwise_distances(gt_a, lt_a, gt_b, lt_b) -> np.ndarray:
    """Row-aligned distances between two equally long stacks of packed planes."""
    return (np.bitwise_count(gt_a ^ gt_b).sum(axis=1, dtype=np.int64)
            + np.bitwise_count(lt_a ^ lt_b).sum(axis=1, dtype=np.int64))


def distance_matrix(a: FeatureSet, b: FeatureSet) -> np.ndarray:
    """All-pairs distances, ``len(a) x len(b)``."""
    if a.n_d != b.n_d:
        raise LengthMismatch(f"descriptor lengths differ: {a.n_d} vs {b.n_d}")
    d = np.zeros((len(a), len(b)), dtype=np.int64)
    for plane in ("gt", "lt"):
        pa = getattr(a, plane)
        pb = getattr(b, plane)
        d += np.bitwise_count(pa[:, None, :] ^ pb[None, :, :]).sum(axis=2, dtype=np.int64)
    return d


# ---------------------------------------------------------------------------
# index


def _planes_of(descriptors):
    if isinstance(descriptors, FeatureSet):
        return descriptors.gt, descriptors.lt, descriptors.n_d
    descriptors = list(descriptors)
    if not descriptors:
        return None, None, None
    n_d = descriptors[0].n_d
    if any(d.n_d != n_d for d in descriptors):
        raise LengthMismatch("descriptors of mixed length")
    return (np.stack([d.gt for d in descriptors]), np.stack([d.lt for d in descriptors]), n_d)


def _bits_at(gt, lt, positions, n_d):
    """Unpacked bits of the concatenated (gt || lt) planes at ``positions``."""
    positions = np.asarray(positions)
    in_gt = positions < n_d
    plane_pos = np.where(in_gt, positions, positions - n_d)
    byte = plane_pos // 8
    shift = 7 - plane_pos % 8
    src_gt = (gt[:, byte] >> shift) & 1
    src_lt = (lt[:, byte] >> shift) & 1
    return np.where(in_gt, src_gt, src_lt).astype(np.int64)


@dataclass(eq=False)
class LshIndex:
    """Bit-sampling LSH tables over a fixed descriptor collection.

    Buckets are stored per table as keys sorted ascending with the matching
    descriptor ids, so a bucket is a contiguous slice.
    """

    positions: np.ndarray  # (L, k) sampled bit positions
    sorted_keys: np.ndarray  # (L, N)
    sorted_ids: np.ndarray  # (L, N)
    gt: np.ndarray
    lt: np.ndarray
    n_d: int
    seed: int

    @property
    def n_tables(self):
        return self.positions.shape[0]

    @property
    def key_bits(self):
        return self.positions.shape[1]

    def __len__(self):
        return self.gt.shape[0]

    def hash_keys(self, gt, lt) -> np.ndarray:
        """``(L, M)`` bucket keys for ``M`` descriptors."""
        keys = np.zeros((self.n_tables, gt.shape[0]), dtype=np.int64)
        weights = np.int64(1) << np.arange(self.key_bits, dtype=np.int64)
        for t in range(self.n_tables):
            keys[t] = _bits_at(gt, lt, self.positions[t], self.n_d) @ weights
        return keys

    def bucket(self, table: int, key: int) -> list:
        keys = self.sorted_keys[table]
        lo = np.searchsorted(keys, key, "left")
        hi = np.searchsorted(keys, key, "right")
        return self.sorted_ids[table, lo:hi].tolist()

    def buckets(self, table: int) -> dict:
        out = {}
        for key, idx in zip(self.sorted_keys[table].tolist(), self.sorted_ids[table].tolist()):
            out.setdefault(key, []).append(idx)
        return out


def build_index(descriptors, L: int = 4, k: int = 16, seed: int = 0, n_d: Optional[int] = None) -> LshIndex:
    """Hash every descriptor into ``L`` tables keyed by ``k`` sampled bits.

    ``descriptors`` is a :class:`FeatureSet` or a sequence of
    :class:`Descriptor`.  ``n_d`` is only needed for an empty sequence.
    """
    gt, lt, found_nd = _planes_of(descriptors)
    if found_nd is None:
        if n_d is None:
            n_d = 256
        nb = (n_d + 7) // 8
        gt = np.zeros((0, nb), np.uint8)
        lt = np.zeros((0, nb), np.uint8)
    else:
        n_d = found_nd
    if L < 1 or not 1 <= k <= 2 * n_d or k > 62:
        raise BadParams(f"need L >= 1 and 1 <= k <= min(2*n_d, 62); got L={L}, k={k}")
    rng = np.random.default_rng(seed)
    positions = np.stack([np.sort(rng.choice(2 * n_d, size=k, replace=False)) for _ in range(L)])
    index = LshIndex(positions, np.zeros((L, 0), np.int64), np.zeros((L, 0), np.int64),
                     np.ascontiguousarray(gt), np.ascontiguousarray(lt), n_d, seed)
    keys = index.hash_keys(gt, lt)
    order = np.argsort(keys, axis=1, kind="stable")
    index.sorted_keys = np.take_along_axis(keys, order, axis=1)
    index.sorted_ids = order
    return index


def probe_sequence(k: int, t_probes: int) -> list:
    """First ``t_probes`` bit-flip masks: empty set, singles, pairs, ...

    Masks are tuples of key-bit indices; within a cardinality they come in
    lexicographic order.
    """
    if t_probes < 1:
        raise BadParams("t_probes must be >= 1")
    if t_probes > 2 ** k:
        raise TooManyProbes(f"{t_probes} probes requested but only {2 ** k} buckets exist for k={k}")
    out = []
    for r in range(k + 1):
        for combo in itertools.combinations(range(k), r):
            out.append(combo)
            if len(out) == t_probes:
                return out
    return out


def _probe_xors(k: int, t_probes: int) -> np.ndarray:
    return np.array([sum(1 << b for b in mask) for mask in probe_sequence(k, t_probes)], dtype=np.int64)


def candidate_pairs(index: LshIndex, gt, lt, t_probes: int):
    """Deduplicated ``(query_row, train_id)`` pairs from all probed buckets."""
    m = gt.shape[0]
    if m == 0 or len(index) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    xors = _probe_xors(index.key_bits, t_probes)
    qkeys = index.hash_keys(gt, lt)
    qs_all, ids_all = [], []
    for t in range(index.n_tables):
        probes = (qkeys[t][:, None] ^ xors[None, :]).ravel()
        lo = np.searchsorted(index.sorted_keys[t], probes, "left")
        hi = np.searchsorted(index.sorted_keys[t], probes, "right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            continue
        qrow = np.repeat(np.repeat(np.arange(m), len(xors)), counts)
        starts = np.repeat(lo - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        pos = starts + np.arange(total)
        qs_all.append(qrow)
        ids_all.append(index.sorted_ids[t][pos])
    if not qs_all:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    qs = np.concatenate(qs_all)
    ids = np.concatenate(ids_all)
    flat = np.unique(qs * len(index) + ids)
    return flat // len(index), flat % len(index)


@dataclass(frozen=True)
class Match:
    query_id: int
    train_id: int
    distance: int
    quality: float


def _quality(distance, n_d):
    return 1.0 - distance / (2.0 * n_d)


def query(index: LshIndex, q: Descriptor, t_probes: int = 16, max_distance: int = 64) -> list:
    """Candidates from the probed buckets within ``max_distance``, nearest first."""
    if q.n_d != index.n_d:
        raise ParamMismatch(f"index built for n_d={index.n_d}, query has n_d={q.n_d}")
    _, ids = candidate_pairs(index, q.gt[None, :], q.lt[None, :], t_probes)
    if ids.size == 0:
        return []
    d = pairwise_distances(np.broadcast_to(q.gt, (ids.size, q.gt.size)), np.broadcast_to(q.lt, (ids.size, q.lt.size)),
                           index.gt[ids], index.lt[ids])
    keep = d <= max_distance
    ids, d = ids[keep], d[keep]
    order = np.lexsort((ids, d))
    return [Match(0, int(ids[i]), int(d[i]), _quality(int(d[i]), index.n_d)) for i in order]


@dataclass
class MatchConfig:
    tables: int = 4
    key_bits: int = 16
    probes: int = 16
    max_distance: int = 64
    ratio: float = 0.8
    seed: int = 0

    def validate(self):
        if self.tables < 1 or self.key_bits < 1 or self.probes < 1:
            raise BadParams("tables, key_bits and probes must be >= 1")
        if not 0 < self.ratio <= 1:
            raise BadParams("ratio must lie in (0, 1]")
        if self.max_distance < 0:
            raise BadParams("max_distance must be >= 0")
        return self


def match_features(set_a: FeatureSet, set_b: FeatureSet, cfg: Optional[MatchConfig] = None,
                   index: Optional[LshIndex] = None) -> list:
    """One-way A->B matching with Lowe's ratio test on LSH candidates.

    A match is kept when the best candidate distance is within
    ``max_distance`` and strictly below ``ratio`` times the runner-up (a lone
    candidate always passes the ratio test).  Sorted by quality, best first.
    """
    cfg = cfg or MatchConfig()
    if len(set_a) == 0 or len(set_b) == 0:
        raise EmptyInput("both feature sets must be non-empty")
    if set_a.n_d != set_b.n_d:
        raise LengthMismatch("feature sets use different descriptor lengths")
    if index is None:
        index = build_index(set_b, cfg.tables, cfg.key_bits, cfg.seed)
    qs, ids = candidate_pairs(index, set_a.gt, set_a.lt, cfg.probes)
    if qs.size == 0:
        return []
    d = pairwise_distances(set_a.gt[qs], set_a.lt[qs], index.gt[ids], index.lt[ids])
    order = np.lexsort((ids, d, qs))
    qs, ids, d = qs[order], ids[order], d[order]
    first = np.flatnonzero(np.r_[True, qs[1:] != qs[:-1]])
    counts = np.diff(np.r_[first, qs.size])
    best_d = d[first]
    second_d = np.where(counts > 1, d[np.minimum(first + 1, qs.size - 1)], np.iinfo(np.int64).max)
    ok = (best_d <= cfg.max_distance) & ((counts == 1) | (best_d < cfg.ratio * second_d))
    matches = [Match(int(qs[f]), int(ids[f]), int(best_d[i]), _quality(int(best_d[i]), set_a.n_d))
               for i, f in enumerate(first) if ok[i]]
    matches.sort(key=lambda m: (-m.quality, m.query_id))
    return matches


def brute_force_match(set_a: FeatureSet, set_b: FeatureSet, max_distance: int = 64, ratio: float = 0.8) -> list:
    """Exhaustive counterpart of :func:`match_features` (same acceptance rule)."""
    d = distance_matrix(set_a, set_b)
    out = []
    for q in range(d.shape[0]):
        order = np.lexsort((np.arange(d.shape[1]), d[q]))
        best = int(d[q, order[0]])
        second = int(d[q, order[1]]) if d.shape[1] > 1 else None
        if best <= max_distance and (second is None or best < ratio * second):
            out.append(Match(q, int(order[0]), best, _quality(best, set_a.n_d)))
    out.sort(key=lambda m: (-m.quality, m.query_id))
    return out


# ---------------------------------------------------------------------------
# homography estimation


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform scaled so that ``h[2, 2] == 1``."""

    h: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)) or abs(m[2, 2]) < 1e-12:
            raise NumericalFailure("homography has non-finite entries or zero h33")
        m = m / m[2, 2]
        m.flags.writeable = False
        object.__setattr__(self, "h", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        return cls(np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64))

    def det(self) -> float:
        return float(np.linalg.det(self.h))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def apply(self, pts) -> np.ndarray:
        return apply_h(self.h, pts)

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self.h, other.h)

    def __repr__(self):
        return f"Homography({np.array2string(self.h, precision=5)})"


def apply_h(h: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    num = pts @ h[:2, :2].T + h[:2, 2]
    den = pts @ h[2, :2] + h[2, 2]
    return num / den[:, None]


def _normalizer(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])


def _has_collinear_triple(pts, tol=1e-6):
    scale = max(np.ptp(pts, axis=0).max(), 1e-12)
    for i, j, k in itertools.combinations(range(len(pts)), 3):
        a = pts[j] - pts[i]
        b = pts[k] - pts[i]
        if abs(a[0] * b[1] - a[1] * b[0]) <= tol * scale * scale:
            return True
    return False


def dlt_homography(src, dst) -> Homography:
    """Hartley-normalized DLT fit mapping ``src`` points onto ``dst``.

    Least squares over the ``2n x 9`` system via SVD; with exactly four pairs
    no three source (or destination) points may be collinear.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise DegenerateConfiguration(f"need >= 4 point pairs, got {n}")
    if n == 4 and (_has_collinear_triple(src) or _has_collinear_triple(dst)):
        raise DegenerateConfiguration("three of the four points are collinear")
    ts = _normalizer(src)
    td = _normalizer(dst)
    s = src @ ts[:2, :2].T + ts[:2, 2]
    d = dst @ td[:2, :2].T + td[:2, 2]
    a = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    try:
        _, sv, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from None
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if not np.all(np.isfinite(h)) or abs(h[2, 2]) < 1e-12 * np.abs(h).max():
        raise NumericalFailure("DLT solution has vanishing h33")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) < 1e-9:
        raise DegenerateConfiguration("estimated homography is singular")
    return Homography(h)


def symmetric_transfer_error(h: np.ndarray, h_inv: np.ndarray, src, dst) -> np.ndarray:
    """Per-pair RMS of forward and backward transfer distances, in pixels."""
    fwd = np.sum((apply_h(h, src) - dst) ** 2, axis=1)
    bwd = np.sum((apply_h(h_inv, dst) - src) ** 2, axis=1)
    err = np.sqrt(0.5 * (fwd + bwd))
    return np.where(np.isfinite(err), err, np.inf)


@dataclass
class ProsacConfig:
    threshold_px: float = 3.0
    max_iter: int = 2000
    confidence: float = 0.99
    growth_tn: int = 200_000
    seed: int = 0

    def validate(self):
        if self.threshold_px <= 0:
            raise BadParams("threshold_px must be > 0")
        if self.max_iter < 1:
            raise BadParams("max_iter must be >= 1")
        if not 0 < self.confidence < 1:
            raise BadParams("confidence must lie in (0, 1)")
        return self


@dataclass
class ProsacResult:
    homography: Homography
    inliers: np.ndarray
    iterations: int
    hypothesis_inliers: int
    samples: list = field(default_factory=list)


class ProgressiveSampler:
    """Chum-Matas PROSAC sampling schedule over quality-sorted data.

    Iteration ``t`` draws from the ``n`` best items, where ``n`` grows from
    ``m`` to ``N`` following the growth function with ``T_N`` equivalent
    RANSAC draws.  Until the schedule says otherwise the ``n``-th item is
    forced into the sample, so the very first sample is exactly the top ``m``.
    """

    def __init__(self, n_items: int, m: int, growth_tn: int, rng):
        self.N = n_items
        self.m = m
        self.rng = rng
        self.n = m
        self.t = 0
        # T_n for n = m
        tn = float(growth_tn)
        for i in range(m):
            tn *= (m - i) / (n_items - i)
        self.Tn = tn
        self.Tn_prime = 1

    def draw(self) -> np.ndarray:
        self.t += 1
        if self.t > self.Tn_prime and self.n < self.N:
            tn_next = self.Tn * (self.n + 1) / (self.n + 1 - self.m)
            self.Tn_prime += int(math.ceil(tn_next - self.Tn))
            self.Tn = tn_next
            self.n += 1
        if self.Tn_prime < self.t:
            return np.sort(self.rng.choice(self.n, size=self.m, replace=False))
        head = self.rng.choice(self.n - 1, size=self.m - 1, replace=False)
        return np.sort(np.append(head, self.n - 1))


class UniformSampler:
    """Plain RANSAC sampling: ``m`` distinct items uniformly from all ``N``."""

    def __init__(self, n_items: int, m: int, rng):
        self.N = n_items
        self.m = m
        self.rng = rng

    def draw(self) -> np.ndarray:
        return np.sort(self.rng.choice(self.N, size=self.m, replace=False))


def required_iterations(inlier_ratio: float, m: int, confidence: float) -> float:
    if inlier_ratio <= 0:
        return math.inf
    p_good = inlier_ratio ** m
    if p_good >= 1:
        return 1.0
    return math.log(1 - confidence) / math.log(1 - p_good)


def consensus(src, dst, cfg: Optional[ProsacConfig] = None, sampler=None, record_samples=False,
              stop_when=None) -> ProsacResult:
    """Hypothesize-and-verify loop shared by PROSAC and the RANSAC baseline.

    ``stop_when(sample_indices, model)`` may end the search early; it exists
    for instrumentation.
    """
    cfg = (cfg or ProsacConfig()).validate()
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientMatches(f"need >= 4 matches, got {n}")
    m = 4
    if sampler is None:
        sampler = ProgressiveSampler(n, m, cfg.growth_tn, np.random.default_rng(cfg.seed))

    best_count, best_err, best_mask, best_h = -1, math.inf, None, None
    samples = []
    limit = cfg.max_iter
    t = 0
    while t < limit:
        t += 1
        idx = sampler.draw()
        if record_samples:
            samples.append(idx)
        try:
            hyp = dlt_homography(src[idx], dst[idx])
            h_inv = np.linalg.inv(hyp.h)
        except (DegenerateConfiguration, NumericalFailure, np.linalg.LinAlgError):
            continue
        err = symmetric_transfer_error(hyp.h, h_inv, src, dst)
        mask = err <= cfg.threshold_px
        count = int(mask.sum())
        total = float(err[mask].sum())
        if count > best_count or (count == best_count and total < best_err):
            best_count, best_err, best_mask, best_h = count, total, mask, hyp
            limit = min(cfg.max_iter, max(t, math.ceil(required_iterations(count / n, m, cfg.confidence))))
        if stop_when is not None and stop_when(idx, hyp):
            break

    if best_h is None or best_count < 4:
        raise NoModelFound(f"no hypothesis reached 4 inliers in {t} iterations")
    final, mask = _refit(src, dst, best_h, best_mask, cfg.threshold_px)
    return ProsacResult(final, mask, t, best_count, samples)


def _refit(src, dst, model, mask, threshold, rounds=10):
    """Re-estimate on the consensus set until it stops changing."""
    for _ in range(rounds):
        try:
            refined = dlt_homography(src[mask], dst[mask])
            err = symmetric_transfer_error(refined.h, np.linalg.inv(refined.h), src, dst)
        except (DegenerateConfiguration, NumericalFailure, np.linalg.LinAlgError):
            break
        new_mask = err <= threshold
        if new_mask.sum() < 4:
            break
        stable = np.array_equal(new_mask, mask)
        model, mask = refined, new_mask
        if stable:
            break
    return model, mask


def prosac(src, dst, cfg: Optional[ProsacConfig] = None, record_samples=False) -> ProsacResult:
    """PROSAC on correspondences already sorted by match quality, best first."""
    return consensus(src, dst, cfg, record_samples=record_samples)


def prosac_homography(src, dst, threshold_px=3.0, max_iter=2000, confidence=0.99, seed=0):
    """Robust homography from quality-sorted pairs; returns ``(Homography, inlier_mask)``."""
    cfg = ProsacConfig(threshold_px=threshold_px, max_iter=max_iter, confidence=confidence, seed=seed)
    res = prosac(src, dst, cfg)
    return res.homography, res.inliers


def matched_points(matches, set_a: FeatureSet, set_b: FeatureSet, subpixel: bool = True):
    """``(pts_b, pts_a)`` arrays for matches (train side is the source).

    Uses the sub-pixel keypoint positions when the feature sets carry them.
    """
    qa = np.array([m.query_id for m in matches], dtype=np.intp)
    tb = np.array([m.train_id for m in matches], dtype=np.intp)
    pa = set_a.refined_points if subpixel else set_a.points
    pb = set_b.refined_points if subpixel else set_b.points
    return pb[tb].astype(np.float64), pa[qa].astype(np.float64)
