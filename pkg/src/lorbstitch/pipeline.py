"""Stage-pipelined panorama executor.

A frame moves through seven fixed stages::

    ingest -> rectify_crop -> detect -> describe -> match_estimate -> warp_blend -> output

Serial mode runs them back to back for one frame at a time.  Pipelined mode
gives every stage its own worker thread(s) connected by bounded FIFO queues, so
up to ``frames_in_flight`` frames are in progress at once.  All per-frame
scratch memory comes from a :class:`BufferPool` that is sized and filled
before the first frame; taking a pool slot at ingest is what bounds the number
of frames in flight (backpressure).

Both modes call the same stage functions, and the only cross-frame state (the
homography cache) is touched by a single in-order worker, so composites are
bit-identical between modes.

Pool sizing (bytes per in-flight frame) for ``C`` cameras of ``W x H x ch``,
``R`` regions per camera, ``N = top_n``, ``n_d`` descriptor pairs and a
``Wc x Hc`` canvas cap (default ``(C+1)*W x 2*H``)::

    images       C * W * H * ch
    keypoints    C * R * N * 32            (x, y, response, region, sub_x, sub_y)
    descriptors  C * R * N * 2 * ceil(n_d / 8)
    matches      (C - 1) * N * 16           (query, train, distance, quality)
    canvas       Wc * Hc * ch

The pool budget is ``frames_in_flight`` times that sum.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from itertools import chain
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import compose, imgcore, lorb, matchlsh
from .errors import (
    BadParams,
    CapacityOverflow,
    DegenerateConfiguration,
    InsufficientMatches,
    NoValidHomographyYet,
    StageFailure,
    StitchError,
)
from .imgcore import Image
from .lorb import CameraLayout, ExtractionConfig, FeatureSet
from .matchlsh import Homography, MatchConfig, ProsacConfig

log = logging.getLogger(__name__)

STAGES = ("ingest", "rectify_crop", "detect", "describe", "match_estimate", "warp_blend", "output")
SERIAL = "serial"
PIPELINED = "pipelined"

KEYPOINT_DTYPE = np.dtype([("x", "<i4"), ("y", "<i4"), ("response", "<f4"), ("region", "<i4"),
                           ("sub_x", "<f8"), ("sub_y", "<f8")])
MATCH_DTYPE = np.dtype([("query", "<i4"), ("train", "<i4"), ("distance", "<i4"), ("quality", "<f4")])
REGIONS_PER_CAMERA = 2
DEFAULT_MEMORY_CAP = 1 << 30
MAX_AREA_SCALE = 4.0


def default_canvas(n_cameras: int, w: int, h: int) -> tuple:
    # one spare frame width absorbs estimates a few pixels wider than C*W
    return (n_cameras + 1) * w, 2 * h


def check_plausible(hm: Homography, width: int, height: int, max_scale: float = MAX_AREA_SCALE):
    """Reject pair homographies that fold, flip or blow up the source frame.

    The four frame corners must stay in front of the horizon and the mapped
    quad must keep its orientation with an area ratio within ``max_scale``.
    """
    corners = np.array([[0, 0, 1], [width - 1, 0, 1], [width - 1, height - 1, 1], [0, height - 1, 1]], float)
    v = corners @ hm.h.T
    if np.any(v[:, 2] <= 0):
        raise DegenerateConfiguration("homography maps the frame across the horizon")
    q = v[:, :2] / v[:, 2:]
    area = 0.5 * np.sum(q[:, 0] * np.roll(q[:, 1], -1) - np.roll(q[:, 0], -1) * q[:, 1])
    ratio = area / ((width - 1) * (height - 1))
    if not 1 / max_scale <= ratio <= max_scale:
        raise DegenerateConfiguration(f"homography scales frame area by {ratio:.3g}")


@dataclass
class PipelineConfig:
    mode: str = SERIAL
    frames_in_flight: int = 4
    workers_per_stage: int = 1
    homography_refresh: int = 1
    memory_cap: int = DEFAULT_MEMORY_CAP

    def validate(self):
        if self.mode not in (SERIAL, PIPELINED):
            raise BadParams(f"mode must be '{SERIAL}' or '{PIPELINED}', got {self.mode!r}")
        if self.frames_in_flight < 1:
            raise BadParams("frames_in_flight must be >= 1")
        if self.workers_per_stage < 1:
            raise BadParams("workers_per_stage must be >= 1")
        if self.homography_refresh < 1:
            raise BadParams("homography_refresh must be >= 1")
        return self

    @property
    def in_flight(self) -> int:
        # serial mode is pipelined mode with one frame and one worker
        return 1 if self.mode == SERIAL else self.frames_in_flight


@dataclass
class StitchSettings:
    """Everything the stage functions need besides the frames themselves.

    ``pre_transforms[c]`` (3x3, maps source pixels to rectified pixels) and
    ``crops[c]`` (``x0, y0, x1, y1`` half-open) are optional per camera.
    The BRIEF pattern and LSH tables are seeded with ``seed``; PROSAC for
    frame ``j`` uses ``seed + j``.
    """

    n_cameras: int = 2
    overlap: float = 0.25
    layout: Optional[CameraLayout] = None
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    matching: MatchConfig = field(default_factory=MatchConfig)
    prosac: ProsacConfig = field(default_factory=ProsacConfig)
    blend_levels: int = 4
    seed: int = 0
    pre_transforms: Optional[Sequence] = None
    crops: Optional[Sequence] = None
    canvas_cap: Optional[tuple] = None

    def camera_layout(self) -> CameraLayout:
        if self.layout is not None:
            return self.layout
        return CameraLayout.uniform(self.n_cameras, self.overlap)


# ---------------------------------------------------------------------------
# buffer pool


def packet_bytes(resolution, channels: int, top_n: int, n_d: int, n_cameras: int = 2,
                 regions_per_camera: int = REGIONS_PER_CAMERA, canvas=None) -> int:
    """Closed-form arena size of one in-flight frame (see module docstring)."""
    w, h = resolution
    cw, ch_ = canvas if canvas is not None else default_canvas(n_cameras, w, h)
    nb = (n_d + 7) // 8
    kp = n_cameras * regions_per_camera * top_n
    return (n_cameras * w * h * channels
            + kp * KEYPOINT_DTYPE.itemsize
            + kp * 2 * nb
            + max(n_cameras - 1, 0) * top_n * MATCH_DTYPE.itemsize
            + cw * ch_ * channels)


@dataclass(eq=False)
class Arena:
    """One frame's worth of reusable scratch memory."""

    slot: int
    images: list
    keypoints: list
    gt: list
    lt: list
    matches: list
    canvas: np.ndarray

    @property
    def nbytes(self) -> int:
        arrays = chain(self.images, self.keypoints, self.gt, self.lt, self.matches, [self.canvas])
        return sum(a.nbytes for a in arrays)


class BufferPool:
    """Fixed set of arenas handed out one per in-flight frame.

    ``acquire`` blocks while every arena is in use.  Arenas are built in the
    constructor only; ``creation_log`` records the acquisition count at which
    each one was created so tests can check that none appear later.
    """

    def __init__(self, capacity: int, factory: Callable[[int], Arena], budget: int):
        if capacity < 1:
            raise BadParams("pool capacity must be >= 1")
        self.capacity = capacity
        self.budget = budget
        self._cond = threading.Condition()
        self._free = []
        self._held = set()
        self.acquisitions = 0
        self.releases = 0
        self.high_water = 0
        self.creation_log = []
        for slot in range(capacity):
            self._free.append(factory(slot))
            self.creation_log.append(self.acquisitions)
        self._free.reverse()  # hand out slot 0 first

    @property
    def arenas_created(self) -> int:
        return len(self.creation_log)

    def created_after(self, n_acquisitions: int) -> int:
        return sum(1 for a in self.creation_log if a > n_acquisitions)

    @property
    def in_use(self) -> int:
        with self._cond:
            return len(self._held)

    @property
    def total_bytes(self) -> int:
        return self.budget

    def acquire(self, timeout: Optional[float] = None) -> Arena:
        with self._cond:
            if not self._cond.wait_for(lambda: self._free, timeout):
                raise TimeoutError("no free arena")
            arena = self._free.pop()
            self._held.add(arena.slot)
            self.acquisitions += 1
            self.high_water = max(self.high_water, len(self._held))
            return arena

    def release(self, arena: Arena) -> None:
        with self._cond:
            if arena.slot not in self._held:
                raise RuntimeError(f"arena {arena.slot} released twice")
            self._held.remove(arena.slot)
            self._free.append(arena)
            self.releases += 1
            self._cond.notify()


def preallocate(cfg: PipelineConfig, resolution, channels: int, top_n: int, n_d: int,
                n_cameras: int = 2, regions_per_camera: int = REGIONS_PER_CAMERA,
                canvas=None) -> BufferPool:
    """Build a pool with ``cfg.in_flight`` arenas.

    Raises CapacityOverflow when the closed-form budget exceeds
    ``cfg.memory_cap`` or when any size is zero.
    """
    cfg.validate()
    w, h = resolution
    if w < 1 or h < 1 or channels not in (1, 3) or top_n < 1 or n_d < 1 or n_cameras < 1:
        raise CapacityOverflow(f"invalid arena sizing: {w}x{h}x{channels}, top_n={top_n}, n_d={n_d}")
    cw, chh = canvas if canvas is not None else default_canvas(n_cameras, w, h)
    per = packet_bytes((w, h), channels, top_n, n_d, n_cameras, regions_per_camera, (cw, chh))
    budget = per * cfg.in_flight
    if budget > cfg.memory_cap:
        raise CapacityOverflow(f"pool needs {budget} bytes, cap is {cfg.memory_cap}")
    img_shape = (h, w) if channels == 1 else (h, w, channels)
    canvas_shape = (chh, cw) if channels == 1 else (chh, cw, channels)
    nb = (n_d + 7) // 8
    kp_cap = regions_per_camera * top_n

    def factory(slot):
        return Arena(
            slot,
            [np.zeros(img_shape, np.uint8) for _ in range(n_cameras)],
            [np.zeros(kp_cap, KEYPOINT_DTYPE) for _ in range(n_cameras)],
            [np.zeros((kp_cap, nb), np.uint8) for _ in range(n_cameras)],
            [np.zeros((kp_cap, nb), np.uint8) for _ in range(n_cameras)],
            [np.zeros(top_n, MATCH_DTYPE) for _ in range(max(n_cameras - 1, 0))],
            np.zeros(canvas_shape, np.uint8),
        )

    return BufferPool(cfg.in_flight, factory, budget)


# ---------------------------------------------------------------------------
# packets and metrics


@dataclass(eq=False)
class FramePacket:
    frame_index: int
    arena: Optional[Arena] = None
    images: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    gray: list = field(default_factory=list)
    chunks: list = field(default_factory=list)       # per camera: [(region_id, start, stop)]
    features: list = field(default_factory=list)     # per camera FeatureSet
    matches: list = field(default_factory=list)      # per pair: MATCH_DTYPE view
    homographies: list = field(default_factory=list)  # per camera, into camera 0's frame
    homography_source: str = ""
    composite: Optional[Image] = None
    stage_times: dict = field(default_factory=dict)
    failure: Optional[StageFailure] = None


@dataclass
class Metrics:
    frames_in: int = 0
    frames_out: int = 0
    wall_ns: int = 0
    drops: list = field(default_factory=list)
    durations: dict = field(default_factory=lambda: {s: [] for s in STAGES})
    latencies_ns: dict = field(default_factory=dict)
    timing_rows: list = field(default_factory=list)   # (frame_index, stage, duration_ns)
    delivered: list = field(default_factory=list)
    estimations: int = 0
    fallbacks: int = 0
    pool_capacity: int = 0
    pool_bytes: int = 0
    pool_high_water: int = 0
    arenas_created: int = 0
    arenas_created_after_warmup: int = 0

    @property
    def throughput(self) -> float:
        """Frames delivered per second of wall time."""
        return self.frames_out / (self.wall_ns * 1e-9) if self.wall_ns > 0 else 0.0

    def stage_summary(self) -> dict:
        """``stage -> (mean_ns, p50_ns, p99_ns)`` over frames that ran the stage."""
        out = {}
        for stage in STAGES:
            d = np.asarray(self.durations[stage], dtype=np.float64)
            if d.size:
                out[stage] = (float(d.mean()), float(np.percentile(d, 50)), float(np.percentile(d, 99)))
        return out

    def record(self, pkt: FramePacket) -> None:
        for stage in STAGES:
            if stage in pkt.stage_times:
                t0, t1 = pkt.stage_times[stage]
                self.durations[stage].append(t1 - t0)
                self.timing_rows.append((pkt.frame_index, stage, t1 - t0))
        if pkt.failure is not None:
            self.drops.append(pkt.failure)
            return
        self.frames_out += 1
        self.delivered.append(pkt.frame_index)
        first = pkt.stage_times["ingest"][0]
        self.latencies_ns[pkt.frame_index] = pkt.stage_times["output"][1] - first


# ---------------------------------------------------------------------------
# homography cache


class HomographyCache:
    """Re-estimate on key frames (``index % K == 0``), reuse in between.

    When a key frame's estimate fails the previous block's homographies are
    kept.  Frames must be resolved in increasing index order.
    """

    def __init__(self, refresh: int = 1):
        if refresh < 1:
            raise BadParams("refresh interval must be >= 1")
        self.refresh = refresh
        self.current = None
        self.estimations = 0
        self.fallbacks = 0

    def resolve(self, frame_index: int, estimate: Callable[[], list]):
        """Return ``(homographies, source)`` with source one of
        ``estimated``, ``cached`` or ``fallback``."""
        if frame_index % self.refresh != 0:
            if self.current is None:
                raise NoValidHomographyYet(f"frame {frame_index}: no homography cached yet")
            return self.current, "cached"
        self.estimations += 1
        try:
            hs = estimate()
        except StitchError as exc:
            if self.current is None:
                raise NoValidHomographyYet(f"frame {frame_index}: estimation failed ({exc})") from exc
            self.fallbacks += 1
            log.info("frame %d: estimation failed (%s), keeping previous homography", frame_index, exc)
            return self.current, "fallback"
        self.current = hs
        return hs, "estimated"


def homography_cache(refresh: int, frame_indices: Iterable[int], estimate: Callable[[int], list]):
    """Yield ``(frame_index, homographies, source)`` under the caching policy.

    ``estimate(j)`` computes frame ``j``'s homographies; it is only called on
    key frames.
    """
    cache = HomographyCache(refresh)
    for j in frame_indices:
        hs, source = cache.resolve(j, lambda: estimate(j))
        yield j, hs, source


# ---------------------------------------------------------------------------
# stage functions


def _crop_rect(crop, w, h):
    x0, y0, x1, y1 = (int(v) for v in crop)
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"crop {crop} outside {w}x{h} frame")
    return x0, y0, x1, y1


def rectify_camera(img: Image, transform=None, crop=None) -> Image:
    """Warp by the pre-correction transform (same frame size), then crop."""
    arr = img.data
    h, w = arr.shape[:2]
    if transform is not None:
        m = np.asarray(transform.h if isinstance(transform, Homography) else transform, dtype=np.float64)
        if not np.allclose(m / m[2, 2], np.eye(3)):
            vals, _ = compose.warp_image(arr, m, compose.Canvas(w, h, ((0, 0),)))
            arr = imgcore.to_u8(vals)
    if crop is not None:
        x0, y0, x1, y1 = _crop_rect(crop, w, h)
        arr = arr[y0:y1, x0:x1]
    return img if arr is img.data else Image(arr)


def rectify_crop(packet: FramePacket, settings: StitchSettings) -> FramePacket:
    """Per-camera rectification and crop, then attach the detection regions."""
    n = len(packet.images)
    pre = settings.pre_transforms or [None] * n
    crops = settings.crops or [None] * n
    packet.images = [rectify_camera(img, pre[c], crops[c]) for c, img in enumerate(packet.images)]
    dims = [(img.width, img.height) for img in packet.images]
    packet.regions = lorb.partition_regions(settings.camera_layout(), dims)
    return packet


class FrameStitcher:
    """Stage functions bound to one set of settings.

    Holds the BRIEF pattern (built once) and the homography cache.
    """

    def __init__(self, settings: StitchSettings, refresh: int = 1):
        self.settings = settings
        ext = settings.extraction.validate()
        self.pattern = lorb.brief_pattern(ext.n_d, ext.patch_half, settings.seed)
        self.matching = replace(settings.matching, seed=settings.seed).validate()
        self.cache = HomographyCache(refresh)

    # ingest is driven by the executor (it owns the source iterator)
    @staticmethod
    def ingest(packet: FramePacket, frames) -> FramePacket:
        """Copy one frame's camera images (arrays, Images or file paths) into the arena."""
        frames = tuple(frames)
        arena = packet.arena
        if len(frames) != len(arena.images):
            raise ValueError(f"expected {len(arena.images)} camera images, got {len(frames)}")
        images = []
        for buf, img in zip(arena.images, frames):
            if isinstance(img, (str, os.PathLike)):
                img = imgcore.load_image(img)
            src = imgcore.as_array(img)
            if src.shape != buf.shape:
                raise ValueError(f"camera image {src.shape} does not match pool raster {buf.shape}")
            np.copyto(buf, src, casting="unsafe")
            images.append(Image(buf[...]))
        packet.images = images
        return packet

    def rectify_crop(self, packet: FramePacket) -> FramePacket:
        return rectify_crop(packet, self.settings)

    def detect(self, packet: FramePacket) -> FramePacket:
        cfg = self.settings.extraction
        packet.gray = [imgcore.to_grayscale(img).data for img in packet.images]
        packet.chunks = []
        for c, gray in enumerate(packet.gray):
            kp = packet.arena.keypoints[c]
            chunks, pos = [], 0
            for rid, region in enumerate(packet.regions):
                if region.camera_id != c:
                    continue
                xs, ys, resp = lorb.detect_in_region(gray, region, cfg)
                stop = pos + xs.size
                if stop > kp.shape[0]:
                    raise CapacityOverflow(f"camera {c}: {stop} keypoints exceed arena of {kp.shape[0]}")
                rec = kp[pos:stop]
                rec["x"], rec["y"], rec["response"], rec["region"] = xs, ys, resp, rid
                chunks.append((rid, pos, stop))
                pos = stop
            packet.chunks.append(chunks)
        return packet

    def describe(self, packet: FramePacket) -> FramePacket:
        cfg = self.settings.extraction
        packet.features = []
        for c, gray in enumerate(packet.gray):
            kp, gt, lt = packet.arena.keypoints[c], packet.arena.gt[c], packet.arena.lt[c]
            n = 0
            for _, start, stop in packet.chunks[c]:
                rec = kp[start:stop]
                g, l, sub = lorb.describe_keypoints(gray, rec["x"], rec["y"], cfg, self.pattern)
                gt[start:stop], lt[start:stop] = g, l
                rec["sub_x"], rec["sub_y"] = sub[:, 0], sub[:, 1]
                n = stop
            rec = kp[:n]
            packet.features.append(FeatureSet(
                rec["x"], rec["y"], rec["response"], rec["region"], gt[:n], lt[:n], cfg.n_d,
                np.stack([rec["sub_x"], rec["sub_y"]], axis=1)))
        return packet

    def _pair_sets(self, packet: FramePacket, p: int):
        left = [i for i, r in enumerate(packet.regions) if r.camera_id == p and r.pair in (p, None)]
        right = [i for i, r in enumerate(packet.regions) if r.camera_id == p + 1 and r.pair in (p, None)]
        return packet.features[p].in_regions(left), packet.features[p + 1].in_regions(right)

    def estimate(self, packet: FramePacket) -> list:
        """Match each adjacent pair and chain the pair homographies into
        camera 0's frame."""
        hs = [Homography.identity()]
        pcfg = replace(self.settings.prosac, seed=self.settings.seed + packet.frame_index)
        packet.matches = []
        for p in range(len(packet.images) - 1):
            set_a, set_b = self._pair_sets(packet, p)
            if len(set_a) == 0 or len(set_b) == 0:
                raise InsufficientMatches(f"pair {p}: no keypoints in an overlap strip")
            found = matchlsh.match_features(set_a, set_b, self.matching)
            buf = packet.arena.matches[p]
            k = min(len(found), buf.shape[0])
            view = buf[:k]
            for i, m in enumerate(found[:k]):
                view[i] = (m.query_id, m.train_id, m.distance, m.quality)
            packet.matches.append(view)
            src, dst = matchlsh.matched_points(found, set_a, set_b)
            res = matchlsh.prosac(src, dst, pcfg)
            nxt = packet.images[p + 1]
            check_plausible(res.homography, nxt.width, nxt.height)
            hs.append(hs[-1] @ res.homography)
        return hs

    def match_estimate(self, packet: FramePacket) -> FramePacket:
        packet.homographies, packet.homography_source = self.cache.resolve(
            packet.frame_index, lambda: self.estimate(packet))
        return packet

    def warp_blend(self, packet: FramePacket) -> FramePacket:
        dims = [(img.width, img.height) for img in packet.images]
        canvas = compose.compute_canvas(dims, packet.homographies)
        out = packet.arena.canvas
        if canvas.width > out.shape[1] or canvas.height > out.shape[0]:
            raise CapacityOverflow(f"canvas {canvas.width}x{canvas.height} exceeds arena "
                                   f"{out.shape[1]}x{out.shape[0]}")
        warped = [compose.warp_image(img, h, canvas, c)
                  for c, (img, h) in enumerate(zip(packet.images, packet.homographies))]
        values = [v for v, _ in warped]
        covs = [cov for _, cov in warped]
        masks = compose.linear_seam_mask(covs)
        levels = max(1, min(self.settings.blend_levels, compose.max_levels(canvas.width, canvas.height)))
        pano = compose.multiband_blend(values, masks, levels, coverages=covs)
        view = out[:canvas.height, :canvas.width]
        np.copyto(view, pano.data)
        packet.composite = Image(view[...])
        return packet


# ---------------------------------------------------------------------------
# executors


def _timed(packet: FramePacket, stage: str, fn, *args) -> None:
    if packet.failure is not None:
        return
    t0 = time.perf_counter_ns()
    try:
        fn(packet, *args)
    except Exception as exc:  # a failed frame is dropped, the stream continues
        packet.failure = StageFailure(packet.frame_index, stage, exc)
        log.info("%s", packet.failure)
    packet.stage_times[stage] = (t0, time.perf_counter_ns())


def _deliver(packet: FramePacket, sink, pool: BufferPool, metrics: Metrics) -> None:
    if packet.failure is None:
        _timed(packet, "output", lambda p: sink(p.frame_index, p.composite))
    metrics.record(packet)
    if packet.arena is not None:
        pool.release(packet.arena)
        packet.arena = None


def _stage_fns(stitcher: FrameStitcher):
    return [
        ("rectify_crop", stitcher.rectify_crop),
        ("detect", stitcher.detect),
        ("describe", stitcher.describe),
        ("match_estimate", stitcher.match_estimate),
        ("warp_blend", stitcher.warp_blend),
    ]


def _run_serial(stitcher, frames, sink, pool, metrics):
    stages = _stage_fns(stitcher)
    for j, item in enumerate(frames):
        pkt = FramePacket(j, pool.acquire())
        metrics.frames_in += 1
        _timed(pkt, "ingest", stitcher.ingest, item)
        for name, fn in stages:
            _timed(pkt, name, fn)
        _deliver(pkt, sink, pool, metrics)


_STOP = object()


class _Stage:
    """Worker group between two queues.  ``ordered`` stages process frames
    strictly by index (a reorder buffer in front of a single worker)."""

    def __init__(self, name, fn, n_workers, q_in, q_out, ordered=False):
        self.name = name
        self.fn = fn
        self.n_workers = 1 if ordered else n_workers
        self.q_in = q_in
        self.q_out = q_out
        self.ordered = ordered
        self.downstream_workers = 1
        self._lock = threading.Lock()
        self._exited = 0
        self.threads = [threading.Thread(target=self._loop, name=f"stage-{name}-{i}", daemon=True)
                        for i in range(self.n_workers)]

    def _loop(self):
        pending, expected = {}, 0
        while True:
            pkt = self.q_in.get()
            if pkt is _STOP:
                break
            if not self.ordered:
                _timed(pkt, self.name, self.fn)
                self.q_out.put(pkt)
                continue
            pending[pkt.frame_index] = pkt
            while expected in pending:
                ready = pending.pop(expected)
                _timed(ready, self.name, self.fn)
                self.q_out.put(ready)
                expected += 1
        for pkt in sorted(pending.values(), key=lambda p: p.frame_index):
            _timed(pkt, self.name, self.fn)  # unreachable with gap-free indices
            self.q_out.put(pkt)
        with self._lock:
            self._exited += 1
            last = self._exited == self.n_workers
        if last:
            for _ in range(self.downstream_workers):
                self.q_out.put(_STOP)


def _run_pipelined(stitcher, frames, sink, pool, metrics, cfg):
    n, w = cfg.frames_in_flight, cfg.workers_per_stage
    specs = _stage_fns(stitcher)
    # a queue never holds more than n packets plus the stop tokens
    queues = [queue.Queue(maxsize=n + w) for _ in range(len(specs) + 1)]
    stages = [_Stage(name, fn, w, queues[i], queues[i + 1], ordered=(name == "match_estimate"))
              for i, (name, fn) in enumerate(specs)]
    for up, down in zip(stages, stages[1:]):
        up.downstream_workers = down.n_workers
    source_error = []

    def ingest():
        try:
            for j, item in enumerate(frames):
                pkt = FramePacket(j, pool.acquire())
                metrics.frames_in += 1
                _timed(pkt, "ingest", stitcher.ingest, item)
                queues[0].put(pkt)
        except BaseException as exc:  # surfaced in the caller's thread
            source_error.append(exc)
        finally:
            for _ in range(stages[0].n_workers):
                queues[0].put(_STOP)

    feeder = threading.Thread(target=ingest, name="stage-ingest", daemon=True)
    feeder.start()
    for st in stages:
        for t in st.threads:
            t.start()

    # output runs in the caller's thread behind a reorder buffer
    pending, expected = {}, 0
    while True:
        pkt = queues[-1].get()
        if pkt is _STOP:
            break
        pending[pkt.frame_index] = pkt
        while expected in pending:
            _deliver(pending.pop(expected), sink, pool, metrics)
            expected += 1
    for pkt in sorted(pending.values(), key=lambda p: p.frame_index):
        _deliver(pkt, sink, pool, metrics)
    feeder.join()
    for st in stages:
        for t in st.threads:
            t.join()
    if source_error:
        raise source_error[0]


def run(cfg: PipelineConfig, source: Iterable, sink: Callable[[int, Image], None],
        settings: Optional[StitchSettings] = None, pool: Optional[BufferPool] = None) -> Metrics:
    """Stitch every frame of ``source`` and hand composites to ``sink`` in order.

    ``source`` yields one tuple of camera images per frame.  ``sink(index,
    image)`` is called from the caller's thread; the image is a view into a
    pooled buffer and is only valid during the call, so copy it to keep it.
    Frames that fail a stage are dropped and listed in ``Metrics.drops``.
    """
    cfg.validate()
    settings = settings or StitchSettings()
    frames = iter(source)
    first = next(frames, None)
    metrics = Metrics()
    if first is None:
        return metrics
    first = tuple(first)
    frames = chain([first], frames)
    if pool is None:
        probe = first[0]
        if isinstance(probe, (str, os.PathLike)):
            probe = imgcore.load_image(probe)
        arr = imgcore.as_array(probe)
        channels = 1 if arr.ndim == 2 else arr.shape[2]
        pool = preallocate(cfg, (arr.shape[1], arr.shape[0]), channels, settings.extraction.top_n,
                           settings.extraction.n_d, n_cameras=len(first), canvas=settings.canvas_cap)
    elif pool.capacity < cfg.in_flight:
        raise CapacityOverflow(f"pool holds {pool.capacity} arenas, {cfg.in_flight} frames in flight requested")
    stitcher = FrameStitcher(settings, cfg.homography_refresh)
    created_before = pool.arenas_created

    t0 = time.perf_counter_ns()
    if cfg.mode == SERIAL:
        _run_serial(stitcher, frames, sink, pool, metrics)
    else:
        _run_pipelined(stitcher, frames, sink, pool, metrics, cfg)
    metrics.wall_ns = time.perf_counter_ns() - t0

    metrics.estimations = stitcher.cache.estimations
    metrics.fallbacks = stitcher.cache.fallbacks
    metrics.pool_capacity = pool.capacity
    metrics.pool_bytes = pool.total_bytes
    metrics.pool_high_water = pool.high_water
    metrics.arenas_created = pool.arenas_created
    metrics.arenas_created_after_warmup = (pool.arenas_created - created_before
                                           + pool.created_after(cfg.in_flight))
    return metrics


def stitch_frame(images: Sequence, settings: Optional[StitchSettings] = None):
    """Stitch one tuple of camera images outside any executor.

    Returns ``(composite, homographies)``; the composite is an owned copy.
    Stage failures propagate as StageFailure.
    """
    images = tuple(images)
    settings = settings or StitchSettings(n_cameras=len(images))
    arr = imgcore.as_array(images[0])
    pool = preallocate(PipelineConfig(), (arr.shape[1], arr.shape[0]), 1 if arr.ndim == 2 else arr.shape[2],
                       settings.extraction.top_n, settings.extraction.n_d, n_cameras=len(images),
                       canvas=settings.canvas_cap)
    stitcher = FrameStitcher(settings)
    pkt = FramePacket(0, pool.acquire())
    _timed(pkt, "ingest", stitcher.ingest, images)
    for name, fn in _stage_fns(stitcher):
        _timed(pkt, name, fn)
    if pkt.failure is not None:
        raise pkt.failure
    return Image(pkt.composite.data.copy()), pkt.homographies
