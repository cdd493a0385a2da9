"""``lorbstitch`` command line: ``stitch``, ``extract`` and ``bench``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
Logging verbosity comes from ``LORB_LOG`` (``error``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import __version__, bench, imgcore, lorb, pipeline
from .config import RunConfig, parse_config
from .errors import MissingFrames, ParseError, StitchError, ValidationError

log = logging.getLogger("lorbstitch")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
TIMING_COLUMNS = ("frame_index", "stage", "duration_ns")
SUMMARY_COLUMNS = ("stage", "mean_ns", "p50_ns", "p99_ns")
FEATURE_COLUMNS = ("x", "y", "response", "region_id", "gt_hex", "lt_hex")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def setup_logging():
    name = os.environ.get("LORB_LOG", "error").strip().lower()
    level = LOG_LEVELS.get(name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    if name not in LOG_LEVELS:
        log.error("ignoring LORB_LOG=%r (expected error, info or debug)", name)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] for c in columns] if isinstance(row, dict) else row)
    return path


def _fmt(v):
    return format(v, ".9g") if isinstance(v, float) else v


# ---------------------------------------------------------------------------
# stitch


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    pcfg = cfg.pipeline
    if args.mode is not None:
        pcfg = dataclasses.replace(pcfg, mode=args.mode)
    if args.frames_in_flight is not None:
        pcfg = dataclasses.replace(pcfg, frames_in_flight=args.frames_in_flight)
    try:
        pcfg.validate()
    except ValueError as exc:
        raise ValidationError("pipeline", str(exc)) from None
    cfg.pipeline = pcfg
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    if args.emit_timings:
        cfg.emit_timings = True
    return cfg


def write_timings(out_dir: Path, metrics: pipeline.Metrics, figure: bool = True):
    rows = sorted(metrics.timing_rows, key=lambda r: (r[0], pipeline.STAGES.index(r[1])))
    write_csv(out_dir / "timings.csv", TIMING_COLUMNS, rows)
    summary = metrics.stage_summary()
    write_csv(out_dir / "timings_summary.csv", SUMMARY_COLUMNS,
              [(s, _fmt(m), _fmt(p50), _fmt(p99)) for s, (m, p50, p99) in summary.items()])
    if figure and summary:
        from .plotting import plot_stage_timings

        plot_stage_timings(summary, out_dir / "timings.png")


def print_metrics(metrics: pipeline.Metrics, out=sys.stdout):
    print(f"frames: {metrics.frames_out}/{metrics.frames_in} stitched, {len(metrics.drops)} dropped", file=out)
    print(f"throughput: {metrics.throughput:.2f} frames/s  wall: {metrics.wall_ns * 1e-9:.3f} s", file=out)
    print(f"estimations: {metrics.estimations}  fallbacks: {metrics.fallbacks}", file=out)
    print(f"pool: {metrics.pool_capacity} arenas, {metrics.pool_bytes} bytes, high water {metrics.pool_high_water}",
          file=out)
    for stage, (mean, p50, p99) in metrics.stage_summary().items():
        print(f"  {stage:<15} mean {mean / 1e6:8.2f} ms  p50 {p50 / 1e6:8.2f} ms  p99 {p99 / 1e6:8.2f} ms",
              file=out)
    for failure in metrics.drops:
        print(f"  dropped frame {failure.frame_index} in {failure.stage}: {failure.cause}", file=out)


def cmd_stitch(cfg: RunConfig, png: bool = False) -> int:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def sink(j, img):
        imgcore.save_image(out_dir / f"pano_{j}.ppm", img)
        if png:
            from PIL import Image as PILImage

            PILImage.fromarray(img.data).save(out_dir / f"pano_{j}.png")

    metrics = pipeline.run(cfg.pipeline, cfg.frame_source(), sink, cfg.stitch_settings())
    for failure in metrics.drops:
        log.error("%s", failure)
    if cfg.emit_timings:
        write_timings(out_dir, metrics)
    print_metrics(metrics)
    return EXIT_OK if metrics.frames_out > 0 else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# extract


def extract_regions(width: int, height: int, overlap=None) -> list:
    """Full frame, or with ``overlap`` the right then left strip of a middle camera."""
    if overlap is None:
        return [lorb.DetectionRegion(0, 0, width, height)]
    regions = lorb.partition_regions(lorb.CameraLayout.uniform(3, overlap), [(width, height)] * 3)
    return [lorb.DetectionRegion(r.x0, r.y0, r.x1, r.y1, 0) for r in regions if r.camera_id == 1][::-1]


def feature_rows(fs: lorb.FeatureSet) -> list:
    rows = []
    for i in range(len(fs)):
        kp, desc = fs[i]
        gt_hex, lt_hex = desc.hex()
        rows.append((kp.x, kp.y, _fmt(kp.response), kp.region_id, gt_hex, lt_hex))
    return rows


def cmd_extract(cfg: RunConfig, image_path, out_dir, overlap=None) -> int:
    img = imgcore.load_image(image_path)
    ext = cfg.extraction
    pattern = lorb.brief_pattern(ext.n_d, ext.patch_half, cfg.seed)
    fs = lorb.extract_features(img, extract_regions(img.width, img.height, overlap), ext, pattern)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_csv(out_dir / "features.csv", FEATURE_COLUMNS, feature_rows(fs))
    print(f"{len(fs)} keypoints -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(cfg: RunConfig, suite: str, out_dir, quick: bool = False, frames: int = 10) -> int:
    from . import plotting

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed
    if suite == "features":
        sizes = bench.FEATURE_SIZES[:1] if quick else bench.FEATURE_SIZES
        rows = [bench.feature_times(w, h, cfg.overlap, 3 if quick else 7, seed, cfg.extraction) for w, h in sizes]
        plotting.plot_features(rows, out_dir / "bench_features.png")
        for r in rows:
            print(f"{r['width']}x{r['height']}: full {r['full_ms']:.1f} ms, strip {r['region_ms']:.1f} ms, "
                  f"ratio {r['ratio']:.3f}")
    elif suite == "match":
        rows = bench.bench_match(seed, cfg=cfg.lsh)
        plotting.plot_match(rows, out_dir / "bench_match.png")
        for r in rows:
            print(f"probes {r['probes']:>3}: recall {r['recall']:.3f}, {r['mean_candidates']:.1f} candidates/query, "
                  f"lsh {r['lsh_ms']:.2f} ms vs brute {r['brute_ms']:.2f} ms")
    elif suite == "pipeline":
        cams = (2, 3) if quick else bench.CAMERA_SWEEP
        rows = bench.bench_pipeline(cams, bench.IN_FLIGHT_SWEEP, 4 if quick else frames, seed=seed)
        plotting.plot_pipeline(rows, out_dir / "bench_pipeline.png")
        for r in rows:
            print(f"{r['cameras']} cams, {r['mode']:<9} x{r['frames_in_flight']}: {r['ms_per_frame']:.1f} ms/frame")
    else:
        raise ValidationError("suite", f"unknown suite {suite!r}")
    columns = list(rows[0])
    write_csv(out_dir / f"bench_{suite}.csv", columns, [{k: _fmt(v) for k, v in r.items()} for r in rows])
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=(pipeline.SERIAL, pipeline.PIPELINED))
    common.add_argument("--frames-in-flight", type=int)
    common.add_argument("--emit-timings", action="store_true", help="write timings.csv and a stage figure")

    parser = argparse.ArgumentParser(prog="lorbstitch", description="Overlap-restricted ORB panorama stitcher.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    st = sub.add_parser("stitch", parents=[common], help="stitch frame sequences into panoramas")
    st.add_argument("--png", action="store_true", help="also write pano_<i>.png")
    ex = sub.add_parser("extract", parents=[common], help="write keypoints and descriptors of one image as CSV")
    ex.add_argument("image")
    ex.add_argument("--overlap", type=float, help="restrict detection to left/right strips of this width fraction")
    be = sub.add_parser("bench", parents=[common], help="run a benchmark suite")
    be.add_argument("suite", choices=sorted(bench.SUITES))
    be.add_argument("--quick", action="store_true", help="smaller sweep")
    be.add_argument("--frames", type=int, default=10, help="frames per pipeline measurement")
    return parser


def _load(args, min_cameras: int, check_frames: bool) -> RunConfig:
    if args.config:
        cfg = parse_config(args.config, min_cameras=min_cameras, check_frames=check_frames)
    else:
        if min_cameras > 0:
            raise ValidationError("config", "--config is required for this command")
        cfg = RunConfig(cameras=[])
    return _apply_overrides(cfg, args)


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "stitch":
            cfg = _load(args, 2, True)
        elif args.command == "extract":
            cfg = _load(args, 0, False)
            if args.overlap is not None and not 0 < args.overlap <= 0.5:
                raise ValidationError("overlap", "must lie in (0, 0.5] for a single image")
        else:
            cfg = _load(args, 0, False)
    except (ParseError, ValidationError, MissingFrames) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "stitch":
            return cmd_stitch(cfg, args.png)
        if args.command == "extract":
            return cmd_extract(cfg, args.image, args.out or ".", args.overlap)
        return cmd_bench(cfg, args.suite, args.out or ".", args.quick, args.frames)
    except (StitchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
