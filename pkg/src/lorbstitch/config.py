"""Run configuration: a TOML document mapped onto validated dataclasses.

Grammar is plain TOML (UTF-8).  Recognised layout::

    seed = 0                 # propagates to BRIEF pattern, LSH tables, PROSAC
    output_dir = "out"
    emit_timings = false
    overlap = 0.25           # fraction shared by adjacent cameras
    blend_levels = 4

    [[cameras]]              # one table per camera, left to right
    id = 0
    frames = "cam0/*.ppm"    # glob, sorted lexicographically
    pre_transform = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]   # optional
    crop = [0, 0, 640, 480]                             # optional x0, y0, x1, y1

    [[regions]]              # optional explicit detection strips
    camera = 0
    rect = [480, 0, 640, 480]
    pair = 0

    [extraction]  fast_threshold fast_arc harris_alpha harris_threshold harris_sigma
                  top_n n_d brief_blur_sigma patch_half nms_radius
    [lsh]         tables key_bits probes max_distance ratio
    [prosac]      threshold_px max_iter confidence growth_tn
    [pipeline]    mode frames_in_flight workers_per_stage homography_refresh memory_cap

Every key is optional except ``cameras`` (two or more for stitching); unknown
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import glob
import os
import re
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MissingFrames, ParseError, ValidationError
from .lorb import CameraLayout, DetectionRegion, ExtractionConfig
from .matchlsh import MatchConfig, ProsacConfig
from .pipeline import PipelineConfig, StitchSettings

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class CameraSpec:
    id: int
    frames: str
    pre_transform: Optional[np.ndarray] = None
    crop: Optional[tuple] = None
    paths: list = field(default_factory=list)


@dataclass
class RunConfig:
    cameras: list
    overlap: float = 0.25
    regions: Optional[list] = None
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    lsh: MatchConfig = field(default_factory=MatchConfig)
    prosac: ProsacConfig = field(default_factory=ProsacConfig)
    blend_levels: int = 4
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    output_dir: str = "out"
    seed: int = 0
    emit_timings: bool = False
    source: Optional[str] = None

    @property
    def n_frames(self) -> int:
        return min((len(c.paths) for c in self.cameras), default=0)

    def layout(self) -> CameraLayout:
        n = len(self.cameras)
        if self.regions is not None:
            return CameraLayout(n, (), tuple(self.regions))
        return CameraLayout.uniform(n, self.overlap)

    def stitch_settings(self) -> StitchSettings:
        pre = [c.pre_transform for c in self.cameras]
        crops = [c.crop for c in self.cameras]
        return StitchSettings(
            n_cameras=len(self.cameras),
            overlap=self.overlap,
            layout=self.layout(),
            extraction=self.extraction,
            matching=self.lsh,
            prosac=self.prosac,
            blend_levels=self.blend_levels,
            seed=self.seed,
            pre_transforms=pre if any(p is not None for p in pre) else None,
            crops=crops if any(c is not None for c in crops) else None,
        )

    def frame_source(self):
        """Per-frame tuples of file paths (loaded by the pipeline's ingest stage)."""
        for j in range(self.n_frames):
            yield tuple(c.paths[j] for c in self.cameras)


_TOP_KEYS = {"seed", "output_dir", "emit_timings", "overlap", "blend_levels", "cameras", "regions",
             "extraction", "lsh", "prosac", "pipeline"}
_CAMERA_KEYS = {"id", "frames", "pre_transform", "crop"}
_REGION_KEYS = {"camera", "rect", "pair"}
_LSH_FIELDS = {"tables", "key_bits", "probes", "max_distance", "ratio"}
_PROSAC_FIELDS = {"threshold_px", "max_iter", "confidence", "growth_tn"}
_PIPELINE_FIELDS = {"mode", "frames_in_flight", "workers_per_stage", "homography_refresh", "memory_cap"}


def _parse_error(exc) -> ParseError:
    line = getattr(exc, "lineno", None)
    if line is None:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else 0
    msg = getattr(exc, "msg", None) or str(exc)
    return ParseError(line, msg)


def _check_keys(table: dict, allowed, where: str):
    for key in table:
        if key not in allowed:
            raise ValidationError(f"{where}{key}", "unknown key")


def _typed(value, kind, name):
    if kind is bool:
        if not isinstance(value, bool):
            raise ValidationError(name, f"expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(name, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(name, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ValidationError(name, f"expected a string, got {value!r}")
        return value
    return value


def _section(cls, table, allowed, prefix, base=None):
    """Dataclass ``cls`` from a TOML table, coercing by the default's type."""
    if not isinstance(table, dict):
        raise ValidationError(prefix.rstrip("."), "expected a table")
    _check_keys(table, allowed, prefix)
    base = base if base is not None else cls()
    kinds = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(cls)}
    values = {k: _typed(v, kinds[k], prefix + k) for k, v in table.items()}
    obj = dataclasses.replace(base, **values)
    try:
        obj.validate()
    except ValueError as exc:
        raise ValidationError(prefix.rstrip("."), str(exc)) from None
    return obj


def _matrix(value, name):
    try:
        m = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError(name, "expected a 3x3 numeric array") from None
    if m.shape != (3, 3) or not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) < 1e-12:
        raise ValidationError(name, "expected an invertible 3x3 matrix")
    return m


def _rect(value, name):
    if not (isinstance(value, list) and len(value) == 4 and all(isinstance(v, int) and not isinstance(v, bool)
                                                                for v in value)):
        raise ValidationError(name, "expected [x0, y0, x1, y1] integers")
    x0, y0, x1, y1 = value
    if not (0 <= x0 < x1 and 0 <= y0 < y1):
        raise ValidationError(name, f"empty or negative rectangle {value}")
    return tuple(value)


def build_config(doc: dict, base_dir: str = ".", min_cameras: int = 2, check_frames: bool = True) -> RunConfig:
    """Validate a parsed document.  Relative globs resolve against ``base_dir``."""
    _check_keys(doc, _TOP_KEYS, "")
    cams = doc.get("cameras", [])
    if not isinstance(cams, list):
        raise ValidationError("cameras", "expected an array of [[cameras]] tables")
    if len(cams) < min_cameras:
        raise ValidationError("cameras", f"need >= {min_cameras} cameras, got {len(cams)}")
    cameras = []
    for i, cam in enumerate(cams):
        where = f"cameras[{i}]."
        if not isinstance(cam, dict):
            raise ValidationError(f"cameras[{i}]", "expected a table")
        _check_keys(cam, _CAMERA_KEYS, where)
        if "frames" not in cam:
            raise ValidationError(where + "frames", "missing frame glob")
        spec = CameraSpec(
            id=_typed(cam.get("id", i), int, where + "id"),
            frames=_typed(cam["frames"], str, where + "frames"),
            pre_transform=_matrix(cam["pre_transform"], where + "pre_transform") if "pre_transform" in cam else None,
            crop=_rect(cam["crop"], where + "crop") if "crop" in cam else None,
        )
        cameras.append(spec)
    if len({c.id for c in cameras}) != len(cameras):
        raise ValidationError("cameras.id", "camera ids must be unique")

    overlap = _typed(doc.get("overlap", 0.25), float, "overlap")
    if not overlap > 0:
        raise ValidationError("overlap", f"cameras must overlap (NoOverlap), got {overlap}")
    if overlap > 1:
        raise ValidationError("overlap", f"overlap fraction {overlap} exceeds 1")

    regions = None
    if "regions" in doc:
        regions = []
        if not isinstance(doc["regions"], list):
            raise ValidationError("regions", "expected an array of tables")
        for i, reg in enumerate(doc["regions"]):
            where = f"regions[{i}]."
            _check_keys(reg, _REGION_KEYS, where)
            cam = _typed(reg.get("camera", 0), int, where + "camera")
            if not 0 <= cam < len(cameras):
                raise ValidationError(where + "camera", f"no camera {cam}")
            if "rect" not in reg:
                raise ValidationError(where + "rect", "missing rectangle")
            x0, y0, x1, y1 = _rect(reg["rect"], where + "rect")
            pair = reg.get("pair")
            pair = None if pair is None else _typed(pair, int, where + "pair")
            regions.append(DetectionRegion(x0, y0, x1, y1, cam, pair))

    seed = _typed(doc.get("seed", 0), int, "seed")
    if seed < 0:
        raise ValidationError("seed", "seed must be a non-negative integer")
    levels = _typed(doc.get("blend_levels", 4), int, "blend_levels")
    if levels < 1:
        raise ValidationError("blend_levels", "must be >= 1")

    cfg = RunConfig(
        cameras=cameras,
        overlap=overlap,
        regions=regions,
        extraction=_section(ExtractionConfig, doc.get("extraction", {}),
                            {f.name for f in dataclasses.fields(ExtractionConfig)}, "extraction."),
        lsh=_section(MatchConfig, doc.get("lsh", {}), _LSH_FIELDS, "lsh."),
        prosac=_section(ProsacConfig, doc.get("prosac", {}), _PROSAC_FIELDS, "prosac."),
        blend_levels=levels,
        pipeline=_section(PipelineConfig, doc.get("pipeline", {}), _PIPELINE_FIELDS, "pipeline."),
        output_dir=_typed(doc.get("output_dir", "out"), str, "output_dir"),
        seed=seed,
        emit_timings=_typed(doc.get("emit_timings", False), bool, "emit_timings"),
    )
    if check_frames:
        resolve_frames(cfg, base_dir)
    return cfg


def resolve_frames(cfg: RunConfig, base_dir: str = ".") -> RunConfig:
    """Expand every camera's glob; raises MissingFrames on an empty match."""
    for cam in cfg.cameras:
        pattern = cam.frames if os.path.isabs(cam.frames) else os.path.join(base_dir, cam.frames)
        cam.paths = sorted(glob.glob(pattern))
        if not cam.paths:
            raise MissingFrames(pattern)
    counts = {len(c.paths) for c in cfg.cameras}
    if len(counts) > 1:
        raise ValidationError("cameras.frames", f"cameras have different frame counts {sorted(counts)}")
    return cfg


def parse_config_text(text: str, base_dir: str = ".", min_cameras: int = 2, check_frames: bool = True) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _parse_error(exc) from None
    return build_config(doc, base_dir, min_cameras, check_frames)


def parse_config(path, min_cameras: int = 2, check_frames: bool = True) -> RunConfig:
    """Read and validate a run configuration file.

    Frame globs are resolved relative to the file's directory.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw[:exc.start].count(b"\n") + 1
        raise ParseError(line, "file is not valid UTF-8") from None
    cfg = parse_config_text(text, os.path.dirname(os.path.abspath(path)), min_cameras, check_frames)
    cfg.source = path
    return cfg
