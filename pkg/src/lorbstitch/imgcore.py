"""Image substrate: rasters, PGM/PPM/PNG I/O, smoothing, gradients, pyramids.

Rasters are numpy arrays in row-major ``(height, width)`` or
``(height, width, 3)`` layout.  Storage is ``uint8``; arithmetic is done in
``float32`` unless a caller asks for more precision.  Every border is handled
by clamp-to-edge replication.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage

from .errors import BadTargetDims, CorruptData, ImageTooSmall, InvalidSigma, UnsupportedFormat

GRAY = "gray"
RGB = "rgb"

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable 2-D raster with 1 (gray) or 3 (RGB) channels."""

    data: np.ndarray

    def __post_init__(self):
        data = self.data
        if not isinstance(data, np.ndarray):
            raise TypeError("Image data must be a numpy array")
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
            object.__setattr__(self, "data", data)
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise ValueError(f"unsupported raster shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        data.flags.writeable = False

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def color_space(self) -> str:
        return GRAY if self.channels == 1 else RGB

    @property
    def shape(self):
        return self.data.shape

    def pixel(self, x: int, y: int):
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexError(f"pixel ({x}, {y}) outside {self.width}x{self.height} image")
        return self.data[y, x]

    def __repr__(self):
        return f"Image({self.width}x{self.height}, {self.color_space}, {self.data.dtype})"


ImageLike = Union[Image, np.ndarray]


def as_image(img: ImageLike) -> Image:
    return img if isinstance(img, Image) else Image(np.asarray(img))


def as_array(img: ImageLike) -> np.ndarray:
    return img.data if isinstance(img, Image) else np.asarray(img)


def to_u8(arr: np.ndarray) -> np.ndarray:
    """Round half away from zero and saturate to ``uint8``."""
    arr = np.asarray(arr, dtype=np.float64)
    rounded = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# file I/O


def _pnm_header(buf: bytes):
    """Parse a binary PNM header; returns (magic, width, height, maxval, offset)."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptData("truncated PNM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates header and raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise CorruptData("missing separator after PNM header")
    pos += 1
    magic = tokens[0].decode("ascii", "replace")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise CorruptData(f"bad PNM header field: {exc}") from None
    return magic, width, height, maxval, pos


def _load_pnm(buf: bytes) -> Image:
    magic, width, height, maxval, offset = _pnm_header(buf)
    if magic not in ("P5", "P6"):
        raise UnsupportedFormat(f"PNM variant {magic} is not supported")
    if maxval != 255:
        raise UnsupportedFormat(f"only 8-bit PNM (maxval 255) supported, got {maxval}")
    if width < 1 or height < 1:
        raise CorruptData(f"bad dimensions {width}x{height}")
    channels = 1 if magic == "P5" else 3
    expected = width * height * channels
    body = buf[offset:]
    if len(body) != expected:
        raise CorruptData(f"expected {expected} raster bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8).copy()
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(data.reshape(shape))


def _load_png(path) -> Image:
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise UnsupportedFormat(f"PNG mode {mode} is not 8-bit")
            if mode in ("1", "L"):
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
            elif mode == "LA":
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise CorruptData(str(exc)) from None
    return Image(arr.copy())


def load_image(path) -> Image:
    """Read a binary PGM (P5), PPM (P6) or 8-bit PNG file."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] in (b"P5", b"P6"):
        return _load_pnm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    if buf[:1] == b"P" and buf[1:2].isdigit():
        raise UnsupportedFormat(f"PNM variant {buf[:2].decode()} is not supported")
    raise UnsupportedFormat(f"unrecognised image format in {path}")


def encode_pnm(img: ImageLike) -> bytes:
    arr = as_array(img)
    if arr.dtype != np.uint8:
        arr = to_u8(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    magic = "P5" if arr.ndim == 2 else "P6"
    header = f"{magic}\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(arr).tobytes()


def save_image(path, img: ImageLike) -> None:
    """Write P5 for gray rasters, P6 for RGB; float input is rounded to u8."""
    with open(path, "wb") as fh:
        fh.write(encode_pnm(img))


# ---------------------------------------------------------------------------
# pixel operations


def to_grayscale(img: ImageLike) -> Image:
    img = as_image(img)
    if img.channels == 1:
        return img
    rgb = img.data.astype(np.float64)
    luma = rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]
    if img.data.dtype == np.uint8:
        return Image(to_u8(luma))
    return Image(luma.astype(img.data.dtype))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise InvalidSigma(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur_array(arr: np.ndarray, sigma: float, dtype=np.float32) -> np.ndarray:
    kernel = gaussian_kernel(sigma).astype(dtype)
    out = np.asarray(arr, dtype=dtype)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def gaussian_blur(img: ImageLike, sigma: float, dtype=np.float32) -> Image:
    """Separable Gaussian smoothing with clamp-to-edge borders.

    ``dtype`` selects the arithmetic precision of the result (``float32`` by
    default).
    """
    return Image(blur_array(as_array(img), sigma, dtype))


@dataclass(frozen=True)
class GradientPair:
    ix: np.ndarray
    iy: np.ndarray


def gradient_arrays(arr: np.ndarray):
    """Central differences in the interior, one-sided at the border."""
    arr = np.asarray(arr, dtype=np.float32)
    iy, ix = np.gradient(arr)
    return ix.astype(np.float32, copy=False), iy.astype(np.float32, copy=False)


def gradients(img: ImageLike) -> GradientPair:
    img = as_image(img)
    if img.channels != 1:
        raise ValueError("gradients expect a grayscale image")
    if img.width < 3 or img.height < 3:
        raise ImageTooSmall(f"gradients need at least 3x3, got {img.width}x{img.height}")
    ix, iy = gradient_arrays(img.data)
    return GradientPair(ix, iy)


# ---------------------------------------------------------------------------
# resampling and pyramids


def downsample_array(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    if w < 2 or h < 2:
        raise ImageTooSmall(f"downsample needs at least 2x2, got {w}x{h}")
    blurred = blur_array(arr, 1.0)
    return blurred[0:2 * (h // 2):2, 0:2 * (w // 2):2]


def _linear_taps(src: int, dst: int):
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = (pos - lo).astype(np.float32)
    return lo, hi, frac


def upsample_array(arr: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if abs(target_w - 2 * w) > 1 or abs(target_h - 2 * h) > 1 or target_w < 1 or target_h < 1:
        raise BadTargetDims(f"cannot upsample {w}x{h} to {target_w}x{target_h}")
    arr = np.asarray(arr, dtype=np.float32)
    lo, hi, f = _linear_taps(h, target_h)
    fy = f.reshape((-1,) + (1,) * (arr.ndim - 1))
    rows = arr[lo] * (1 - fy) + arr[hi] * fy
    lo, hi, f = _linear_taps(w, target_w)
    fx = f.reshape((1, -1) + (1,) * (arr.ndim - 2))
    return rows[:, lo] * (1 - fx) + rows[:, hi] * fx


def downsample(img: ImageLike) -> Image:
    """Blur with sigma 1, then keep every second pixel from (0, 0)."""
    return Image(downsample_array(as_array(img)))


def upsample(img: ImageLike, target_w: int, target_h: int) -> Image:
    """Bilinear (pixel-center aligned) resize to roughly double size."""
    return Image(upsample_array(as_array(img), target_w, target_h))


@dataclass(frozen=True)
class Pyramid:
    levels: list

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a pyramid needs at least one level")
        for prev, cur in zip(self.levels, self.levels[1:]):
            ph, pw = prev.shape[:2]
            if cur.shape[:2] != (ph // 2, pw // 2):
                raise ValueError("pyramid level dimensions must halve (floor)")

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]


def gaussian_pyramid(img: ImageLike, levels: int) -> Pyramid:
    cur = np.asarray(as_array(img), dtype=np.float32)
    out = [cur]
    for _ in range(levels - 1):
        cur = downsample_array(cur)
        out.append(cur)
    return Pyramid(out)
