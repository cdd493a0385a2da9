import numpy as np
import pytest

from lorbstitch import imgcore
from lorbstitch.errors import BadTargetDims, CorruptData, ImageTooSmall, InvalidSigma, UnsupportedFormat
from lorbstitch.imgcore import Image

import oracles


def test_load_p5_bytes(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = imgcore.load_image(p)
    assert (img.width, img.height, img.channels) == (2, 2, 1)
    assert img.color_space == imgcore.GRAY
    assert img.data.ravel().tolist() == [0, 255, 128, 64]


def test_load_p6_is_rgb(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n# comment\n2 1\n255\n" + bytes(range(6)))
    img = imgcore.load_image(p)
    assert img.channels == 3 and img.color_space == imgcore.RGB
    assert img.data.tolist() == [[[0, 1, 2], [3, 4, 5]]]


def test_truncated_p6_is_corrupt(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(CorruptData):
        imgcore.load_image(p)


def test_unsupported_and_missing(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(UnsupportedFormat):
        imgcore.load_image(p)
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(UnsupportedFormat):
        imgcore.load_image(p)
    with pytest.raises(FileNotFoundError):
        imgcore.load_image(tmp_path / "missing.pgm")


def test_png_read(tmp_path):
    from PIL import Image as PILImage

    arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    PILImage.fromarray(arr).save(tmp_path / "a.png")
    assert np.array_equal(imgcore.load_image(tmp_path / "a.png").data, arr)


def test_save_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((5, 7), (4, 3, 3)):
        arr = rng.integers(0, 256, shape, dtype=np.uint8)
        imgcore.save_image(tmp_path / "x", arr)
        raw = (tmp_path / "x").read_bytes()
        back = imgcore.load_image(tmp_path / "x")
        assert np.array_equal(back.data, arr)
        imgcore.save_image(tmp_path / "y", back)
        assert (tmp_path / "y").read_bytes() == raw


def test_image_is_immutable_and_bounds_checked():
    img = Image(np.zeros((2, 3), np.uint8))
    with pytest.raises(ValueError):
        img.data[0, 0] = 1
    with pytest.raises(IndexError):
        img.pixel(3, 0)


def test_grayscale_luma():
    assert imgcore.to_grayscale(np.array([[[100, 150, 200]]], np.uint8)).data[0, 0] == 141
    assert imgcore.to_grayscale(np.full((1, 1, 3), 255, np.uint8)).data[0, 0] == 255
    g = Image(np.arange(6, dtype=np.uint8).reshape(2, 3))
    assert imgcore.to_grayscale(g) is g


def test_to_u8_rounds_half_away():
    assert imgcore.to_u8(np.array([0.5, 1.5, 2.49, 254.5, 300, -3])).tolist() == [1, 2, 2, 255, 255, 0]


def test_blur_constant_and_sigma():
    out = imgcore.gaussian_blur(np.full((9, 11), 77, np.uint8), 1.5)
    assert np.allclose(out.data, 77, atol=1e-4)
    with pytest.raises(InvalidSigma):
        imgcore.gaussian_blur(np.zeros((4, 4)), 0)


def test_blur_impulse_is_kernel():
    img = np.zeros((21, 21))
    img[10, 10] = 1
    out = imgcore.gaussian_blur(img, 1.0, np.float64).data
    taps, r = oracles.gaussian_taps(1.0)
    k2 = np.outer(taps, taps)
    assert np.allclose(out[10 - r:11 + r, 10 - r:11 + r], k2, atol=1e-12)
    assert abs(out.sum() - 1) < 1e-12


def test_blur_matches_loop_oracle():
    img = np.random.default_rng(1).integers(0, 256, (12, 9)).astype(np.float64)
    assert np.allclose(imgcore.gaussian_blur(img, 1.3, np.float64).data, oracles.blur_oracle(img, 1.3), atol=1e-9)


def test_blur_preserves_mean():
    img = np.random.default_rng(2).uniform(0, 255, (64, 64))
    out = imgcore.gaussian_blur(img, 1.0).data
    assert abs(out.mean() - img.mean()) / img.mean() < 1e-3


def test_gradients():
    g = imgcore.gradients(np.full((5, 5), 9, np.uint8))
    assert not g.ix.any() and not g.iy.any()
    ramp = np.tile(np.arange(6, dtype=np.float32), (5, 1))
    g = imgcore.gradients(ramp)
    assert np.all(g.ix[:, 1:-1] == 1) and not g.iy.any()
    plane = 3 * np.arange(6)[None, :] - 2 * np.arange(7)[:, None] + 50.0
    g = imgcore.gradients(plane)
    assert np.all(g.ix[1:-1, 1:-1] == 3) and np.all(g.iy[1:-1, 1:-1] == -2)
    with pytest.raises(ImageTooSmall):
        imgcore.gradients(np.zeros((2, 5)))


def test_gradients_brute_force_5x5():
    img = np.random.default_rng(3).integers(0, 256, (5, 5)).astype(np.uint8)
    g = imgcore.gradients(img)
    ix, iy = oracles.gradient_oracle(img)
    assert np.array_equal(g.ix, ix) and np.array_equal(g.iy, iy)


def test_downsample_upsample():
    assert imgcore.downsample(np.full((4, 4), 5.0)).shape == (2, 2)
    assert imgcore.downsample(np.zeros((7, 9))).shape == (3, 4)
    assert np.allclose(imgcore.downsample(np.full((6, 6), 5.0)).data, 5)
    assert np.allclose(imgcore.upsample(np.full((3, 4), 5.0), 8, 6).data, 5)
    assert imgcore.upsample(np.zeros((3, 4)), 9, 7).shape == (7, 9)
    with pytest.raises(BadTargetDims):
        imgcore.upsample(np.zeros((3, 4)), 12, 6)
    with pytest.raises(ImageTooSmall):
        imgcore.downsample(np.zeros((1, 4)))


def test_checkerboard_downsample_oracle():
    board = ((np.indices((10, 12)).sum(axis=0) % 2) * 255).astype(np.float64)
    expected = oracles.blur_oracle(board, 1.0)[::2, ::2]
    assert np.allclose(imgcore.downsample(board).data, expected, atol=1e-3)


def test_pyramid_dims():
    pyr = imgcore.gaussian_pyramid(np.zeros((37, 50)), 4)
    assert [lv.shape for lv in pyr.levels] == [(37, 50), (18, 25), (9, 12), (4, 6)]
