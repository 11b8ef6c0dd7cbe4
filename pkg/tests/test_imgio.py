import numpy as np
import pytest
from PIL import Image

from varbgsub.imgio import (
    ImageDecodeError,
    denormalize,
    load_frame,
    normalize,
    resize,
    rgb_to_grayscale,
    to_grayscale,
    write_mask_pgm,
    write_pgm,
)


class TestPgm:
    def test_parse_2x2(self, tmp_path):
        p = tmp_path / "f.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 64, 128, 255]))
        frame = load_frame(p)
        assert frame.shape == (2, 2)
        assert frame.tolist() == [[0, 64], [128, 255]]

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        frame = rng.integers(0, 256, (11, 7), dtype=np.uint8)
        p = tmp_path / "rt.pgm"
        write_pgm(p, frame)
        assert np.array_equal(load_frame(p), frame)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 64, 128]))
        with pytest.raises(ImageDecodeError, match="malformed image"):
            load_frame(p)

    def test_wrong_maxval(self, tmp_path):
        p = tmp_path / "deep.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n" + bytes([0, 0]))
        with pytest.raises(ImageDecodeError, match="unsupported bit depth"):
            load_frame(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageDecodeError, match="unreadable"):
            load_frame(tmp_path / "nope.pgm")

    def test_mask_written_as_0_255(self, tmp_path):
        mask = np.array([[True, False], [False, True]])
        p = tmp_path / "m.pgm"
        write_mask_pgm(p, mask)
        assert load_frame(p).tolist() == [[255, 0], [0, 255]]


class TestPng:
    def test_all_white(self, tmp_path):
        p = tmp_path / "w.png"
        Image.new("L", (4, 4), 255).save(p)
        frame = load_frame(p)
        assert frame.shape == (4, 4)
        assert (frame == 255).all()

    def test_rgb_goes_through_luma(self, tmp_path):
        p = tmp_path / "red.png"
        Image.new("RGB", (2, 2), (255, 0, 0)).save(p)
        assert (load_frame(p) == 76).all()

    def test_16bit_rejected(self, tmp_path):
        p = tmp_path / "deep.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(p)
        with pytest.raises(ImageDecodeError, match="unsupported"):
            load_frame(p)


class TestGrayscale:
    def test_white(self):
        assert to_grayscale(255, 255, 255) == 255

    def test_black(self):
        assert to_grayscale(0, 0, 0) == 0

    def test_pure_red(self):
        # round(0.299 * 255) = 76
        assert to_grayscale(255, 0, 0) == 76

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            r, g, b = (int(v) for v in rng.integers(0, 255, 3))
            y = to_grayscale(r, g, b)
            assert 0 <= y <= 255
            assert to_grayscale(r + 1, g, b) >= y
            assert to_grayscale(r, g + 1, b) >= y
            assert to_grayscale(r, g, b + 1) >= y

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(12)
        rgb = rng.integers(0, 256, (5, 4, 3), dtype=np.uint8)
        out = rgb_to_grayscale(rgb)
        for y in range(5):
            for x in range(4):
                assert out[y, x] == to_grayscale(*(int(c) for c in rgb[y, x]))


class TestResize:
    def test_identity_is_bit_exact(self):
        rng = np.random.default_rng(5)
        frame = rng.integers(0, 256, (9, 13), dtype=np.uint8)
        for mode in ("bilinear", "nearest"):
            assert np.array_equal(resize(frame, 13, 9, mode), frame)

    def test_constant_preserved(self):
        frame = np.full((2, 2), 100, dtype=np.uint8)
        for mode in ("bilinear", "nearest"):
            out = resize(frame, 7, 5, mode)
            assert out.shape == (5, 7)
            assert (out == 100).all()

    def test_1x2_to_1x3_bilinear(self):
        frame = np.array([[0, 255]], dtype=np.uint8)
        out = resize(frame, 3, 1, "bilinear")
        assert out.tolist() == [[0, 128, 255]]

    def test_nearest_keeps_mask_values(self):
        rng = np.random.default_rng(6)
        mask = (rng.integers(0, 2, (6, 6)) * 255).astype(np.uint8)
        out = resize(mask, 11, 9, "nearest")
        assert set(np.unique(out)) <= {0, 255}

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError):
            resize(np.zeros((2, 2), dtype=np.uint8), 0, 2)


class TestNormalize:
    def test_endpoints(self):
        frame = np.array([[0, 255]], dtype=np.uint8)
        t = normalize(frame)
        assert t.shape == (1, 1, 2)
        assert t[0, 0, 0] == pytest.approx(-0.5)
        assert t[0, 0, 1] == pytest.approx(0.5)

    def test_midpoint(self):
        t = normalize(np.array([[128]], dtype=np.uint8))
        assert t[0, 0, 0] == pytest.approx(128 / 255 - 0.5, abs=1e-7)

    def test_denormalize_clamps(self):
        out = denormalize(np.array([[[0.6, -0.7]]]))
        assert out.tolist() == [[255, 0]]

    def test_roundtrip_every_byte(self):
        frame = np.arange(256, dtype=np.uint8).reshape(16, 16)
        assert np.array_equal(denormalize(normalize(frame)), frame)

    def test_range_bounds(self):
        rng = np.random.default_rng(7)
        frame = rng.integers(0, 256, (8, 8), dtype=np.uint8)
        t = normalize(frame)
        assert t.min() >= -0.5 and t.max() <= 0.5
