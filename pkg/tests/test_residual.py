import numpy as np
import pytest

from varbgsub.residual import residual_map


def reference_residual(current, backgrounds, vicinity):
    """Naive triple-loop oracle for the windowed channel-min residual."""
    h, w = current.shape
    reach = vicinity // 2
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            best = 255
            for bg in backgrounds:
                for dy in range(-reach, reach + 1):
                    for dx in range(-reach, reach + 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w:
                            best = min(best, abs(int(current[y, x]) - int(bg[ny, nx])))
            out[y, x] = best
    return out


class TestResidualMap:
    def test_background_equals_frame(self):
        rng = np.random.default_rng(0)
        frame = rng.integers(0, 256, (6, 6), dtype=np.uint8)
        assert (residual_map(frame, frame[None], vicinity=1) == 0).all()

    def test_single_spike_vicinity_3(self):
        cur = np.zeros((7, 7), dtype=np.uint8)
        cur[3, 3] = 200
        bg = np.zeros((1, 7, 7), dtype=np.uint8)
        r = residual_map(cur, bg, vicinity=3)
        assert r[3, 3] == 200
        r[3, 3] = 0
        assert (r == 0).all()

    def test_channel_min(self):
        cur = np.full((4, 4), 100, dtype=np.uint8)
        bgs = np.stack([np.zeros((4, 4), np.uint8), np.full((4, 4), 255, np.uint8)])
        assert (residual_map(cur, bgs, vicinity=1) == 100).all()

    def test_vicinity_1_single_channel_is_plain_absdiff(self):
        rng = np.random.default_rng(1)
        cur = rng.integers(0, 256, (8, 8), dtype=np.uint8)
        bg = rng.integers(0, 256, (8, 8), dtype=np.uint8)
        expected = np.abs(cur.astype(int) - bg.astype(int)).astype(np.uint8)
        assert np.array_equal(residual_map(cur, bg[None], vicinity=1), expected)

    @pytest.mark.parametrize("vicinity", [1, 3, 5])
    @pytest.mark.parametrize("channels", [1, 2, 3])
    def test_matches_brute_force(self, vicinity, channels):
        rng = np.random.default_rng(vicinity * 10 + channels)
        cur = rng.integers(0, 256, (8, 8), dtype=np.uint8)
        bgs = rng.integers(0, 256, (channels, 8, 8), dtype=np.uint8)
        assert np.array_equal(
            residual_map(cur, bgs, vicinity), reference_residual(cur, bgs, vicinity)
        )

    def test_monotone_in_vicinity_and_channels(self):
        rng = np.random.default_rng(2)
        cur = rng.integers(0, 256, (10, 10), dtype=np.uint8)
        bgs = rng.integers(0, 256, (3, 10, 10), dtype=np.uint8)
        r1 = residual_map(cur, bgs, 1)
        r3 = residual_map(cur, bgs, 3)
        r5 = residual_map(cur, bgs, 5)
        assert (r3 <= r1).all() and (r5 <= r3).all()
        assert (residual_map(cur, bgs, 3) <= residual_map(cur, bgs[:1], 3)).all()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            residual_map(np.zeros((4, 4), np.uint8), np.zeros((1, 5, 5), np.uint8))

    def test_even_vicinity_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            residual_map(np.zeros((4, 4), np.uint8), np.zeros((1, 4, 4), np.uint8), 2)
