import numpy as np
import pytest

from varbgsub.thresholding import (
    ThresholdConfig,
    alpha_of_threshold,
    apply_threshold,
    conditional_value_at_risk,
    histogram_of_thresholds,
    residual_histogram,
    smallest_half_interval,
    threshold_from_histogram,
    two_thirds_floor,
    value_at_risk,
    var_threshold,
    vote_range,
)


def brute_force_histogram(rmap: np.ndarray) -> np.ndarray:
    """Independent oracle: count nearly-isolated patterns per threshold.

    For each t, a center counts when its residual is >= t and at most one
    of its (border-clipped) neighbors is >= t.  No interval voting.
    """
    h, w = rmap.shape
    hist = np.zeros(256, dtype=np.int64)
    for t in range(256):
        count = 0
        for y in range(h):
            for x in range(w):
                if rmap[y, x] < t:
                    continue
                marked = 0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if (dy, dx) == (0, 0):
                            continue
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and rmap[ny, nx] >= t:
                            marked += 1
                if marked <= 1:
                    count += 1
        hist[t] = count
    return hist


def brute_force_histogram_fast(rmap: np.ndarray) -> np.ndarray:
    """Vectorized variant of the direct pattern count (still no voting)."""
    h, w = rmap.shape
    padded = np.pad(rmap.astype(np.int16), 1, constant_values=-1)
    neighbors = np.stack(
        [
            padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            for dy in (-1, 0, 1)
            for dx in (-1, 0, 1)
            if (dy, dx) != (0, 0)
        ]
    )
    ts = np.arange(256, dtype=np.int16)[:, None, None]
    center_ok = rmap[None] >= ts
    few_marked = (neighbors[None] >= ts[:, None]).sum(axis=1) <= 1
    return (center_ok & few_marked).sum(axis=(1, 2)).astype(np.int64)


class TestVoteRange:
    def test_center_is_patch_max(self):
        # second and third largest of the patch are both neighbors here
        neighbors = [3, 9, 7, 0, 1, 2, 0, 0]
        assert vote_range(12, neighbors) == (8, 12)

    def test_center_over_flat_neighbors(self):
        assert vote_range(10, [0] * 8) == (1, 10)

    def test_all_equal_is_empty(self):
        assert vote_range(5, [5] * 8) is None

    def test_two_larger_neighbors_is_empty(self):
        assert vote_range(5, [7, 6, 0, 0, 0, 0, 0, 0]) is None

    def test_fewer_than_two_neighbors_starts_at_zero(self):
        assert vote_range(5, []) == (0, 5)
        assert vote_range(5, [200]) == (0, 5)

    def test_matches_direct_pattern_count(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            patch = rng.integers(0, 40, (3, 3))
            center = int(patch[1, 1])
            neighbors = [int(v) for i, v in enumerate(patch.reshape(-1)) if i != 4]
            expected = [
                t
                for t in range(256)
                if center >= t and sum(n >= t for n in neighbors) <= 1
            ]
            got = vote_range(center, neighbors)
            if got is None:
                assert expected == []
            else:
                assert expected == list(range(got[0], got[1] + 1))


class TestHistogramOfThresholds:
    def test_all_zero_map(self):
        assert (histogram_of_thresholds(np.zeros((5, 5), dtype=np.uint8)) == 0).all()

    def test_single_spike_3x3(self):
        rmap = np.zeros((3, 3), dtype=np.uint8)
        rmap[1, 1] = 10
        assert np.array_equal(histogram_of_thresholds(rmap), brute_force_histogram(rmap))

    def test_matches_slow_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            rmap = rng.integers(0, 30, (6, 6)).astype(np.uint8)
            assert np.array_equal(histogram_of_thresholds(rmap), brute_force_histogram(rmap))

    def test_matches_fast_brute_force_random_maps(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            rmap = rng.integers(0, 256, (32, 32)).astype(np.uint8)
            assert np.array_equal(histogram_of_thresholds(rmap), brute_force_histogram_fast(rmap))

    def test_fast_and_slow_oracles_agree(self):
        rng = np.random.default_rng(3)
        rmap = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        assert np.array_equal(brute_force_histogram(rmap), brute_force_histogram_fast(rmap))


class TestValueAtRisk:
    def test_point_mass(self):
        hist = np.zeros(256, dtype=np.int64)
        hist[7] = 13
        for alpha in (0.01, 0.5, 1.0):
            assert value_at_risk(hist, alpha) == 7
            assert conditional_value_at_risk(hist, alpha) == pytest.approx(7.0, abs=1e-12)

    def test_uniform_over_four(self):
        hist = np.zeros(256, dtype=np.int64)
        hist[:4] = 1
        assert value_at_risk(hist, 0.5) == 1
        assert conditional_value_at_risk(hist, 0.5) == pytest.approx(2.0, abs=1e-12)

    def test_alpha_one_is_max_occupied_bin(self):
        hist = np.zeros(256, dtype=np.int64)
        hist[3] = 5
        hist[200] = 1
        assert value_at_risk(hist, 1.0) == 200

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(4)
        hist = rng.integers(0, 10, 256)
        alphas = np.linspace(0.05, 1.0, 20)
        vs = [value_at_risk(hist, a) for a in alphas]
        assert all(a <= b for a, b in zip(vs, vs[1:]))

    def test_cvar_at_least_var(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            hist = rng.integers(0, 10, 256)
            if hist.sum() == 0:
                continue
            alpha = float(rng.uniform(0.05, 1.0))
            assert conditional_value_at_risk(hist, alpha) >= value_at_risk(hist, alpha)

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            value_at_risk(np.zeros(256), 0.5)


class TestAlphaOfThreshold:
    def test_three_of_four_below(self):
        hist = residual_histogram(np.array([[0, 0], [0, 10]], dtype=np.uint8))
        assert alpha_of_threshold(hist, 5) == pytest.approx(0.75)

    def test_zero_threshold(self):
        hist = residual_histogram(np.array([[1, 2]], dtype=np.uint8))
        assert alpha_of_threshold(hist, 0) == 0.0

    def test_past_max(self):
        hist = residual_histogram(np.array([[255, 0]], dtype=np.uint8))
        assert alpha_of_threshold(hist, 256) == 1.0


class TestSmallestHalfInterval:
    def test_point_mass(self):
        hist = np.zeros(256, dtype=np.int64)
        hist[7] = 3
        assert smallest_half_interval(hist) == (7, 7)

    def test_uniform_full_range(self):
        assert smallest_half_interval(np.ones(256, dtype=np.int64)) == (0, 127)

    def test_empty(self):
        assert smallest_half_interval(np.zeros(256, dtype=np.int64)) == (0, 0)

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            hist = rng.integers(0, 5, 40)
            hist = np.concatenate([hist, np.zeros(216, dtype=hist.dtype)])
            total = hist.sum()
            if total == 0:
                continue
            best = None
            for left in range(256):
                s = 0
                for right in range(left, 256):
                    s += hist[right]
                    if 2 * s >= total:
                        cand = (right - left, left, right)
                        if best is None or cand < best:
                            best = cand
                        break
            assert smallest_half_interval(hist) == (best[1], best[2])


class TestTwoThirdsFloor:
    def test_all_zero(self):
        assert two_thirds_floor(np.zeros((4, 4), dtype=np.uint8)) == 1

    def test_three_values(self):
        assert two_thirds_floor(np.array([[0, 10, 20]], dtype=np.uint8)) == 11

    def test_clamped_at_255(self):
        assert two_thirds_floor(np.full((3, 3), 255, dtype=np.uint8)) == 255

    def test_matches_sorted_rank(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            flat = rng.integers(0, 256, rng.integers(1, 50)).astype(np.uint8)
            n = flat.size
            k = -(-2 * n // 3)  # ceil
            expected = min(int(np.sort(flat)[k - 1]) + 1, 255)
            assert two_thirds_floor(flat.reshape(1, -1)) == expected


def scan_reference(hist, floor, n_pixels, cfg):
    """Literal re-implementation of the threshold scan, kept scalar."""
    left, right = smallest_half_interval(hist)
    t = max(floor, cfg.hard_threshold, right)
    while t <= 255:
        ok = True
        for x in range(t - cfg.scan_halfwidth, t + cfg.scan_halfwidth + 1):
            if 0 <= x <= 255 and hist[x] > cfg.noise_rate * n_pixels:
                ok = False
                break
        if ok:
            return t
        t += 1
    return 255


class TestVarThreshold:
    def test_all_zero_map_hits_hard_threshold(self):
        assert var_threshold(np.zeros((20, 20), dtype=np.uint8)) == 25

    def test_busy_histogram_up_to_60(self):
        hist = np.zeros(256, dtype=np.int64)
        hist[: 61] = 100
        cfg = ThresholdConfig()
        n_pixels = 10_000  # budget 25, far below the 100-count bins
        assert threshold_from_histogram(hist, 1, n_pixels, cfg) == 66
        assert scan_reference(hist, 1, n_pixels, cfg) == 66

    def test_scan_matches_reference_on_random_histograms(self):
        rng = np.random.default_rng(8)
        cfg = ThresholdConfig()
        for _ in range(30):
            hist = rng.integers(0, 60, 256)
            hist[rng.integers(0, 256, 50)] = 0
            floor = int(rng.integers(0, 100))
            got = threshold_from_histogram(hist, floor, 10_000, cfg)
            assert got == scan_reference(hist, floor, 10_000, cfg)

    def test_never_below_hard_threshold_or_floor(self):
        rng = np.random.default_rng(9)
        cfg = ThresholdConfig()
        for _ in range(20):
            rmap = rng.integers(0, 120, (16, 16)).astype(np.uint8)
            t = var_threshold(rmap, cfg)
            assert t >= max(cfg.hard_threshold, two_thirds_floor(rmap))

    def test_salt_noise_does_not_lower_threshold(self):
        # isolated spikes add votes, so the scan can only move right
        rng = np.random.default_rng(10)
        base = rng.integers(0, 8, (48, 48)).astype(np.uint8)
        t_clean = var_threshold(base)
        raised = 0
        for seed in range(12):
            r = np.random.default_rng(seed)
            noisy = base.copy()
            ys = r.integers(2, 46, 30)
            xs = r.integers(2, 46, 30)
            noisy[ys, xs] = 90
            t_noisy = var_threshold(noisy)
            assert t_noisy >= t_clean
            raised += t_noisy > t_clean
        assert raised > 0  # the spikes must actually move the threshold somewhere

    def test_empty_map_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            var_threshold(np.zeros((0, 0), dtype=np.uint8))


class TestApplyThreshold:
    def test_zero_marks_everything(self):
        rmap = np.array([[0, 100]], dtype=np.uint8)
        assert apply_threshold(rmap, 0).all()

    def test_above_max_marks_nothing(self):
        rmap = np.array([[0, 100]], dtype=np.uint8)
        assert not apply_threshold(rmap, 101).any()

    def test_boundary_inclusive(self):
        rmap = np.array([[24, 25, 26]], dtype=np.uint8)
        assert apply_threshold(rmap, 25).tolist() == [[False, True, True]]


class TestConfigValidation:
    def test_bad_noise_rate(self):
        with pytest.raises(ValueError):
            ThresholdConfig(noise_rate=0.0)

    def test_bad_hard_threshold(self):
        with pytest.raises(ValueError):
            ThresholdConfig(hard_threshold=300)
