"""Automatic threshold selection by isolation voting and value at risk.

The idea: binarize a residual map at threshold ``t`` and look at 3x3
patches whose center is marked (``r >= t``) together with at most one
neighbor.  Such nearly-isolated responses are what image noise produces,
so the per-threshold count of them, the *threshold histogram* ``H(t)``,
measures how noisy a given threshold would be.  Each pixel contributes to
``H`` over a contiguous interval of thresholds, which makes the whole
histogram buildable in one linear pass ("voting").

The automatic threshold starts from a floor (a residual quantile, a hard
minimum, and the right edge of the densest half of the histogram) and
walks upward until an 11-bin window of ``H`` drops below a noise-rate
budget.  Value at risk and conditional value at risk over discrete
histograms are provided for reporting which quantile that threshold
corresponds to.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BINS = 256

_NEIGHBOR_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


@dataclass(frozen=True)
class ThresholdConfig:
    """Tuning knobs of the automatic threshold."""

    noise_rate: float = 0.0025       # tolerated fraction of nearly-isolated responses
    hard_threshold: int = 25         # global hard lower bound
    scan_halfwidth: int = 5          # half-width of the histogram window during the scan

    def __post_init__(self):
        if not 0.0 < self.noise_rate < 1.0:
            raise ValueError(f"noise_rate must be in (0, 1), got {self.noise_rate}")
        if not 0 <= self.hard_threshold <= 255:
            raise ValueError(f"hard_threshold must be in [0, 255], got {self.hard_threshold}")
        if self.scan_halfwidth < 0:
            raise ValueError("scan_halfwidth must be non-negative")


def vote_range(center: int, neighbors: Sequence[int]) -> tuple[int, int] | None:
    """Threshold interval for which a patch shows a 1-or-2-marked pattern.

    ``neighbors`` are the values around the center in its (possibly
    border-clipped) 3x3 window.  The pattern "center marked, at most one
    neighbor marked" appears exactly for thresholds in
    ``[second_largest_neighbor + 1, center]``; returns None when that
    interval is empty.  With fewer than two neighbors the second-largest
    is taken as -1, so the interval starts at 0.
    """
    if len(neighbors) >= 2:
        top2 = sorted(neighbors)[-2]
    else:
        top2 = -1
    lo = top2 + 1
    hi = int(center)
    if lo > hi:
        return None
    return lo, hi


def _second_largest_neighbor(rmap: np.ndarray) -> np.ndarray:
    # Missing neighbors beyond the border behave as -1, which matches the
    # fewer-than-two-neighbors rule of vote_range.
    padded = np.pad(rmap.astype(np.int16), 1, constant_values=-1)
    h, w = rmap.shape
    largest = np.full((h, w), -1, dtype=np.int16)
    second = np.full((h, w), -1, dtype=np.int16)
    for dy, dx in _NEIGHBOR_OFFSETS:
        v = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        second = np.maximum(second, np.minimum(largest, v))
        largest = np.maximum(largest, v)
    return second


def histogram_of_thresholds(rmap: np.ndarray) -> np.ndarray:
    """Build the 256-bin threshold histogram of a residual map by voting.

    Equivalent (and tested against) the direct definition: ``H(t)`` is the
    number of pixels with ``r >= t`` and at most one neighbor ``>= t``.
    """
    rmap = np.asarray(rmap)
    lo = _second_largest_neighbor(rmap).astype(np.int64) + 1
    hi = rmap.astype(np.int64)
    valid = lo <= hi
    # Difference-array accumulation of the per-pixel vote intervals.
    diff = np.zeros(BINS + 1, dtype=np.int64)
    np.add.at(diff, lo[valid], 1)
    np.add.at(diff, hi[valid] + 1, -1)
    return np.cumsum(diff)[:BINS]


def residual_histogram(rmap: np.ndarray) -> np.ndarray:
    """256-bin histogram of residual values."""
    return np.bincount(np.asarray(rmap).reshape(-1), minlength=BINS).astype(np.int64)


def value_at_risk(hist: np.ndarray, alpha: float) -> int:
    """Smallest bin whose cumulative probability reaches ``alpha``."""
    hist = np.asarray(hist, dtype=np.int64)
    total = int(hist.sum())
    if total <= 0:
        raise ValueError("empty histogram")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    cum = np.cumsum(hist)
    return int(np.searchsorted(cum, alpha * total, side="left"))


def conditional_value_at_risk(hist: np.ndarray, alpha: float) -> float:
    """Mean of the histogram conditioned on values at or above the VaR."""
    hist = np.asarray(hist, dtype=np.int64)
    v = value_at_risk(hist, alpha)
    tail = hist[v:]
    weight = tail.sum()
    xs = np.arange(v, len(hist), dtype=np.float64)
    return float((xs * tail).sum() / weight)


def alpha_of_threshold(rhist: np.ndarray, t: int) -> float:
    """Fraction of residuals strictly below ``t``."""
    rhist = np.asarray(rhist, dtype=np.int64)
    total = int(rhist.sum())
    if total <= 0:
        raise ValueError("empty histogram")
    if not 0 <= t <= BINS:
        raise ValueError(f"threshold out of range: {t}")
    return float(rhist[:t].sum() / total)


def smallest_half_interval(hist: np.ndarray) -> tuple[int, int]:
    """Shortest bin interval holding at least half the histogram mass.

    Ties go to the smallest left edge; an empty histogram yields (0, 0).
    """
    hist = np.asarray(hist, dtype=np.int64)
    total = int(hist.sum())
    if total == 0:
        return 0, 0
    n = len(hist)
    best: tuple[int, int, int] | None = None  # (length, left, right)
    right = -1
    window = 0
    for left in range(n):
        while 2 * window < total and right < n - 1:
            right += 1
            window += int(hist[right])
        if 2 * window < total:
            break
        cand = (right - left, left, right)
        if best is None or cand[0] < best[0]:
            best = cand
        window -= int(hist[left])
    assert best is not None
    return best[1], best[2]


def two_thirds_floor(rmap: np.ndarray) -> int:
    """One above the residual value covering two thirds of the pixels."""
    flat = np.asarray(rmap).reshape(-1)
    n = flat.size
    if n == 0:
        raise ValueError("empty residual map")
    k = (2 * n + 2) // 3  # ceil(2n/3), 1-based rank
    q = int(np.partition(flat, k - 1)[k - 1])
    return min(q + 1, 255)


def threshold_from_histogram(
    hist: np.ndarray, floor: int, n_pixels: int, cfg: ThresholdConfig = ThresholdConfig()
) -> int:
    """Scan phase of the automatic threshold, starting from its lower bounds.

    The start is ``max(floor, hard_threshold, right edge of the smallest
    half interval)``; the scan returns the first ``t`` whose clipped
    window ``[t - hw, t + hw]`` stays within the noise budget, or 255.
    """
    hist = np.asarray(hist, dtype=np.int64)
    limit = cfg.noise_rate * n_pixels
    m_right = smallest_half_interval(hist)[1]
    t = max(int(floor), cfg.hard_threshold, m_right)
    hw = cfg.scan_halfwidth
    while t <= 255:
        lo = max(0, t - hw)
        hi = min(255, t + hw)
        if np.all(hist[lo : hi + 1] <= limit):
            return t
        t += 1
    return 255


def var_threshold(rmap: np.ndarray, cfg: ThresholdConfig = ThresholdConfig()) -> int:
    """Automatic threshold for a residual map."""
    rmap = np.asarray(rmap)
    if rmap.size == 0:
        raise ValueError("empty residual map")
    hist = histogram_of_thresholds(rmap)
    return threshold_from_histogram(hist, two_thirds_floor(rmap), rmap.size, cfg)


def apply_threshold(rmap: np.ndarray, t: int) -> np.ndarray:
    """Boolean foreground mask: residual at or above the threshold."""
    return np.asarray(rmap) >= t


def write_histogram_csv(path, threshold_hist: np.ndarray, residual_hist: np.ndarray | None = None) -> None:
    """Dump histogram bins as CSV rows (threshold, counts) for offline plots."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if residual_hist is None:
            writer.writerow(["t", "votes"])
            for t, c in enumerate(threshold_hist):
                writer.writerow([t, int(c)])
        else:
            writer.writerow(["t", "votes", "residuals"])
            for t, (c, r) in enumerate(zip(threshold_hist, residual_hist)):
                writer.writerow([t, int(c), int(r)])
