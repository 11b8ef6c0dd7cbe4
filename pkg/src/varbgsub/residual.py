"""Residual maps between a frame and a batch of reconstructed backgrounds.

The residual at a pixel is the smallest absolute intensity difference
between that pixel and any background value in a small spatial window
around it, taken over every background in the batch.  Windows are clipped
at the image border rather than padded, so border residuals are minima
over fewer candidates and never spuriously small.
"""

from __future__ import annotations

import numpy as np

from . import imgio


def residual_map(current: np.ndarray, backgrounds: np.ndarray, vicinity: int = 3) -> np.ndarray:
    """Per-pixel minimum |current - background| over a vicinity window.

    ``backgrounds`` is a ``(channels, h, w)`` uint8 stack; ``vicinity`` is
    the odd window side (1 compares same-position pixels only).
    """
    current = np.asarray(current)
    backgrounds = np.asarray(backgrounds)
    if backgrounds.ndim == 2:
        backgrounds = backgrounds[None]
    if vicinity < 1 or vicinity % 2 == 0:
        raise ValueError(f"vicinity must be odd and positive, got {vicinity}")
    if backgrounds.shape[1:] != current.shape:
        raise ValueError(
            f"dimension mismatch: frame {current.shape}, backgrounds {backgrounds.shape[1:]}"
        )
    h, w = current.shape
    reach = vicinity // 2
    cur = current.astype(np.int16)
    best = np.full((h, w), 255, dtype=np.int16)
    for bg in backgrounds.astype(np.int16):
        for dy in range(-reach, reach + 1):
            ys = slice(max(0, -dy), h - max(0, dy))
            ybg = slice(max(0, dy), h + min(0, dy))
            for dx in range(-reach, reach + 1):
                xs = slice(max(0, -dx), w - max(0, dx))
                xbg = slice(max(0, dx), w + min(0, dx))
                diff = np.abs(cur[ys, xs] - bg[ybg, xbg])
                np.minimum(best[ys, xs], diff, out=best[ys, xs])
    return best.astype(np.uint8)


def write_residual_pgm(path, rmap: np.ndarray) -> None:
    """Debug dump of a residual map as PGM."""
    imgio.write_pgm(path, rmap)
