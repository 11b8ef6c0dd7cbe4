"""Block-matching optical flow and motion-based loss weights.

The estimator is a coarse-to-fine pyramid: each level runs an integer SAD
search over 8x8 blocks (stride 4, radius 4) seeded by the upsampled
coarser-level field, and the per-block winners are bilinearly spread to a
per-pixel velocity field.  Ties in the search always resolve toward the
smallest displacement, so identical or textureless frames yield an exactly
zero field.

Weights follow ``exp(-v^2 / (2 m))`` with ``m`` the median squared
velocity over the image: fast pixels approach 0, static pixels stay at 1,
and a fully static scene (``m = 0``) is not down-weighted at all.

Any callable ``(prev, cur) -> FlowField`` can stand in for the estimator,
which keeps the weight path open to external flow sources or precomputed
motion masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgio


@dataclass(frozen=True)
class FlowConfig:
    block_size: int = 8
    stride: int = 4
    search_radius: int = 4
    min_side: int = 16       # stop building pyramid levels below this side length


@dataclass
class FlowField:
    """Per-pixel displacement in pixels; ``u`` horizontal, ``v`` vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape:
            raise ValueError(f"u/v shape mismatch: {self.u.shape} vs {self.v.shape}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("velocity field contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def squared_speed(self) -> np.ndarray:
        return self.u * self.u + self.v * self.v


def _blur(img: np.ndarray) -> np.ndarray:
    # Separable 5-tap binomial filter with reflected borders.
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    p = np.pad(img.astype(np.float64), 2, mode="reflect")
    tmp = sum(kernel[i] * p[:, i : i + img.shape[1]] for i in range(5))
    out = sum(kernel[i] * tmp[i : i + img.shape[0], :] for i in range(5))
    return out


def _downsample(img: np.ndarray) -> np.ndarray:
    sm = _blur(img)
    return np.clip(np.floor(sm[::2, ::2] + 0.5), 0, 255).astype(np.uint8)


def _pyramid(img: np.ndarray, min_side: int) -> list[np.ndarray]:
    levels = [img]
    while min(levels[-1].shape) // 2 >= min_side:
        levels.append(_downsample(levels[-1]))
    return levels


def _block_anchors(n: int, block: int, stride: int) -> np.ndarray:
    if n <= block:
        return np.array([0])
    anchors = list(range(0, n - block + 1, stride))
    if anchors[-1] != n - block:
        anchors.append(n - block)  # flush block keeps the far border covered
    return np.array(anchors)


def _block_sad(prev: np.ndarray, cur: np.ndarray, disp: tuple[int, int],
               block: int, ay: np.ndarray, ax: np.ndarray):
    """SAD of every block of ``cur`` against ``prev`` shifted by ``disp``.

    Returns (sad grid, validity grid); a block is invalid when its matched
    window leaves the previous frame.
    """
    dv, du = disp
    h, w = cur.shape
    y_lo, y_hi = max(0, dv), h + min(0, dv)
    x_lo, x_hi = max(0, du), w + min(0, du)
    n_by, n_bx = len(ay), len(ax)
    sad = np.zeros((n_by, n_bx), dtype=np.int64)
    valid = (
        (ay >= y_lo)[:, None]
        & (ay + block <= y_hi)[:, None]
        & (ax >= x_lo)[None, :]
        & (ax + block <= x_hi)[None, :]
    )
    if y_hi - y_lo < block or x_hi - x_lo < block or not valid.any():
        return sad, np.zeros((n_by, n_bx), dtype=bool)
    d = np.abs(
        cur[y_lo:y_hi, x_lo:x_hi].astype(np.int32)
        - prev[y_lo - dv : y_hi - dv, x_lo - du : x_hi - du].astype(np.int32)
    )
    integral = np.zeros((d.shape[0] + 1, d.shape[1] + 1), dtype=np.int64)
    integral[1:, 1:] = d.cumsum(0).cumsum(1)
    by = np.clip(ay - y_lo, 0, None)[:, None]
    bx = np.clip(ax - x_lo, 0, None)[None, :]
    sad = (
        integral[by + block, bx + block]
        - integral[by, bx + block]
        - integral[by + block, bx]
        + integral[by, bx]
    )
    return sad, valid


def _interp_from_grid(vals: np.ndarray, cy: np.ndarray, cx: np.ndarray,
                      h: int, w: int) -> np.ndarray:
    """Bilinear spread of block-center values to a per-pixel map.

    Pixels beyond the outermost centers take the edge value (constant
    extrapolation).
    """
    fy = np.interp(np.arange(h), cy, np.arange(len(cy), dtype=np.float64))
    fx = np.interp(np.arange(w), cx, np.arange(len(cx), dtype=np.float64))
    y0 = np.minimum(np.floor(fy).astype(np.intp), max(len(cy) - 2, 0))
    x0 = np.minimum(np.floor(fx).astype(np.intp), max(len(cx) - 2, 0))
    y1 = np.minimum(y0 + 1, len(cy) - 1)
    x1 = np.minimum(x0 + 1, len(cx) - 1)
    ty = (fy - y0)[:, None]
    tx = (fx - x0)[None, :]
    top = vals[np.ix_(y0, x0)] * (1 - tx) + vals[np.ix_(y0, x1)] * tx
    bot = vals[np.ix_(y1, x0)] * (1 - tx) + vals[np.ix_(y1, x1)] * tx
    return top * (1 - ty) + bot * ty


# Lexicographic (sad, |d|^2, dv, du) packed into one int64 so the argmin is a
# single vectorized comparison; the |d|^2 term makes ties resolve toward zero.
_SHIFT_MAG = 1 << 22
_SHIFT_D = 1 << 11


def _pack_score(sad: np.ndarray, dv: int, du: int) -> np.ndarray:
    mag = dv * dv + du * du
    tie = (mag * _SHIFT_D + (dv + 1024)) * _SHIFT_D + (du + 1024)
    return sad * (_SHIFT_MAG * _SHIFT_D * _SHIFT_D) + tie


def _match_level(prev: np.ndarray, cur: np.ndarray, init_u: np.ndarray, init_v: np.ndarray,
                 cfg: FlowConfig) -> tuple[np.ndarray, np.ndarray]:
    """One pyramid level; returns the per-pixel (u, v) field for this level."""
    h, w = cur.shape
    ay = _block_anchors(h, cfg.block_size, cfg.stride)
    ax = _block_anchors(w, cfg.block_size, cfg.stride)
    block = min(cfg.block_size, h, w)
    cy = ay + (block - 1) / 2.0
    cx = ax + (block - 1) / 2.0
    iu = np.floor(init_u[np.ix_(np.clip(cy, 0, h - 1).astype(int), np.clip(cx, 0, w - 1).astype(int))] + 0.5).astype(int)
    iv = np.floor(init_v[np.ix_(np.clip(cy, 0, h - 1).astype(int), np.clip(cx, 0, w - 1).astype(int))] + 0.5).astype(int)

    best_score = np.full((len(ay), len(ax)), np.iinfo(np.int64).max, dtype=np.int64)
    best_u = np.zeros((len(ay), len(ax)), dtype=np.float64)
    best_v = np.zeros((len(ay), len(ax)), dtype=np.float64)
    sad_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    r = cfg.search_radius
    for v0, u0 in sorted({(int(a), int(b)) for a, b in zip(iv.ravel(), iu.ravel())}):
        group = (iv == v0) & (iu == u0)
        for dv in range(v0 - r, v0 + r + 1):
            for du in range(u0 - r, u0 + r + 1):
                key = (dv, du)
                if key not in sad_cache:
                    sad_cache[key] = _block_sad(prev, cur, key, block, ay, ax)
                sad, valid = sad_cache[key]
                score = _pack_score(sad, dv, du)
                take = group & valid & (score < best_score)
                if take.any():
                    best_score[take] = score[take]
                    best_u[take] = du
                    best_v[take] = dv
    u_field = _interp_from_grid(best_u, cy, cx, h, w)
    v_field = _interp_from_grid(best_v, cy, cx, h, w)
    return u_field, v_field


def estimate_flow(prev: np.ndarray, cur: np.ndarray, cfg: FlowConfig = FlowConfig()) -> FlowField:
    """Coarse-to-fine block-matching flow from ``prev`` to ``cur``."""
    prev = np.asarray(prev)
    cur = np.asarray(cur)
    if prev.shape != cur.shape:
        raise ValueError(f"dimension mismatch: {prev.shape} vs {cur.shape}")
    pyr_prev = _pyramid(prev, cfg.min_side)
    pyr_cur = _pyramid(cur, cfg.min_side)
    u = np.zeros(pyr_cur[-1].shape, dtype=np.float64)
    v = np.zeros(pyr_cur[-1].shape, dtype=np.float64)
    for level in range(len(pyr_cur) - 1, -1, -1):
        lh, lw = pyr_cur[level].shape
        if u.shape != (lh, lw):
            u = imgio.bilinear_resize(u, lh, lw) * 2.0
            v = imgio.bilinear_resize(v, lh, lw) * 2.0
        u, v = _match_level(pyr_prev[level], pyr_cur[level], u, v, cfg)
    return FlowField(u=u, v=v)


class BlockMatchingFlow:
    """Default flow provider: a configured :func:`estimate_flow`."""

    def __init__(self, cfg: FlowConfig = FlowConfig()):
        self.cfg = cfg

    def __call__(self, prev: np.ndarray, cur: np.ndarray) -> FlowField:
        return estimate_flow(prev, cur, self.cfg)


def weights_from_flow(field: FlowField) -> np.ndarray:
    """Per-pixel loss weights in (0, 1] from a velocity field.

    The scale is the median squared speed; a zero median (static scene)
    keeps every weight at 1.
    """
    sq = field.squared_speed()
    flat = sq.reshape(-1)
    m = float(np.partition(flat, flat.size // 2)[flat.size // 2])
    if m == 0.0:
        return np.ones_like(sq)
    w = np.exp(-sq / (2.0 * m))
    # exp underflow floor keeps the weights strictly positive
    return np.maximum(w, np.finfo(np.float64).tiny)


def write_weight_pgm(path, weights: np.ndarray) -> None:
    """Debug dump: weights scaled to [0, 255] and rounded."""
    imgio.write_pgm(path, np.floor(np.asarray(weights) * 255.0 + 0.5).astype(np.uint8))
