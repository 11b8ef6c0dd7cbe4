"""Frame I/O and pixel-domain conversions.

Conventions used across the package:

- A *frame* is an 8-bit grayscale image: ``numpy`` array of shape
  ``(height, width)``, dtype ``uint8``.
- A *normalized tensor* is the float counterpart fed to the network:
  shape ``(channels, height, width)``, values in ``[-0.5, 0.5]``.

Binary PGM (``P5``, maxval 255) is the bit-exact interchange format for
masks and debug dumps.  PNG/JPEG ingestion goes through Pillow and is
restricted to 8-bit grayscale and RGB; RGB is collapsed to luma on load.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# ITU-R BT.601 luma weights
_LUMA_R = 0.299
_LUMA_G = 0.587
_LUMA_B = 0.114


class ImageDecodeError(ValueError):
    """Raised when an input image cannot be decoded under the supported formats."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


def to_grayscale(r: int, g: int, b: int) -> int:
    """Convert one RGB triple in [0, 255] to a luma value, rounding half up."""
    y = int(_LUMA_R * r + _LUMA_G * g + _LUMA_B * b + 0.5)
    return min(max(y, 0), 255)


def rgb_to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Vectorized luma conversion of an ``(h, w, 3)`` uint8 array."""
    y = _LUMA_R * rgb[..., 0] + _LUMA_G * rgb[..., 1] + _LUMA_B * rgb[..., 2]
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def _parse_pgm(data: bytes, path) -> np.ndarray:
    # Header: "P5" <width> <height> <maxval>, tokens separated by whitespace,
    # then a single whitespace byte followed by the raw payload.
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageDecodeError(path, "malformed image: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ImageDecodeError(path, "malformed image: not a binary PGM (P5)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageDecodeError(path, "malformed image: non-numeric PGM header") from None
    if width < 1 or height < 1:
        raise ImageDecodeError(path, "malformed image: non-positive dimensions")
    if maxval != 255:
        raise ImageDecodeError(path, f"unsupported bit depth: maxval {maxval}")
    payload = data[pos + 1 : pos + 1 + width * height]
    if len(payload) != width * height:
        raise ImageDecodeError(path, "malformed image: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def load_frame(path) -> np.ndarray:
    """Load a grayscale frame from a PGM, PNG, or JPEG file.

    RGB inputs are converted to luma; anything that is not 8 bits per
    channel is rejected.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageDecodeError(path, f"unreadable file: {exc}") from exc
    if data[:2] == b"P5":
        return _parse_pgm(data, path)
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(path, f"malformed image: {exc}") from exc
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if img.mode == "RGB":
        return rgb_to_grayscale(np.asarray(img, dtype=np.uint8))
    raise ImageDecodeError(path, f"unsupported bit depth or mode: {img.mode}")


def write_pgm(path, frame: np.ndarray) -> None:
    """Write a frame as binary PGM, maxval 255."""
    frame = np.ascontiguousarray(frame, dtype=np.uint8)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-d frame, got shape {frame.shape}")
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def write_mask_pgm(path, mask: np.ndarray) -> None:
    """Write a boolean mask as a {0, 255} PGM."""
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    # Half-pixel-center source mapping, clamped to the valid coordinate range.
    scale = n_in / n_out
    return np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1.0)


def _axis_samples(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = _source_coords(n_in, n_out)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a 2-d float array (half-pixel centers, clamped)."""
    h, w = values.shape
    y0, y1, fy = _axis_samples(h, out_h)
    x0, x1, fx = _axis_samples(w, out_w)
    v = values.astype(np.float64, copy=False)
    top = v[np.ix_(y0, x0)] * (1 - fx) + v[np.ix_(y0, x1)] * fx
    bot = v[np.ix_(y1, x0)] * (1 - fx) + v[np.ix_(y1, x1)] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def resize(frame: np.ndarray, out_w: int, out_h: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a frame; bilinear for intensity images, nearest for masks.

    Returns the input bytes unchanged when the target equals the source size.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"invalid target size {out_w}x{out_h}")
    h, w = frame.shape
    if (out_w, out_h) == (w, h):
        return frame.copy()
    if mode == "bilinear":
        vals = bilinear_resize(frame.astype(np.float64), out_h, out_w)
        return np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
    if mode == "nearest":
        ys = np.clip(np.floor(_source_coords(h, out_h) + 0.5), 0, h - 1).astype(np.intp)
        xs = np.clip(np.floor(_source_coords(w, out_w) + 0.5), 0, w - 1).astype(np.intp)
        return frame[np.ix_(ys, xs)].copy()
    raise ValueError(f"unknown resize mode: {mode!r}")


def normalize(frame: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map byte intensities to ``[-0.5, 0.5]``; returns a 1-channel tensor."""
    t = frame.astype(dtype) / dtype(255) - dtype(0.5)
    return t[None, :, :]


def denormalize(tensor: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`: back to uint8, rounding half up, clamped."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim == 3:
        if t.shape[0] != 1:
            raise ValueError(f"expected a single channel, got {t.shape[0]}")
        t = t[0]
    v = np.floor((t + 0.5) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)
