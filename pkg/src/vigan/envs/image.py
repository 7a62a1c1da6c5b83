"""Frame utilities: bilinear crop/resize, camera-shake noise, PPM files.

Frames are ``(H, W, C)`` uint8 arrays, channels interleaved row-major.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np


class PpmError(ValueError):
    pass


def to_u8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and saturate to [0, 255]."""
    return np.clip(np.floor(np.asarray(values) + 0.5), 0, 255).astype(np.uint8)


def _axis_samples(start: int, length: int, out: int):
    # pixel-centre mapping; clamped so samples never leave the crop
    pos = start + (np.arange(out) + 0.5) * length / out - 0.5
    pos = np.clip(pos, start, start + length - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, start + length - 1)
    return lo, hi, pos - lo


def resize_and_crop(frame: np.ndarray, crop_rect, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of ``crop_rect = (x, y, w, h)`` to ``out_w`` x ``out_h``."""
    h_img, w_img = frame.shape[:2]
    x, y, w, h = (int(v) for v in crop_rect)
    if w <= 0 or h <= 0:
        raise ValueError(f"empty crop rectangle {crop_rect}")
    if x < 0 or y < 0 or x + w > w_img or y + h > h_img:
        raise ValueError(f"crop rectangle {crop_rect} outside {w_img}x{h_img} frame")
    x0, x1, fx = _axis_samples(x, w, out_w)
    y0, y1, fy = _axis_samples(y, h, out_h)
    img = frame.astype(np.float64)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return to_u8(top * (1 - fy) + bottom * fy)


def crop_shake(frame: np.ndarray, max_frac: float, rng: np.random.Generator) -> np.ndarray:
    """Crop a random 0..max_frac share from each side, then resize back."""
    if not 0.0 <= max_frac <= 0.25:
        raise ValueError(f"max_frac {max_frac} outside [0, 0.25]")
    h, w = frame.shape[:2]
    left, right, top, bottom = rng.uniform(0.0, max_frac, size=4)
    cl, cr = math.floor(left * w), math.floor(right * w)
    ct, cb = math.floor(top * h), math.floor(bottom * h)
    if cl == cr == ct == cb == 0:
        return frame.copy()
    return resize_and_crop(frame, (cl, ct, w - cl - cr, h - ct - cb), w, h)


def crop_shake_batch(frames: np.ndarray, max_frac: float, rng: np.random.Generator) -> np.ndarray:
    if max_frac == 0.0:
        return frames.copy()
    return np.stack([crop_shake(f, max_frac, rng) for f in frames])


def write_ppm(path, frame: np.ndarray) -> None:
    """Binary P6; single-channel frames are replicated to grey RGB."""
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = np.repeat(frame, 3, axis=2)
    h, w = frame.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + frame.astype(np.uint8).tobytes())


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P6":
        raise PpmError(f"{path}: malformed header, expected P6 magic, got {blob[:2]!r}")
    pos, fields = 2, []
    for _ in range(3):
        m = _TOKEN.match(blob, pos)
        if m is None or not m.group(1).isdigit():
            raise PpmError(f"{path}: malformed header near byte {pos}")
        fields.append(int(m.group(1)))
        pos = m.end()
    w, h, maxval = fields
    if maxval != 255:
        raise PpmError(f"{path}: malformed header, only maxval 255 is supported (got {maxval})")
    pos += 1  # single whitespace byte before the raster
    raster = blob[pos:]
    if len(raster) != w * h * 3:
        raise PpmError(f"{path}: raster has {len(raster)} bytes, header promises {w * h * 3}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def to_grey(frame: np.ndarray) -> np.ndarray:
    """Luma of an RGB frame; exact for frames whose channels are equal."""
    rgb = frame.astype(np.float64)
    return to_u8(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])[..., None]
