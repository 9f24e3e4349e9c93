"""Raster helpers: PNG I/O, nearest-neighbour resize, hue rotation."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def load_rgb(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def png_bytes(pixels: np.ndarray) -> bytes:
    """Lossless PNG encoding with fixed settings, so equal pixels give equal bytes."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), "RGB").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def save_png(pixels: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(png_bytes(pixels))


def resize_nearest(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    rows = np.minimum((np.arange(height) + 0.5) * h / height, h - 1).astype(np.intp)
    cols = np.minimum((np.arange(width) + 0.5) * w / width, w - 1).astype(np.intp)
    return pixels[rows[:, None], cols[None, :]]


def shift_hue(pixels: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate hue by ``degrees``, keeping saturation and value."""
    step = int(round(degrees / 360.0 * 256.0)) % 256
    if step == 0:
        return pixels.copy()
    hsv = np.asarray(Image.fromarray(pixels, "RGB").convert("HSV")).copy()
    hsv[..., 0] = (hsv[..., 0].astype(np.int32) + step) % 256
    return np.asarray(Image.fromarray(hsv, "HSV").convert("RGB"), dtype=np.uint8)
