"""8-bit RGB PNG reading and writing (Pillow-backed, no alpha)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .rasterize import RenderedImage


class ImageDecodeError(ValueError):
    """File is missing, not a decodable image, or has zero size."""


def save_png(image: RenderedImage | np.ndarray, path: str | Path) -> None:
    pixels = image.pixels if isinstance(image, RenderedImage) else np.asarray(image)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) uint8 pixels, got {pixels.dtype} {pixels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Decode any Pillow-readable image to (h, w, 3) uint8 RGB."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise ImageDecodeError(f"no such image: {path}") from exc
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageDecodeError(f"zero-size image: {path}")
    return arr
