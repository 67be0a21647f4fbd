"""Image file I/O with deterministic PNG encoding."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

MEAN, STD = 0.5, 0.25


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def png_bytes(arr: np.ndarray) -> bytes:
    """Encode without metadata chunks so identical arrays give identical bytes."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(arr)).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def write_png(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(png_bytes(arr))


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return np.asarray(Image.fromarray(img).resize((size, size), Image.BILINEAR), dtype=np.uint8)


def resize_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    if mask.shape == (h, w):
        return mask
    im = Image.fromarray(mask.astype(np.uint8) * 255).resize((w, h), Image.NEAREST)
    return np.asarray(im) > 127


def to_model_input(img: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8 to 3 x H x W float32, normalized."""
    x = img.astype(np.float32).transpose(2, 0, 1) / 255.0
    return (x - MEAN) / STD
