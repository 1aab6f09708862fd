"""PNG and raw float32 image files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

FLOAT_MAGIC = b"ARMSPF32"
_HEADER = struct.Struct("<8sII")


def save_png(path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels)
    arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    """Image in [0, 1]; (H, W, 3) for color files and (H, W) for grayscale."""
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I", "I;16"):
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_float_image(path, pixels: np.ndarray) -> None:
    """Little-endian float32 RGB, row-major, after a 16-byte header."""
    arr = np.asarray(pixels, dtype="<f4")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    h, w = arr.shape[:2]
    Path(path).write_bytes(_HEADER.pack(FLOAT_MAGIC, w, h) + np.ascontiguousarray(arr).tobytes())


def load_float_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated float image")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != FLOAT_MAGIC:
        raise ValueError(f"{path}: not a float image")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != w * h * 3:
        raise ValueError(f"{path}: expected {w}x{h}x3 floats, found {body.size}")
    return body.reshape(h, w, 3).astype(np.float64)
