"""Raw RGB pixel buffers and the PNG decode/encode seam.

All embedders and the mock generator operate on :class:`ImagePixels`,
a plain height x width x 3 uint8 array wrapper. Decoding goes through
Pillow; everything downstream is numpy only.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


class DecodeError(Exception):
    """File bytes could not be decoded as an image."""


@dataclass(frozen=True)
class ImagePixels:
    """An RGB raster: `data` has shape (height, width, 3), dtype uint8."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.data.dtype != np.uint8:
            raise ValueError(f"pixel buffer must be uint8, got {self.data.dtype}")

    @classmethod
    def from_array(cls, data: np.ndarray) -> "ImagePixels":
        data = np.ascontiguousarray(data, dtype=np.uint8)
        h, w = data.shape[:2]
        return cls(width=w, height=h, data=data)

    def luminance(self) -> np.ndarray:
        """Per-pixel luma in [0, 1], ITU-R BT.601 weights."""
        rgb = self.data.astype(np.float64)
        lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        return lum / 255.0


def decode_image(raw: bytes) -> ImagePixels:
    """Decode PNG or JPEG bytes to RGB pixels.

    Raises DecodeError on anything Pillow cannot parse.
    """
    try:
        with Image.open(io.BytesIO(raw)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(str(exc)) from exc
    return ImagePixels.from_array(arr)


def decode_file(path) -> ImagePixels:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def encode_png(pixels: ImagePixels) -> bytes:
    img = Image.fromarray(pixels.data, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
