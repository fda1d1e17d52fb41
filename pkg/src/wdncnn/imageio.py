"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit.

Images live in memory as float64 arrays of shape (C, H, W) with
intensities in [0, 1] (pixel / 255).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DomainError

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DomainError("truncated PNM header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_image(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DomainError(f"{path}: unsupported image format {magic!r} (need binary PGM/PPM)")
    width, height, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise DomainError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    if len(data) - offset < n:
        raise DomainError(f"{path}: raster shorter than {width}x{height}x{channels}")
    raster = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    img = raster.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64)
    return img / 255.0 if maxval == 255 else img / maxval


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a (C, H, W) or (H, W) image in [0, 1]; values are clipped and rounded to 8 bits."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DomainError(f"cannot write image of shape {image.shape}")
    c, h, w = image.shape
    magic = b"P5" if c == 1 else b"P6"
    raster = to_uint8(image).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(b"%s\n%d %d\n255\n" % (magic, w, h) + raster)


def list_images(directory: str | os.PathLike) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
