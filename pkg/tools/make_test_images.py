"""Regenerate the PGM/PPM fixtures in tests/data/images from scikit-image samples (dev only)."""

from pathlib import Path

import numpy as np
from skimage import color, data

ROOT = Path(__file__).resolve().parents[1] / "tests" / "data" / "images"


def _gray(img):
    if img.ndim == 3:
        img = (color.rgb2gray(img) * 255.0).round()
    return np.asarray(img, dtype=np.float64)


def _halve(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return img.reshape(h // 2, 2, w // 2, 2, *img.shape[2:]).mean(axis=(1, 3))


def _center(img, size):
    top = (img.shape[0] - size) // 2
    left = (img.shape[1] - size) // 2
    return img[top : top + size, left : left + size]


def _save(path, img):
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    magic = b"P5" if img.ndim == 2 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.shape[1], img.shape[0])
    path.write_bytes(header + img.tobytes())


def main():
    for name in ("camera", "astronaut", "coffee", "chelsea"):
        _save(ROOT / "train" / f"{name}.pgm", _center(_halve(_gray(getattr(data, name)())), 144))
    for name in ("coins", "rocket"):
        _save(ROOT / "heldout" / f"{name}.pgm", _center(_halve(_gray(getattr(data, name)())), 96))
    _save(ROOT / "color" / "astronaut.ppm", _center(_halve(data.astronaut().astype(np.float64)), 96))
    _save(ROOT / "camera256.pgm", _halve(_gray(data.camera())))


if __name__ == "__main__":
    main()
