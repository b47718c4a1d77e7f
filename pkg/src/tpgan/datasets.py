"""Dataset sources: a procedural garment-silhouette set and an IDX reader.

The procedural set stands in for the three-class MNIST-fashion subset
(T-shirt / Pullover / Dress) when the real files are not available. Class
parameters overlap on purpose so the task is not linearly trivial.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .data import ImageSet, normalize_uint8, resize_images
from .errors import DataError

FASHION_CLASSES = (
    "T-shirt", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot",
)
GARMENT_CLASSES = ("T-shirt", "Pullover", "Dress")

_CANVAS = 28
_SUPER = 4


def _garment_polygons(kind: int, rng: np.random.Generator) -> list[list[tuple[float, float]]]:
    """Polygons in unit coordinates for one garment of the given kind."""
    cx = 0.5 + rng.uniform(-0.04, 0.04)
    top = rng.uniform(0.12, 0.2)
    polys = []
    if kind in (0, 1):
        half = rng.uniform(0.17, 0.25)
        bottom = rng.uniform(0.82, 0.92)
        flare = rng.uniform(-0.02, 0.04)
        polys.append([(cx - half, top), (cx + half, top),
                      (cx + half + flare, bottom), (cx - half - flare, bottom)])
        # sleeve length overlaps between the two upper-body classes
        if kind == 0:
            length = rng.uniform(0.14, 0.42)
            angle = rng.uniform(0.55, 1.0)
        else:
            length = rng.uniform(0.34, 0.7)
            angle = rng.uniform(0.2, 0.6)
        width = rng.uniform(0.09, 0.15)
        for side in (-1, 1):
            sx, sy = cx + side * half, top
            dx, dy = side * np.cos(angle) * length, np.sin(angle) * length + 0.08
            nx, ny = -np.sin(angle) * width * side, np.cos(angle) * width
            polys.append([(sx, sy), (sx + dx, sy + dy), (sx + dx + nx * 0.2, sy + dy + ny),
                          (sx, sy + width + 0.06)])
    else:
        half_top = rng.uniform(0.1, 0.17)
        half_bottom = rng.uniform(0.2, 0.34)
        waist = rng.uniform(0.35, 0.5)
        bottom = rng.uniform(0.88, 0.97)
        half_waist = half_top * rng.uniform(0.8, 1.05)
        polys.append([(cx - half_top, top), (cx + half_top, top),
                      (cx + half_waist, waist), (cx + half_bottom, bottom),
                      (cx - half_bottom, bottom), (cx - half_waist, waist)])
        if rng.random() < 0.4:
            length = rng.uniform(0.08, 0.2)
            for side in (-1, 1):
                sx = cx + side * half_top
                polys.append([(sx, top), (sx + side * length, top + length * 0.7),
                              (sx + side * length * 0.7, top + length), (sx, top + 0.12)])
    return polys


def render_garment(kind: int, rng: np.random.Generator) -> np.ndarray:
    """Render one 28x28 uint8 garment image."""
    size = _CANVAS * _SUPER
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    shade = int(rng.uniform(110, 250))
    for poly in _garment_polygons(kind, rng):
        draw.polygon([(x * size, y * size) for x, y in poly], fill=shade)
    neck = rng.uniform(0.04, 0.08) * size
    ncx, ncy = 0.5 * size, rng.uniform(0.1, 0.17) * size
    draw.ellipse([ncx - neck, ncy - neck, ncx + neck, ncy + neck], fill=0)
    canvas = canvas.rotate(rng.uniform(-8, 8), resample=Image.BILINEAR,
                           translate=(rng.uniform(-6, 6), rng.uniform(-6, 6)))
    canvas = canvas.filter(ImageFilter.GaussianBlur(rng.uniform(0.5, 3.0)))
    img = np.asarray(canvas.resize((_CANVAS, _CANVAS), Image.LANCZOS), dtype=np.float32)
    mask = img > 8
    # fabric texture: stripes of random frequency and phase
    yy, xx = np.mgrid[0:_CANVAS, 0:_CANVAS]
    freq, phase, theta = rng.uniform(0.3, 1.4), rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi)
    stripes = np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    img = img * (1.0 + rng.uniform(0.0, 0.35) * stripes * mask)
    img += rng.normal(0.0, 14.0, img.shape) * mask
    img += rng.normal(0.0, 6.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def synthetic_garments(per_class: int = 1000, seed: int = 0, size: int = 28) -> ImageSet:
    """Three-class garment set (T-shirt, Pullover, Dress), ``per_class`` images each."""
    rng = np.random.default_rng(seed)
    pixels = np.empty((3 * per_class, _CANVAS, _CANVAS, 1), dtype=np.uint8)
    labels = np.repeat(np.arange(3), per_class)
    for i, kind in enumerate(labels):
        pixels[i, ..., 0] = render_garment(int(kind), rng)
    images = normalize_uint8(pixels)
    if size != _CANVAS:
        images = resize_images(images, size)
    return ImageSet(images, labels, 3, class_names=GARMENT_CLASSES)


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise DataError(f"{path} is not an unsigned-byte IDX file")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def load_idx_dataset(images_path: str | Path, labels_path: str | Path, size: int = 28,
                     class_names=FASHION_CLASSES) -> ImageSet:
    """Read an IDX image/label pair (the MNIST / Fashion-MNIST distribution format)."""
    pixels = _read_idx(Path(images_path))
    labels = _read_idx(Path(labels_path)).astype(np.int64)
    if len(pixels) != len(labels):
        raise DataError("IDX image and label counts differ")
    images = normalize_uint8(pixels[..., None] if pixels.ndim == 3 else pixels)
    if size != images.shape[1]:
        images = resize_images(images, size)
    return ImageSet(images, labels, max(int(labels.max()) + 1, len(class_names)),
                    class_names=tuple(class_names))
