"""Synthetic salient-blob images on textured backgrounds, with exact masks."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .imaging import save_gray


def _texture(rng, h, w, base):
    fine = ndimage.gaussian_filter(rng.standard_normal((h, w, 3)), (1.5, 1.5, 0))
    fine /= np.abs(fine).max() + 1e-12
    # large smooth blotches give the segmentation several background regions
    coarse = ndimage.gaussian_filter(rng.standard_normal((h, w, 3)), (9.0, 9.0, 0))
    coarse /= np.abs(coarse).max() + 1e-12
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    ramp = 0.1 * (rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx)
    return base + 0.1 * fine + 0.22 * coarse + ramp[..., None]


def _ellipse(rng, h, w, yy, xx, size, centre):
    ry = rng.uniform(*size) * h
    rx = rng.uniform(*size) * w
    cy = rng.uniform(*centre) * h
    cx = rng.uniform(*centre) * w
    ang = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(ang) + dy * np.sin(ang)
    v = -dx * np.sin(ang) + dy * np.cos(ang)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def blob_image(rng: np.random.Generator, shape=(120, 160), max_blobs: int = 2):
    """One RGB image in ``[0, 1]`` and its binary mask.

    The background is a muted, low-frequency texture; each blob is an
    ellipse in a saturated colour placed away from the border.
    """
    h, w = shape
    bg_base = rng.uniform(0.3, 0.6, size=3)
    img = _texture(rng, h, w, bg_base)
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    # low-contrast distractors near the border
    for _ in range(int(rng.integers(1, 4))):
        dis = _ellipse(rng, h, w, yy, xx, (0.08, 0.18), (0.0, 1.0))
        img[dis] += rng.uniform(-0.15, 0.15, size=3)
    for _ in range(int(rng.integers(1, max_blobs + 1))):
        blob = _ellipse(rng, h, w, yy, xx, (0.12, 0.22), (0.3, 0.7))
        # saturated colour far from the background mean
        colour = np.where(bg_base > 0.45, rng.uniform(0.0, 0.15, 3), rng.uniform(0.85, 1.0, 3))
        colour[rng.integers(3)] = rng.uniform(0.0, 1.0)
        img[blob] = colour + 0.04 * rng.standard_normal((blob.sum(), 3))
        mask |= blob
    return np.clip(img, 0.0, 1.0), mask.astype(np.float64)


def blob_dataset(n: int, seed: int = 0, shape=(120, 160)) -> list:
    """``n`` (image, mask) pairs; image ``i`` depends only on ``(seed, i)``."""
    return [blob_image(np.random.default_rng([seed, i]), shape) for i in range(n)]


def write_dataset(root, pairs, prefix: str = "img") -> list:
    """Write ``images/<stem>.png`` and ``masks/<stem>.png`` under ``root``; returns the stems."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    stems = []
    for i, (img, mask) in enumerate(pairs):
        stem = f"{prefix}{i:03d}"
        PILImage.fromarray(np.round(img * 255).astype(np.uint8), mode="RGB").save(
            root / "images" / f"{stem}.png")
        save_gray(root / "masks" / f"{stem}.png", mask)
        stems.append(stem)
    return stems
