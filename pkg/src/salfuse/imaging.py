"""Image I/O, colour conversion and Gaussian scale-space construction.

Images are ``(H, W, 3)`` float64 arrays with channels in ``[0, 1]``; grey
maps (per-scale saliency, fused output, ground truth) are ``(H, W)`` float64
arrays in ``[0, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError
from scipy import ndimage
from skimage import color

MIN_SIDE = 16


class ImageFormatError(ValueError):
    """Raised when a file exists but cannot be decoded as an 8-bit raster."""


@dataclass(frozen=True)
class ScaleSpace:
    """Full-resolution Gaussian scale space; ``levels[0]`` is the input."""

    levels: tuple
    sigma: float

    @property
    def M(self) -> int:
        return len(self.levels)

    @property
    def shape(self):
        return self.levels[0].shape[:2]


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if min(img.shape[:2]) < MIN_SIDE:
        raise ValueError(f"image sides must be >= {MIN_SIDE}, got {img.shape[:2]}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image channels must lie in [0, 1]")
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB or greyscale raster as an ``(H, W, 3)`` float image."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("L", "P", "RGBA", "LA", "1"):
                im = im.convert("RGB")
            if im.mode != "RGB":
                raise ImageFormatError(f"{path}: unsupported mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def load_gray(path) -> np.ndarray:
    """Read a raster as a single-channel map in ``[0, 1]`` (ground truth, saved maps)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def save_gray(path, gmap: np.ndarray) -> None:
    """Write a grey map as an 8-bit PNG with value ``round(255 * v)``."""
    v = np.clip(np.asarray(gmap, dtype=np.float64), 0.0, 1.0)
    PILImage.fromarray(np.round(255.0 * v).astype(np.uint8), mode="L").save(path)


def resize_cap(arr: np.ndarray, max_side: int = 400, *, resample=PILImage.BILINEAR) -> np.ndarray:
    """Shrink so that ``max(H, W) <= max_side``, keeping the aspect ratio.

    Arrays already within the cap are returned unchanged.
    """
    h, w = arr.shape[:2]
    if max(h, w) <= max_side:
        return arr
    scale = max_side / max(h, w)
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = PILImage.fromarray(u8).resize((nw, nh), resample=resample)
    return np.asarray(out, dtype=np.float64) / 255.0


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at radius ``ceil(3 sigma)`` and renormalised to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication at the borders.

    Works on both ``(H, W)`` maps and ``(H, W, C)`` images; channels are
    blurred independently.
    """
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def build_scale_space(img: np.ndarray, sigma: float = 1.2, M: int = 4) -> ScaleSpace:
    """Repeatedly blur ``img``; level ``k`` is level ``k-1`` blurred once more."""
    if M < 2:
        raise ValueError("scale space needs at least 2 levels")
    img = check_image(img)
    levels = [img]
    for _ in range(M - 1):
        levels.append(gaussian_blur(levels[-1], sigma))
    return ScaleSpace(levels=tuple(levels), sigma=float(sigma))


# affine map of CIELAB into [0, 1]: L in [0, 100], a/b in [-128, 127]
_LAB_OFFSET = np.array([0.0, 128.0, 128.0])
_LAB_SCALE = np.array([100.0, 255.0, 255.0])


_WHITE_XYZ = color.rgb2xyz(np.ones((1, 1, 3)))[0, 0]


def rgb_to_lab(img: np.ndarray, rescale: bool = True) -> np.ndarray:
    """sRGB -> CIELAB (D65).  With ``rescale`` the channels are mapped to ``[0, 1]``."""
    xyz = color.rgb2xyz(np.asarray(img, dtype=np.float64))
    # normalise by the XYZ of RGB white itself so greys land exactly on a* = b* = 0
    t = xyz / _WHITE_XYZ
    eps = (6.0 / 29.0) ** 3
    f = np.where(t > eps, np.cbrt(t), t / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.stack([116.0 * f[..., 1] - 16.0,
                    500.0 * (f[..., 0] - f[..., 1]),
                    200.0 * (f[..., 1] - f[..., 2])], axis=-1)
    if rescale:
        lab = np.clip((lab + _LAB_OFFSET) / _LAB_SCALE, 0.0, 1.0)
    return lab


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def convert_color(img: np.ndarray, space: str) -> np.ndarray:
    """Convert an RGB image to ``"Lab"`` (rescaled to [0, 1]), ``"HSV"`` or ``"gray"``."""
    key = space.lower()
    if key == "lab":
        return rgb_to_lab(img)
    if key == "hsv":
        return color.rgb2hsv(np.asarray(img, dtype=np.float64))
    if key in ("gray", "grey"):
        return rgb_to_gray(img)
    raise ValueError(f"unknown colour space {space!r}")
