"""Regional descriptors: contrast, backgroundness and property blocks.

Every region at every level is described by a 38-dimensional vector::

    [0:14]   contrast against adjacent regions (area-weighted)
    [14:28]  backgroundness, i.e. the same cues against the border band
    [28:38]  region properties

Both distance blocks share one 14-component layout::

    0:3   |delta mean RGB|      9   chi2 RGB histogram
    3:6   |delta mean Lab|     10   chi2 Lab histogram
    6:9   |delta mean HSV|     11   chi2 HSV histogram
                               12   chi2 uniform-LBP histogram
                               13   L1 texture-response distance / 15

The property block is ``(cx, cy, bbox_w, bbox_h, area_ratio, aspect,
var_L, var_a, var_b, border_contact)``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage
from skimage.color import rgb2hsv
from skimage.feature import local_binary_pattern

from .imaging import rgb_to_gray, rgb_to_lab
from .segmentation import RegionGraph, Segmentation, build_region_graph

N_BINS = 16
N_LBP = 59
N_TEX = 15
N_DIST = 14
N_PROP = 10
FEATURE_DIM = 2 * N_DIST + N_PROP
BORDER_BAND = 15
MAX_ASPECT = 10.0

FEATURE_NAMES = (
    [f"{blk}_{cue}" for blk in ("con", "bg") for cue in (
        "r", "g", "b", "L", "a", "lab_b", "h", "s", "v",
        "chi2_rgb", "chi2_lab", "chi2_hsv", "chi2_lbp", "tex")]
    + ["cx", "cy", "bbox_w", "bbox_h", "area_ratio", "aspect",
       "var_L", "var_a", "var_b", "border_contact"]
)


@dataclass
class RegionStats:
    """Per-region statistics; every field has a leading region axis."""

    mean_rgb: np.ndarray
    mean_lab: np.ndarray
    mean_hsv: np.ndarray
    hist_rgb: np.ndarray
    hist_lab: np.ndarray
    hist_hsv: np.ndarray
    hist_lbp: np.ndarray
    tex_resp: np.ndarray
    centroid: np.ndarray
    bbox: np.ndarray
    area_ratio: np.ndarray
    var_lab: np.ndarray
    border_contact: np.ndarray
    aspect: np.ndarray

    def __len__(self):
        return self.mean_rgb.shape[0]

    def take(self, idx) -> "RegionStats":
        """Sub-select regions (``idx`` may be an int, slice or index array)."""
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return RegionStats(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


# ---------------------------------------------------------------------------
# pixel-level channels


def filter_bank(gray: np.ndarray) -> np.ndarray:
    """15 filter responses: 8 oriented first derivatives, 4 LoG, 3 Gaussians.

    Returns an ``(H, W, 15)`` array.
    """
    h, w = gray.shape
    cap = max(min(h, w) / 6.0, 0.5)
    gy = ndimage.gaussian_filter(gray, 1.5, order=(1, 0), mode="nearest")
    gx = ndimage.gaussian_filter(gray, 1.5, order=(0, 1), mode="nearest")
    out = []
    for k in range(8):
        theta = k * np.pi / 8.0
        out.append(np.cos(theta) * gx + np.sin(theta) * gy)
    for s in (1.0, 2.0, 4.0, 8.0):
        out.append(ndimage.gaussian_laplace(gray, min(s, cap), mode="nearest"))
    for s in (1.0, 2.0, 4.0):
        out.append(ndimage.gaussian_filter(gray, min(s, cap), mode="nearest"))
    return np.stack(out, axis=-1)


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """Uniform LBP (8 neighbours, radius 1): 58 uniform codes plus one catch-all."""
    u8 = np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)
    return local_binary_pattern(u8, 8, 1, method="nri_uniform").astype(np.int64)


def _bin_index(values: np.ndarray) -> np.ndarray:
    return np.minimum((np.clip(values, 0.0, 1.0) * N_BINS).astype(np.int64), N_BINS - 1)


# ---------------------------------------------------------------------------
# accumulation


def _accumulate(img: np.ndarray, labels: np.ndarray, count: int) -> RegionStats:
    h, w = labels.shape
    lab_flat = labels.ravel()
    area = np.bincount(lab_flat, minlength=count).astype(np.float64)
    safe = np.where(area > 0, area, 1.0)

    def means(arr):
        flat = arr.reshape(lab_flat.size, -1)
        return np.stack([np.bincount(lab_flat, flat[:, c], count) for c in range(flat.shape[1])],
                        axis=1) / safe[:, None]

    def hist3(arr):
        flat = _bin_index(arr.reshape(lab_flat.size, 3))
        blocks = []
        for c in range(3):
            hc = np.bincount(lab_flat * N_BINS + flat[:, c], minlength=count * N_BINS)
            blocks.append(hc.reshape(count, N_BINS))
        # whole 48-bin histogram sums to one; each channel block to 1/3
        return np.concatenate(blocks, axis=1) / (3.0 * safe[:, None])

    rgb = img
    lab = rgb_to_lab(img)
    hsv = rgb2hsv(img)
    gray = rgb_to_gray(img)

    mean_lab = means(lab)
    sq_lab = means(lab ** 2)
    var_lab = np.maximum(sq_lab - mean_lab ** 2, 0.0)

    lbp = np.bincount(lab_flat * N_LBP + lbp_codes(gray).ravel(), minlength=count * N_LBP)
    hist_lbp = lbp.reshape(count, N_LBP) / safe[:, None]

    tex = means(np.abs(filter_bank(gray)))

    yy, xx = np.mgrid[0:h, 0:w]
    cx = np.bincount(lab_flat, (xx.ravel() + 0.5) / w, count) / safe
    cy = np.bincount(lab_flat, (yy.ravel() + 0.5) / h, count) / safe

    bbox = np.zeros((count, 4))
    aspect = np.zeros(count)
    for r, sl in enumerate(ndimage.find_objects(labels + 1, max_label=count)):
        if sl is None:
            continue
        ys, xs = sl
        bw, bh = xs.stop - xs.start, ys.stop - ys.start
        bbox[r] = (xs.start / w, ys.start / h, bw / w, bh / h)
        aspect[r] = min(bw / bh, MAX_ASPECT)

    ring = np.zeros((h, w), dtype=bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    border_contact = np.bincount(labels[ring], minlength=count) / ring.sum()

    return RegionStats(
        mean_rgb=means(rgb), mean_lab=mean_lab, mean_hsv=means(hsv),
        hist_rgb=hist3(rgb), hist_lab=hist3(lab), hist_hsv=hist3(hsv),
        hist_lbp=hist_lbp, tex_resp=tex,
        centroid=np.stack([cx, cy], axis=1), bbox=bbox,
        area_ratio=area / (h * w), var_lab=var_lab,
        border_contact=border_contact.astype(np.float64), aspect=aspect,
    )


def region_stats(img_level: np.ndarray, seg: Segmentation) -> RegionStats:
    """Accumulate colour, histogram, texture and shape statistics for every region."""
    if img_level.shape[:2] != seg.shape:
        raise ValueError("segmentation and image sizes differ")
    return _accumulate(np.asarray(img_level, dtype=np.float64), seg.label_map, seg.region_count)


def pseudo_background(img_level: np.ndarray, band: int = BORDER_BAND) -> RegionStats:
    """Statistics of the ``band``-pixel border strip, as a single-region RegionStats."""
    h, w = img_level.shape[:2]
    labels = np.ones((h, w), dtype=np.int64)
    labels[:band, :] = labels[-band:, :] = 0
    labels[:, :band] = labels[:, -band:] = 0
    return _accumulate(np.asarray(img_level, dtype=np.float64), labels, 2).take(0)


# ---------------------------------------------------------------------------
# distances


def chi_square(h1, h2) -> float:
    """Histogram distance ``sum 2 (a - b)^2 / (a + b)``; empty bins contribute 0."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise ValueError(f"histogram shapes differ: {h1.shape} vs {h2.shape}")
    return float(_chi2_rows(h1[None], h2[None])[0]) if h1.ndim == 1 else _chi2_rows(h1, h2)


def _chi2_rows(a, b):
    s = a + b
    num = 2.0 * (a - b) ** 2
    return np.divide(num, s, out=np.zeros_like(num), where=s > 0).sum(axis=-1)


def pair_distances(sa: RegionStats, sb: RegionStats) -> np.ndarray:
    """Row-wise 14-component distance between aligned region stats.

    ``sa`` and ``sb`` must have the same number of regions, or ``sb`` a
    single region that is broadcast.
    """
    n = max(len(sa), len(sb))

    def bc(x):
        return np.broadcast_to(x, (n,) + x.shape[1:])

    cols = [
        np.abs(bc(sa.mean_rgb) - bc(sb.mean_rgb)),
        np.abs(bc(sa.mean_lab) - bc(sb.mean_lab)),
        np.abs(bc(sa.mean_hsv) - bc(sb.mean_hsv)),
        _chi2_rows(bc(sa.hist_rgb), bc(sb.hist_rgb))[:, None],
        _chi2_rows(bc(sa.hist_lab), bc(sb.hist_lab))[:, None],
        _chi2_rows(bc(sa.hist_hsv), bc(sb.hist_hsv))[:, None],
        _chi2_rows(bc(sa.hist_lbp), bc(sb.hist_lbp))[:, None],
        (np.abs(bc(sa.tex_resp) - bc(sb.tex_resp)).sum(axis=1) / N_TEX)[:, None],
    ]
    return np.concatenate(cols, axis=1)


def contrast_block(r: int, graph: RegionGraph, stats: RegionStats) -> np.ndarray:
    """Area-weighted mean distance from region ``r`` to its neighbours."""
    neigh = sorted(graph.adjacency[r])
    if not neigh:
        return np.zeros(N_DIST)
    wts = graph.areas[neigh].astype(np.float64)
    wts /= wts.sum()
    d = pair_distances(stats.take(np.full(len(neigh), r)), stats.take(np.array(neigh)))
    return wts @ d


def backgroundness_block(r: int, stats: RegionStats, pseudo_bg: RegionStats) -> np.ndarray:
    return pair_distances(stats.take(r), pseudo_bg)[0]


def property_block(r: int, stats: RegionStats) -> np.ndarray:
    return _property_rows(stats)[r]


def _property_rows(stats: RegionStats) -> np.ndarray:
    return np.column_stack([
        stats.centroid, stats.bbox[:, 2:4], stats.area_ratio, stats.aspect,
        stats.var_lab, stats.border_contact,
    ])


def _contrast_rows(graph: RegionGraph, stats: RegionStats) -> np.ndarray:
    n = len(stats)
    src, dst = [], []
    for i, neigh in enumerate(graph.adjacency):
        for j in neigh:
            src.append(i)
            dst.append(j)
    out = np.zeros((n, N_DIST))
    if not src:
        return out
    src = np.array(src)
    dst = np.array(dst)
    d = pair_distances(stats.take(src), stats.take(dst))
    wts = graph.areas[dst].astype(np.float64)
    norm = np.bincount(src, wts, n)
    wts = wts / norm[src]
    for c in range(N_DIST):
        out[:, c] = np.bincount(src, wts * d[:, c], n)
    return out


def level_features(img_level: np.ndarray, seg: Segmentation, graph: RegionGraph | None = None) -> np.ndarray:
    """``(region_count, 38)`` feature matrix for one segmentation level."""
    if graph is None:
        graph = build_region_graph(seg)
    stats = region_stats(img_level, seg)
    bg = pseudo_background(img_level)
    return np.concatenate([
        _contrast_rows(graph, stats),
        pair_distances(stats, bg),
        _property_rows(stats),
    ], axis=1)


def save_features_csv(path, feats: np.ndarray) -> None:
    """Debug dump: one row per region, ``region`` id followed by the 38 named columns."""
    header = ",".join(["region"] + FEATURE_NAMES)
    rows = np.column_stack([np.arange(feats.shape[0]), feats])
    np.savetxt(path, rows, delimiter=",", header=header, comments="",
               fmt=["%d"] + ["%.10g"] * feats.shape[1])
