"""Patch sampling of per-scale maps, training-pair assembly and fused inference."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import jsc
from .config import PipelineConfig
from .forest import ForestModel
from .persist import save_matrix
from .pipeline import binarize_gt, scale_maps
from .tddl import FusionModel

log = logging.getLogger(__name__)

__all__ = ["PatchGrid", "make_grid", "extract_patches", "reassemble", "binarize_gt",
           "fuse", "build_training_set", "training_matrices", "save_training_set"]


@dataclass(frozen=True)
class PatchGrid:
    """Square patches of side ``patch_size`` anchored every ``stride`` pixels.

    The map is edge-padded on the bottom and right to ``padded_shape`` so the
    last row and column of anchors still hold full patches.
    """
    shape: tuple
    patch_size: int = 9
    stride: int = 9

    def __post_init__(self):
        if self.patch_size < 1 or self.stride < 1:
            raise ValueError("patch_size and stride must be positive")
        if self.stride > self.patch_size:
            raise ValueError("stride larger than the patch would leave pixels uncovered")

    def _count(self, n: int) -> int:
        return max(1, math.ceil((n - self.patch_size) / self.stride) + 1)

    @property
    def grid_shape(self):
        return self._count(self.shape[0]), self._count(self.shape[1])

    @property
    def padded_shape(self):
        gr, gc = self.grid_shape
        return ((gr - 1) * self.stride + self.patch_size,
                (gc - 1) * self.stride + self.patch_size)

    @property
    def positions(self) -> list:
        gr, gc = self.grid_shape
        return [(i * self.stride, j * self.stride) for i in range(gr) for j in range(gc)]

    def __len__(self) -> int:
        gr, gc = self.grid_shape
        return gr * gc

    def pad(self, gmap: np.ndarray) -> np.ndarray:
        ph, pw = self.padded_shape
        h, w = self.shape
        return np.pad(gmap, ((0, ph - h), (0, pw - w)), mode="edge")


def make_grid(shape, patch_size: int = 9, stride: int = 9) -> PatchGrid:
    return PatchGrid(tuple(int(v) for v in shape[:2]), patch_size, stride)


def _patches(gmap: np.ndarray, grid: PatchGrid) -> np.ndarray:
    p, s = grid.patch_size, grid.stride
    win = sliding_window_view(grid.pad(gmap), (p, p))[::s, ::s]
    return win.reshape(-1, p * p)


def extract_patches(maps, grid: PatchGrid) -> np.ndarray:
    """Row-major patch vectors, ``(len(grid), M, patch_size**2)``."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if any(m.shape != tuple(grid.shape) for m in maps):
        raise ValueError("maps must all match the grid shape")
    return np.ascontiguousarray(np.stack([_patches(m, grid) for m in maps], axis=1))


def reassemble(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Average overlapping patch vectors back into a map of ``grid.shape``."""
    p = grid.patch_size
    patches = np.asarray(patches, dtype=np.float64).reshape(len(grid), p, p)
    acc = np.zeros(grid.padded_shape)
    hits = np.zeros(grid.padded_shape)
    for (r, c), patch in zip(grid.positions, patches):
        acc[r:r + p, c:c + p] += patch
        hits[r:r + p, c:c + p] += 1.0
    h, w = grid.shape
    return acc[:h, :w] / hits[:h, :w]


def fuse(maps, model: FusionModel, grid: PatchGrid | None = None,
         params: jsc.JscParams | None = None, stride: int | None = None) -> np.ndarray:
    """Fused saliency map from M per-scale maps.

    Every patch is jointly coded against the model's dictionaries, decoded
    as ``mean_s(W^s a^s) + b``, clamped to ``[0, 1]`` and written back; the
    padding is discarded.
    """
    maps = list(maps)
    if len(maps) != model.M:
        raise ValueError(f"model expects {model.M} maps, got {len(maps)}")
    if grid is None:
        side = int(round(math.sqrt(model.n_s[0])))
        grid = make_grid(maps[0].shape, side, stride or side)
    if any(n != grid.patch_size ** 2 for n in model.n_s):
        raise ValueError("dictionary rows do not match the patch size")
    params = params or jsc.JscParams()
    X = extract_patches(maps, grid)
    out = np.empty((X.shape[0], model.out_dim))
    # piecewise-constant inputs repeat patches a lot; code each distinct one once
    seen = {}
    for i, xi in enumerate(X):
        key = xi.tobytes()
        if key not in seen:
            A = jsc.encode(list(xi), model.dicts, params).A if xi.any() else np.zeros((model.d, model.M))
            seen[key] = np.clip(model.predict(A), 0.0, 1.0)
        out[i] = seen[key]
    return reassemble(out, grid)


def build_training_set(dataset, forest: ForestModel, cfg: PipelineConfig = PipelineConfig(),
                       stride: int | None = None):
    """Aligned patch pairs from every image.

    Parameters
    ----------
    dataset : iterable of (image, ground truth)
    forest : ForestModel
        Produces the per-scale maps.

    Returns
    -------
    X : (N, M, patch_size**2) array
    Y : (N, patch_size**2) array of 0/1
    """
    stride = stride or cfg.stride
    xs, ys = [], []
    for k, (img, gt) in enumerate(dataset):
        try:
            maps = scale_maps(img, forest, cfg)
        except (ValueError, FloatingPointError) as exc:
            log.warning("image %d skipped: %s", k, exc)
            continue
        grid = make_grid(maps[0].shape, cfg.patch_size, stride)
        xs.append(extract_patches(maps, grid))
        ys.append(_patches(binarize_gt(gt, cfg.gt_threshold), grid))
    n = cfg.patch_size ** 2
    if not xs:
        return np.zeros((0, cfg.M, n)), np.zeros((0, n))
    return np.concatenate(xs), np.concatenate(ys)


def training_matrices(X: np.ndarray, Y: np.ndarray):
    """Column-per-sample layout: ``(M*n, N)`` inputs (modalities stacked) and ``(n, N)`` labels."""
    X = np.asarray(X)
    return X.reshape(X.shape[0], -1).T, np.asarray(Y).T


def save_training_set(prefix, X, Y) -> None:
    Xm, Ym = training_matrices(X, Y)
    save_matrix(f"{prefix}_x.bin", Xm)
    save_matrix(f"{prefix}_y.bin", Ym)
