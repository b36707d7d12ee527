"""Graph-based superpixels and the nested multi-level segmentation hierarchy.

The finest level is a Felzenszwalb-Huttenlocher segmentation of the first
scale-space level.  Every coarser level greedily merges adjacent regions of
the previous level, most similar pair first, while their mean-Lab similarity
(computed on that level's blurred image) stays above a threshold.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from PIL import Image as PILImage

from .imaging import ScaleSpace, rgb_to_lab

SIMILARITY_SCALE = 0.1


@dataclass(frozen=True)
class Segmentation:
    label_map: np.ndarray
    region_count: int
    level: int = 1

    @property
    def shape(self):
        return self.label_map.shape

    def areas(self) -> np.ndarray:
        return np.bincount(self.label_map.ravel(), minlength=self.region_count)


@dataclass(frozen=True)
class RegionGraph:
    adjacency: tuple  # of frozensets, indexed by region id
    border_flags: np.ndarray
    areas: np.ndarray


@dataclass(frozen=True)
class SegmentationHierarchy:
    levels: tuple
    # parent_maps[k - 1] maps level-k ids to level-(k+1) ids (0-based k)
    parent_maps: tuple = field(default_factory=tuple)

    @property
    def M(self) -> int:
        return len(self.levels)


# ---------------------------------------------------------------------------
# finest level


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _union(parent, rank, size, a, b):
    if rank[a] < rank[b]:
        a, b = b, a
    parent[b] = a
    size[a] += size[b]
    if rank[a] == rank[b]:
        rank[a] += 1
    return a


@numba.njit(cache=True)
def _felzenszwalb_kernel(edges_a, edges_b, weights, order, n, k_param,
                         four_a, four_b, four_order, min_size):
    parent = np.arange(n)
    rank = np.zeros(n, np.int64)
    size = np.ones(n, np.int64)
    thresh = np.full(n, k_param)

    for e in order:
        a = _find(parent, edges_a[e])
        b = _find(parent, edges_b[e])
        if a == b:
            continue
        w = weights[e]
        if w <= thresh[a] and w <= thresh[b]:
            r = _union(parent, rank, size, a, b)
            thresh[r] = w + k_param / size[r]

    # split 8-connected components into 4-connected pieces
    comp = np.empty(n, np.int64)
    for i in range(n):
        comp[i] = _find(parent, i)
    parent4 = np.arange(n)
    rank4 = np.zeros(n, np.int64)
    size4 = np.ones(n, np.int64)
    for e in range(four_a.shape[0]):
        p, q = four_a[e], four_b[e]
        if comp[p] == comp[q]:
            a = _find(parent4, p)
            b = _find(parent4, q)
            if a != b:
                _union(parent4, rank4, size4, a, b)

    # absorb small pieces along 4-adjacent edges, cheapest edge first
    for e in four_order:
        a = _find(parent4, four_a[e])
        b = _find(parent4, four_b[e])
        if a != b and (size4[a] < min_size or size4[b] < min_size):
            _union(parent4, rank4, size4, a, b)

    labels = np.empty(n, np.int64)
    remap = np.full(n, -1, np.int64)
    nxt = 0
    for i in range(n):
        r = _find(parent4, i)
        if remap[r] < 0:
            remap[r] = nxt
            nxt += 1
        labels[i] = remap[r]
    return labels, nxt


def _pixel_edges(h, w, diagonal):
    idx = np.arange(h * w).reshape(h, w)
    pairs = [(idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])]
    if diagonal:
        pairs += [(idx[:-1, :-1], idx[1:, 1:]), (idx[:-1, 1:], idx[1:, :-1])]
    a = np.concatenate([p.ravel() for p, _ in pairs])
    b = np.concatenate([q.ravel() for _, q in pairs])
    return a, b


def segment_finest(level_img: np.ndarray, k_param: float = 200.0, min_size: int = 100) -> Segmentation:
    """Felzenszwalb-Huttenlocher segmentation on the 8-connected pixel grid.

    Edge weights are Euclidean RGB distances on the 0..255 scale and the merge
    threshold is ``k_param / |C|``.  Components are then split into
    4-connected pieces and pieces smaller than ``min_size`` are absorbed
    into their cheapest 4-adjacent neighbour.
    """
    img = np.asarray(level_img, dtype=np.float64) * 255.0
    h, w = img.shape[:2]
    flat = img.reshape(-1, 3)

    ea, eb = _pixel_edges(h, w, diagonal=True)
    weights = np.sqrt(((flat[ea] - flat[eb]) ** 2).sum(axis=1))
    order = np.argsort(weights, kind="stable")

    fa, fb = _pixel_edges(h, w, diagonal=False)
    fw = np.sqrt(((flat[fa] - flat[fb]) ** 2).sum(axis=1))
    forder = np.argsort(fw, kind="stable")

    labels, count = _felzenszwalb_kernel(ea, eb, weights, order, h * w, float(k_param),
                                         fa, fb, forder, int(min_size))
    return Segmentation(labels.reshape(h, w), int(count), 1)


# ---------------------------------------------------------------------------
# region adjacency


def build_region_graph(seg: Segmentation) -> RegionGraph:
    """Region adjacency from 4-neighbour label transitions, plus border flags and areas."""
    lab = seg.label_map
    n = seg.region_count
    a = np.concatenate([lab[:, :-1].ravel(), lab[:-1, :].ravel()])
    b = np.concatenate([lab[:, 1:].ravel(), lab[1:, :].ravel()])
    diff = a != b
    lo = np.minimum(a[diff], b[diff])
    hi = np.maximum(a[diff], b[diff])
    pairs = np.unique(lo * n + hi)
    neigh = [set() for _ in range(n)]
    for code in pairs.tolist():
        i, j = divmod(code, n)
        neigh[i].add(j)
        neigh[j].add(i)

    border = np.zeros(n, dtype=bool)
    for edge in (lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]):
        border[np.unique(edge)] = True
    return RegionGraph(tuple(frozenset(s) for s in neigh), border, seg.areas())


def region_means(values: np.ndarray, seg: Segmentation) -> np.ndarray:
    """Per-region channel means of an ``(H, W, C)`` array."""
    lab = seg.label_map.ravel()
    areas = np.bincount(lab, minlength=seg.region_count).astype(np.float64)
    flat = values.reshape(lab.size, -1)
    sums = np.stack([np.bincount(lab, weights=flat[:, c], minlength=seg.region_count)
                     for c in range(flat.shape[1])], axis=1)
    return sums / areas[:, None]


def similarity(mean_a, mean_b) -> float:
    return math.exp(-float(np.linalg.norm(np.asarray(mean_a) - np.asarray(mean_b))) / SIMILARITY_SCALE)


# ---------------------------------------------------------------------------
# coarser levels


def merge_level(prev: Segmentation, graph: RegionGraph, features: np.ndarray, threshold: float):
    """Greedily merge the most similar adjacent pair while similarity > ``threshold``.

    ``features`` holds the per-region mean Lab colour (rescaled to [0, 1]).
    Merged regions take the area-weighted mean of their parts and every pair
    touching them is re-scored.

    Returns
    -------
    seg : Segmentation
        Contiguously relabelled coarser segmentation.
    parent_map : (prev.region_count,) int ndarray
        New region id of every region in ``prev``.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    n = prev.region_count
    means = [np.asarray(f, dtype=np.float64) for f in features]
    areas = graph.areas.astype(np.float64).tolist()
    neigh = [set(s) for s in graph.adjacency]
    alive = [True] * n
    version = [0] * n
    owner = list(range(n))

    heap = []

    def push(i, j):
        s = similarity(means[i], means[j])
        if s > threshold:
            a, b = (i, j) if i < j else (j, i)
            heapq.heappush(heap, (-s, a, b, version[a], version[b]))

    for i in range(n):
        for j in neigh[i]:
            if i < j:
                push(i, j)

    while heap:
        _, a, b, va, vb = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        # keep the lower id as the survivor
        total = areas[a] + areas[b]
        means[a] = (means[a] * areas[a] + means[b] * areas[b]) / total
        areas[a] = total
        alive[b] = False
        owner[b] = a
        neigh[a] |= neigh[b]
        neigh[a] -= {a, b}
        for k in neigh[b]:
            if k != a:
                neigh[k].discard(b)
                neigh[k].add(a)
        neigh[b] = set()
        version[a] += 1
        for k in neigh[a]:
            push(a, k)

    def root(i):
        while owner[i] != i:
            i = owner[i]
        return i

    roots = np.array([root(i) for i in range(n)], dtype=np.int64)
    # contiguous ids in order of first appearance over previous ids
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    parent_map = rank[inverse]
    new_map = parent_map[prev.label_map]
    return Segmentation(new_map, int(first.size), prev.level + 1), parent_map


def build_hierarchy(ss: ScaleSpace, k_param: float = 200.0, min_size: int = 100,
                    thresholds=(0.7, 0.6, 0.5)) -> SegmentationHierarchy:
    """Finest segmentation on level 1, then one merge pass per further level.

    Merging at level ``k`` uses the mean Lab colours of the level-``k``
    blurred image.
    """
    thresholds = list(thresholds)
    if len(thresholds) != ss.M - 1:
        raise ValueError(f"need {ss.M - 1} merge thresholds, got {len(thresholds)}")
    seg = segment_finest(ss.levels[0], k_param, min_size)
    levels = [seg]
    parents = []
    for k in range(1, ss.M):
        lab = rgb_to_lab(ss.levels[k])
        graph = build_region_graph(seg)
        seg, pmap = merge_level(seg, graph, region_means(lab, seg), thresholds[k - 1])
        levels.append(seg)
        parents.append(pmap)
    return SegmentationHierarchy(tuple(levels), tuple(parents))


def save_label_png(path, seg: Segmentation, seed: int = 0) -> None:
    """Debug dump of a label map as a palette PNG (ids wrap modulo 256)."""
    rng = np.random.default_rng(seed)
    palette = rng.integers(0, 256, size=(256, 3), dtype=np.uint8)
    im = PILImage.fromarray((seg.label_map % 256).astype(np.uint8), mode="P")
    im.putpalette(palette.ravel().tolist())
    im.save(path)
