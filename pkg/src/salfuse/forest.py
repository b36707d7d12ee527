"""Random-forest regression of region saliency from the 38-d region descriptor.

Trees are stored as flat pre-order node arrays: the left child of node ``i``
is ``i + 1`` and the right child index is kept in ``right``.  Leaves carry
``feature == -1``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FEATURE_DIM
from .persist import ModelFormatError, Reader
from .segmentation import Segmentation

MAGIC = b"SFRF"
VERSION = 1
_NODE = np.dtype([("feature", "<i4"), ("threshold", "<f8"), ("value", "<f8")])


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    right: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            r, n = rows[inner], node[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, n + 1, self.right[n])
        return self.value[node]


@dataclass
class ForestModel:
    trees: list = field(default_factory=list)
    feature_dim: int = FEATURE_DIM

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean of tree outputs, clamped to [0, 1]."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got {X.shape[1]}")
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X)
        return np.clip(acc / len(self.trees), 0.0, 1.0)


def _best_split(x, y):
    """Best variance-reduction split of one feature; returns (sse, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    n = ys.size
    cs = np.cumsum(ys)[:-1]
    cs2 = np.cumsum(ys * ys)[:-1]
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    total, total2 = cs[-1] + ys[-1], cs2[-1] + ys[-1] ** 2
    sse = (cs2 - cs * cs / nl) + ((total2 - cs2) - (total - cs) ** 2 / nr)
    sse = np.where(valid, sse, np.inf)
    i = int(np.argmin(sse))
    return sse[i], 0.5 * (xs[i] + xs[i + 1])


def _grow(X, y, min_leaf, max_features, rng) -> Tree:
    feature, threshold, value, right = [], [], [], []
    # (sample indices, index of parent waiting for its right child, or -1)
    stack = [(np.arange(y.size), -1)]
    n_feat = X.shape[1]
    while stack:
        idx, wait = stack.pop()
        me = len(feature)
        if wait >= 0:
            right[wait] = me
        yy = y[idx]
        feature.append(-1)
        threshold.append(0.0)
        value.append(float(yy.mean()))
        right.append(-1)
        if idx.size <= min_leaf or np.ptp(yy) == 0.0:
            continue
        perm = rng.permutation(n_feat)
        best = None
        for pos, f in enumerate(perm):
            # extra features are only consulted when none of the sampled ones can split
            if pos >= max_features and best is not None:
                break
            cand = _best_split(X[idx, f], yy)
            if cand is not None and (best is None or cand[0] < best[0]):
                best = (cand[0], cand[1], f)
        if best is None:
            continue
        _, thr, f = best
        feature[me] = int(f)
        threshold[me] = float(thr)
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], me))
        stack.append((idx[go_left], -1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(value), np.array(right, dtype=np.int64))


def train_forest(X, y, trees: int = 200, min_leaf: int = 8, rng_seed: int = 0,
                 max_features: int | None = None) -> ForestModel:
    """Fit a bagged regression forest.

    Parameters
    ----------
    X : (n_samples, n_features) array_like
        Region descriptors.
    y : (n_samples,) array_like
        Region targets in [0, 1] (salient-pixel fraction).
    trees : int
        Number of trees; tree ``i`` is seeded from ``SeedSequence(rng_seed)``.
    min_leaf : int
        Nodes holding at most this many samples become leaves.
    max_features : int, optional
        Candidate features per node, ``ceil(sqrt(n_features))`` by default.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("cannot train a forest on zero samples")
    if X.shape[0] != y.size:
        raise ValueError("X and y lengths differ")
    if y.min() < 0.0 or y.max() > 1.0:
        raise ValueError("targets must lie in [0, 1]")
    if max_features is None:
        max_features = int(math.ceil(math.sqrt(X.shape[1])))
    out = []
    for ss in np.random.SeedSequence(rng_seed).spawn(trees):
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, y.size, size=y.size)
        out.append(_grow(X[boot], y[boot], min_leaf, max_features, rng))
    return ForestModel(out, X.shape[1])


def predict_region(model: ForestModel, v) -> float:
    return float(model.predict(np.asarray(v, dtype=np.float64)[None])[0])


def score_level(model: ForestModel, seg: Segmentation, feats: np.ndarray) -> np.ndarray:
    """Paint every pixel with its region's predicted saliency."""
    feats = np.atleast_2d(feats)
    if feats.shape[0] != seg.region_count:
        raise ValueError("need one feature row per region")
    return model.predict(feats)[seg.label_map]


# ---------------------------------------------------------------------------
# persistence


def forest_to_bytes(model: ForestModel) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, model.tree_count, model.feature_dim)]
    for t in model.trees:
        rec = np.empty(t.node_count, dtype=_NODE)
        rec["feature"] = t.feature
        rec["threshold"] = t.threshold
        rec["value"] = t.value
        parts.append(struct.pack("<I", t.node_count))
        parts.append(rec.tobytes())
    return b"".join(parts)


def _right_pointers(feature: np.ndarray) -> np.ndarray:
    """Recover right-child indices from a pre-order leaf/inner sequence."""
    right = np.full(feature.size, -1, dtype=np.int64)
    pending = []
    for i, f in enumerate(feature.tolist()):
        if pending and pending[-1][1]:
            right[pending.pop()[0]] = i
        if f >= 0:
            pending.append([i, False])
        else:
            # a leaf closes the left side of the innermost open node
            while pending and pending[-1][1]:
                pending.pop()
            if pending:
                pending[-1][1] = True
    return right


def forest_from_bytes(data: bytes, name: str = "forest") -> ForestModel:
    r = Reader(data, name)
    r.expect_magic(MAGIC)
    version, count, dim = r.unpack("III")
    if version != VERSION:
        raise ModelFormatError(f"{name}: unsupported forest version {version}")
    trees = []
    for _ in range(count):
        n = r.u32()
        rec = np.frombuffer(r.take(n * _NODE.itemsize), dtype=_NODE)
        feat = rec["feature"].astype(np.int64)
        if feat.max(initial=-1) >= dim:
            raise ModelFormatError(f"{name}: feature index out of range")
        right = _right_pointers(feat)
        if np.any((feat >= 0) & (right < 0)):
            raise ModelFormatError(f"{name}: malformed tree")
        trees.append(Tree(feat, rec["threshold"].astype(np.float64),
                          rec["value"].astype(np.float64), right))
    r.expect_end()
    return ForestModel(trees, dim)


def save_forest(path, model: ForestModel) -> None:
    Path(path).write_bytes(forest_to_bytes(model))


def load_forest(path) -> ForestModel:
    path = Path(path)
    return forest_from_bytes(path.read_bytes(), str(path))
