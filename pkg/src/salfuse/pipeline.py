"""Per-image stages: scale space, segmentation hierarchy, region features, per-scale maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .features import level_features
from .forest import ForestModel, score_level
from .imaging import build_scale_space, check_image
from .segmentation import Segmentation, SegmentationHierarchy, build_hierarchy


@dataclass
class ImageAnalysis:
    """Everything computed for one image before any model is applied."""
    hierarchy: SegmentationHierarchy
    features: list  # one (R_k, 38) array per level

    @property
    def M(self) -> int:
        return self.hierarchy.M


def analyze(img: np.ndarray, cfg: PipelineConfig = PipelineConfig()) -> ImageAnalysis:
    img = check_image(img)
    ss = build_scale_space(img, cfg.sigma, cfg.M)
    hier = build_hierarchy(ss, cfg.seg_k, cfg.seg_min_size, cfg.merge_thresholds)
    feats = [level_features(ss.levels[k], seg) for k, seg in enumerate(hier.levels)]
    return ImageAnalysis(hier, feats)


def binarize_gt(gt: np.ndarray, threshold: float = 0.3) -> np.ndarray:
    """1 where ``gt > threshold`` (strict), else 0."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(gt) > threshold).astype(np.float64)


def region_targets(seg: Segmentation, gt_binary: np.ndarray) -> np.ndarray:
    """Fraction of salient pixels inside each region."""
    if gt_binary.shape != seg.shape:
        raise ValueError(f"ground truth {gt_binary.shape} vs labels {seg.shape}")
    labels = seg.label_map.ravel()
    hits = np.bincount(labels, weights=gt_binary.ravel(), minlength=seg.region_count)
    return hits / seg.areas()


def forest_samples(img, gt, cfg: PipelineConfig = PipelineConfig(), analysis=None):
    """Region descriptors and targets of every level of one image, stacked."""
    analysis = analysis or analyze(img, cfg)
    gt_bin = binarize_gt(gt, cfg.gt_threshold)
    X = np.concatenate(analysis.features, axis=0)
    y = np.concatenate([region_targets(seg, gt_bin) for seg in analysis.hierarchy.levels])
    return X, y


def scale_maps(img, forest: ForestModel, cfg: PipelineConfig = PipelineConfig(),
               analysis=None) -> list:
    """The M per-scale saliency maps of one image (coarser levels later)."""
    analysis = analysis or analyze(img, cfg)
    return [score_level(forest, seg, f)
            for seg, f in zip(analysis.hierarchy.levels, analysis.features)]
