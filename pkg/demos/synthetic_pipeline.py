"""End to end on synthetic blobs: per-scale maps, fusion, evaluation.

Generates coloured ellipses on textured backgrounds, trains the region
forest on the first images, learns the fusion dictionaries from the forest's
maps, and compares the fused maps with every single scale on held-out
images.  A short schedule keeps the run around a minute; pass a larger
step count (e.g. 20000) for the full-length training.

    python demos/synthetic_pipeline.py [steps]
"""
import sys
import time

import numpy as np

from salfuse import evaluation, forest, fusion, pipeline, tddl
from salfuse.config import PipelineConfig
from salfuse.synthetic import blob_dataset

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
cfg = PipelineConfig(T=steps, forest_trees=50)
data = blob_dataset(16, seed=0)
train, test = data[:12], data[12:]

t = time.perf_counter()
analyses = [pipeline.analyze(img, cfg) for img, _ in data]
print(f"segmented and described {len(data)} images in {time.perf_counter() - t:.1f}s; "
      f"regions per level in image 0: {[s.region_count for s in analyses[0].hierarchy.levels]}")

X, y = zip(*(pipeline.forest_samples(img, gt, cfg, a) for (img, gt), a in zip(train, analyses)))
model_f = forest.train_forest(np.concatenate(X), np.concatenate(y), cfg.forest_trees,
                              cfg.forest_min_leaf, cfg.forest_seed)
maps = [pipeline.scale_maps(img, model_f, cfg, a) for (img, _), a in zip(data, analyses)]

grid = fusion.make_grid(maps[0][0].shape, cfg.patch_size, cfg.stride)
Xp = np.concatenate([fusion.extract_patches(m, grid) for m in maps[:12]])
Yp = np.concatenate([fusion.extract_patches([pipeline.binarize_gt(g)], grid)[:, 0] for _, g in train])
t = time.perf_counter()
model = tddl.train(Xp, Yp, cfg.train_config())
print(f"trained fusion on {len(Xp)} patches for {steps} steps in {time.perf_counter() - t:.1f}s")

gts = [pipeline.binarize_gt(g, cfg.gt_threshold) for _, g in test]
for k in range(cfg.M):
    c = evaluation.sweep(zip([m[k] for m in maps[12:]], gts))
    print(f"scale {k + 1}: max F {c.max_f:.4f}  AUC {c.auc_roc:.4f}")
fused = [fusion.fuse(m, model) for m in maps[12:]]
c = evaluation.sweep(zip(fused, gts))
print(f"fused  : max F {c.max_f:.4f}  AUC {c.auc_roc:.4f}")
