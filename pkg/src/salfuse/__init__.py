"""Multi-scale regional saliency with task-driven dictionary fusion.

Stages, in pipeline order: :mod:`imaging` (scale space), :mod:`segmentation`
(nested region hierarchy), :mod:`features` (38-d region descriptors),
:mod:`forest` (region regressor), :mod:`jsc` and :mod:`tddl` (joint sparse
coding and supervised dictionary learning), :mod:`fusion` (patch-level
fusion of the per-scale maps) and :mod:`evaluation` (PR/ROC sweeps).
"""
__version__ = "0.1.0"
