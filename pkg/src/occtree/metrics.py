"""Semantic mIoU, split-quality mIoU, octree focal loss and compression statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .grid import DenseGrid
from .octree import OctreeConfig, OctreeStructure, leaf_census

FOCAL_EPS = 1e-7


def _values(x):
    return x.values if isinstance(x, DenseGrid) else np.asarray(x)


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """Per-class true positive, false positive and false negative counts."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def class_count(self):
        return len(self.tp)


def confusion_counts(pred, gt, class_count: int, ignore=()) -> ConfusionCounts:
    p = _values(pred).ravel().astype(np.int64)
    g = _values(gt).ravel().astype(np.int64)
    if _values(pred).shape != _values(gt).shape:
        raise DimensionError(f"prediction shape {_values(pred).shape} != ground truth {_values(gt).shape}")
    if ignore:
        keep = ~np.isin(g, list(ignore))
        p, g = p[keep], g[keep]
    if p.size and (max(p.max(), g.max()) >= class_count or min(p.min(), g.min()) < 0):
        raise ConfigError(f"labels must lie in [0, {class_count})")
    cm = np.bincount(g * class_count + p, minlength=class_count * class_count).reshape(class_count, class_count)
    tp = np.diag(cm).copy()
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    return ConfusionCounts(tp, fp, fn)


@dataclass(frozen=True, eq=False)
class IoUReport:
    per_class: np.ndarray  # NaN where the class never occurs in pred or gt
    mean: float


def iou_from_counts(counts: ConfusionCounts, unconditional: bool = False) -> IoUReport:
    """IoU per class; the mean skips classes with an empty union.

    With ``unconditional=True`` the mean divides by the full class count,
    empty classes contributing zero.
    """
    denom = counts.tp + counts.fp + counts.fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, counts.tp / np.where(denom > 0, denom, 1), np.nan)
    if unconditional:
        mean = float(np.nansum(iou) / counts.class_count)
    else:
        present = ~np.isnan(iou)
        mean = float(iou[present].mean()) if present.any() else float("nan")
    return IoUReport(iou, mean)


def miou(pred, gt, class_count: int, ignore=(), unconditional: bool = False) -> IoUReport:
    """Mean intersection-over-union between two label grids."""
    return iou_from_counts(confusion_counts(pred, gt, class_count, ignore), unconditional)


@dataclass(frozen=True)
class SplitQuality:
    iou_split: float
    iou_nosplit: float
    miou: float


def split_quality_miou(pred_level, gt_level) -> SplitQuality:
    """Binary mIoU over {split, no-split} between a predicted and a GT level."""
    p = _values(pred_level).astype(bool)
    g = _values(gt_level).astype(bool)
    if p.shape != g.shape:
        raise DimensionError(f"predicted level shape {p.shape} != ground truth {g.shape}")
    report = miou(p.astype(np.int64), g.astype(np.int64), 2)
    nosplit, split = report.per_class
    return SplitQuality(float(split), float(nosplit), report.mean)


def structure_quality(structure: OctreeStructure, gt) -> list:
    """:func:`split_quality_miou` at every split boundary, coarse to fine."""
    if len(structure.levels) != len(gt.levels):
        raise DimensionError("structure and ground truth have different depths")
    return [split_quality_miou(s, g) for s, g in zip(structure.levels, gt.levels)]


def focal_loss_mask(pred_level, gt_level, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean of ``-alpha * (1 - p_t) ** gamma * log(p_t)`` over cells.

    ``p_t`` is the predicted probability of the true split label; predictions
    are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    p = _values(pred_level).astype(np.float64)
    g = _values(gt_level)
    if p.shape != g.shape:
        raise DimensionError(f"prediction shape {p.shape} != ground truth {g.shape}")
    p = np.clip(p, FOCAL_EPS, 1.0 - FOCAL_EPS)
    pt = np.where(g.astype(bool), p, 1.0 - p)
    return float(np.mean(-alpha * (1.0 - pt) ** gamma * np.log(pt)))


@dataclass(frozen=True)
class CompressionStats:
    leaf_counts: tuple
    total: int
    dense_count: int
    leaf_fraction: float
    split_fractions: tuple  # parents / nodes at each split level

    def as_dict(self):
        return {
            "leaf_counts": list(self.leaf_counts),
            "total_leaves": self.total,
            "dense_voxels": self.dense_count,
            "leaf_fraction": self.leaf_fraction,
            "split_fractions": list(self.split_fractions),
        }


def compression_stats(structure: OctreeStructure, config: OctreeConfig = None) -> CompressionStats:
    if config is not None:
        structure.check_config(config)
    census = leaf_census(structure)
    dense = structure.finest_dims.count
    split_fractions = tuple(float(g.values.sum()) / g.dims.count for g in structure.levels)
    return CompressionStats(census.counts, census.total, dense, census.total / dense, split_fractions)
