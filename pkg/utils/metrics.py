"""
Region and boundary metrics for label maps.

Boundaries are the width-1 Chebyshev bands of :func:`utils.losses.boundary_band`.
Degenerate conventions: bIoU without any band support is 1.0, boundary F1 with
no boundary pixel in either map is 1.0.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from config import CLASS_NAMES, IGNORE_INDEX, NUM_CLASSES
from utils.losses import boundary_band

logger = logging.getLogger(__name__)


class LabelOutOfRange(ValueError):
    """Raised when a label map holds a value outside ``[0, N_class)`` other than ``ignore_index``."""
    pass


class EmptyConfusion(ValueError):
    """Raised when rates are requested from a confusion matrix without pixels."""
    pass


def _check_range(labels: np.ndarray, num_classes: int, ignore_index: Optional[int], what: str) -> None:
    labels = np.asarray(labels)
    bad = (labels < 0) | (labels >= num_classes)
    if ignore_index is not None:
        bad &= labels != ignore_index
    if np.any(bad):
        raise LabelOutOfRange(f"{what} labels {np.unique(labels[bad]).tolist()} outside [0, {num_classes})")


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int = NUM_CLASSES,
              ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """
    ``counts[g, p]``: pixels with ground truth ``g`` predicted ``p``.

    Raises:
        ValueError: If the maps differ in shape.
        LabelOutOfRange: If either map holds an invalid label.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    _check_range(pred, num_classes, None, 'predicted')
    _check_range(gt, num_classes, ignore_index, 'ground-truth')
    valid = gt != ignore_index
    index = gt[valid].astype(np.int64) * num_classes + pred[valid].astype(np.int64)
    return np.bincount(index, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def class_iou(cm: np.ndarray) -> np.ndarray:
    """Per-class IoU; ``nan`` for classes absent from both maps."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def miou_aacc(cm: np.ndarray) -> Tuple[float, float]:
    """
    Mean IoU over classes present in either map, and overall pixel accuracy.

    Raises:
        EmptyConfusion: If the matrix counts no pixels.
    """
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyConfusion("confusion matrix is empty; no labelled pixels were evaluated")
    iou = class_iou(cm)
    return float(np.nanmean(iou)), float(np.trace(cm) / total)


# ------------------------------------------------------------------------ boundaries
def boundary_support(pred: np.ndarray, gt: np.ndarray, d: int,
                     ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Union of the ``d``-bands of both maps, restricted to labelled pixels."""
    gt = np.asarray(gt)
    valid = gt != ignore_index
    support = boundary_band(pred, d).mask | boundary_band(gt, d, ignore_index).mask
    return support & valid


def boundary_iou_counts(pred: np.ndarray, gt: np.ndarray, d: int = 2, num_classes: int = NUM_CLASSES,
                        ignore_index: int = IGNORE_INDEX) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class intersections and unions on the boundary support."""
    if d < 1:
        raise ValueError(f"boundary band width must be at least 1, got {d}")
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    support = boundary_support(pred, gt, d, ignore_index)
    p, g = pred[support], gt[support]
    classes = np.arange(num_classes)[:, None]
    intersection = ((p[None] == classes) & (g[None] == classes)).sum(axis=1)
    union = ((p[None] == classes) | (g[None] == classes)).sum(axis=1)
    return intersection, union


def boundary_iou(pred: np.ndarray, gt: np.ndarray, d: int = 2, num_classes: int = NUM_CLASSES,
                 ignore_index: int = IGNORE_INDEX) -> float:
    """
    Class IoU restricted to the union of both maps' ``d``-bands, averaged over
    classes with non-empty support. 1.0 when neither map has a boundary.
    """
    intersection, union = boundary_iou_counts(pred, gt, d, num_classes, ignore_index)
    return _band_mean(intersection, union)


def _band_mean(intersection: np.ndarray, union: np.ndarray) -> float:
    present = union > 0
    if not present.any():
        return 1.0
    return float(np.mean(intersection[present] / union[present]))


def boundary_pixels(labels: np.ndarray, ignore_index: Optional[int] = None) -> np.ndarray:
    return boundary_band(labels, 1, ignore_index).mask


def _within(mask: np.ndarray, t: int) -> np.ndarray:
    """Pixels within Chebyshev distance ``t`` of ``mask``."""
    if t == 0 or not mask.any():
        return mask
    return ndimage.binary_dilation(mask, structure=np.ones((2 * t + 1, 2 * t + 1), dtype=bool))


def boundary_f1_counts(pred: np.ndarray, gt: np.ndarray, t: int = 1,
                       ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """``[matched_pred, total_pred, matched_gt, total_gt]`` boundary pixel counts."""
    if t < 0:
        raise ValueError(f"tolerance must be non-negative, got {t}")
    gt = np.asarray(gt)
    valid = gt != ignore_index
    pred_b = boundary_pixels(pred) & valid
    gt_b = boundary_pixels(gt, ignore_index)
    return np.array([
        int((pred_b & _within(gt_b, t)).sum()), int(pred_b.sum()),
        int((gt_b & _within(pred_b, t)).sum()), int(gt_b.sum()),
    ], dtype=np.int64)


def _f1_from_counts(counts: np.ndarray) -> float:
    matched_pred, total_pred, matched_gt, total_gt = (int(c) for c in counts)
    if total_pred == 0 and total_gt == 0:
        return 1.0
    precision = matched_pred / total_pred if total_pred else 0.0
    recall = matched_gt / total_gt if total_gt else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def boundary_f1(pred: np.ndarray, gt: np.ndarray, t: int = 1, ignore_index: int = IGNORE_INDEX) -> float:
    """
    Harmonic mean of boundary precision and recall under a Chebyshev tolerance ``t``.
    """
    return _f1_from_counts(boundary_f1_counts(pred, gt, t, ignore_index))


# ------------------------------------------------------------------------- reports
@dataclass
class MetricsReport:
    """
    Attributes:
        per_class_iou: ``N_class`` values, ``nan`` for classes absent from both maps.
        miou, aacc, biou, boundary_f1: Scalars in ``[0, 1]``.
    """
    per_class_iou: np.ndarray
    miou: float
    aacc: float
    biou: float
    boundary_f1: float

    def as_row(self, class_names: Sequence[str] = CLASS_NAMES) -> Dict[str, float]:
        row = {'mIoU': self.miou, 'bIoU': self.biou, 'F1': self.boundary_f1, 'aAcc': self.aacc}
        for name, value in zip(class_names, self.per_class_iou):
            row[name] = float(value)
        return row


@dataclass
class MetricsAccumulator:
    """
    Dataset-level metrics as ratios of sums over images.

    Args:
        num_classes (int): Label space size.
        band_width (int): bIoU band ``d``.
        tolerance (int): Boundary F1 tolerance ``t``.
    """
    num_classes: int = NUM_CLASSES
    band_width: int = 2
    tolerance: int = 1
    ignore_index: int = IGNORE_INDEX
    cm: np.ndarray = field(init=False)
    band_intersection: np.ndarray = field(init=False)
    band_union: np.ndarray = field(init=False)
    f1_counts: np.ndarray = field(init=False)
    images: int = field(init=False, default=0)

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        self.cm = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        self.band_intersection = np.zeros(self.num_classes, dtype=np.int64)
        self.band_union = np.zeros(self.num_classes, dtype=np.int64)
        self.f1_counts = np.zeros(4, dtype=np.int64)
        self.images = 0

    def update(self, pred: np.ndarray, gt: np.ndarray) -> None:
        """Add one image pair, or a batch ``[B, H, W]``."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.ndim == 3:
            for p, g in zip(pred, gt):
                self.update(p, g)
            return
        self.cm += confusion(pred, gt, self.num_classes, self.ignore_index)
        inter, union = boundary_iou_counts(pred, gt, self.band_width, self.num_classes, self.ignore_index)
        self.band_intersection += inter
        self.band_union += union
        self.f1_counts += boundary_f1_counts(pred, gt, self.tolerance, self.ignore_index)
        self.images += 1

    def report(self) -> MetricsReport:
        """
        Raises:
            EmptyConfusion: If no labelled pixel was accumulated.
        """
        miou, aacc = miou_aacc(self.cm)
        return MetricsReport(per_class_iou=class_iou(self.cm), miou=miou, aacc=aacc,
                             biou=_band_mean(self.band_intersection, self.band_union),
                             boundary_f1=_f1_from_counts(self.f1_counts))
