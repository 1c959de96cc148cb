"""
Training objectives: dense cross entropy, point loss and the boundary-band
regularizer on class attention.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from config import IGNORE_INDEX, LossConfig
from utils.ops import log_softmax
from utils.tensor import Tensor, concat

logger = logging.getLogger(__name__)


class AllIgnoredWarning(RuntimeWarning):
    """Issued when every pixel handed to a cross entropy is ``ignore_index``."""
    pass


@dataclass
class BoundaryBand:
    """
    Attributes:
        mask: Boolean ``[H, W]``; ``True`` where a differently labelled pixel lies
              within Chebyshev distance ``width``.
        width: Band half-width in pixels.
    """
    mask: np.ndarray
    width: int

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def __len__(self):
        return int(self.mask.sum())


def boundary_band(labels: np.ndarray, w: int, ignore_index: Optional[int] = None) -> BoundaryBand:
    """
    Pixels within Chebyshev distance ``w`` of a label transition.

    A pixel is in the band iff its ``(2w+1)^2`` window (clipped at the border)
    holds a label different from its own. ``ignore_index`` pixels, when given,
    never count as a neighbouring label and are never in the band.
    """
    if w < 0:
        raise ValueError(f"band width must be non-negative, got {w}")
    labels = np.asarray(labels)
    if w == 0 or labels.size == 0:
        return BoundaryBand(mask=np.zeros(labels.shape, dtype=bool), width=w)
    size = 2 * w + 1
    values = labels.astype(np.int64)
    if ignore_index is None:
        high = ndimage.maximum_filter(values, size=size, mode='nearest')
        low = ndimage.minimum_filter(values, size=size, mode='nearest')
        return BoundaryBand(mask=high != low, width=w)
    valid = values != ignore_index
    big = np.iinfo(np.int64).max
    high = ndimage.maximum_filter(np.where(valid, values, -1), size=size, mode='nearest')
    low = ndimage.minimum_filter(np.where(valid, values, big), size=size, mode='nearest')
    return BoundaryBand(mask=valid & ((high != values) | (low != values)), width=w)


def _one_hot(labels: np.ndarray, num_classes: int, axis: int, ignore_index: int, dtype) -> np.ndarray:
    valid = labels != ignore_index
    safe = np.where(valid, labels, 0)
    encoded = (np.arange(num_classes).reshape([-1] + [1] * labels.ndim) == safe[None]).astype(dtype)
    encoded *= valid[None]
    return np.moveaxis(encoded, 0, axis)


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = IGNORE_INDEX,
                  axis: int = 1) -> Tensor:
    """
    Mean negative log-probability of the true class over non-ignored pixels.

    Args:
        logits: ``[B, N_class, H, W]`` (or any layout with the class axis at ``axis``).
        labels: Integer labels shaped like ``logits`` without the class axis.

    Returns:
        Tensor: Scalar. Zero, with an :class:`AllIgnoredWarning`, when nothing is labelled.

    Raises:
        ValueError: If a label lies outside ``[0, N_class)`` and is not ``ignore_index``.
    """
    labels = np.asarray(labels)
    num_classes = logits.shape[axis]
    expected = logits.shape[:axis] + logits.shape[axis + 1:]
    if labels.shape != expected:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape} without axis {axis}")
    valid = labels != ignore_index
    if np.any(valid & ((labels < 0) | (labels >= num_classes))):
        bad = np.unique(labels[valid & ((labels < 0) | (labels >= num_classes))])
        raise ValueError(f"labels {bad.tolist()} outside [0, {num_classes})")
    count = int(valid.sum())
    if count == 0:
        warnings.warn("cross entropy over an all-ignored label map is defined as 0", AllIgnoredWarning)
        logger.warning("cross entropy received only ignored pixels; contributing 0")
        return (logits * 0.0).sum()
    target = _one_hot(labels, num_classes, axis, ignore_index, logits.dtype)
    return (log_softmax(logits, axis=axis) * target).sum() * (-1.0 / count)


def point_cross_entropy(refined: Tensor, labels: np.ndarray, points: Sequence,
                        ignore_index: int = IGNORE_INDEX) -> Tensor:
    """
    Cross entropy of the refined logits at the selected points only.

    Args:
        refined: ``[B, N_class, H, W]``.
        labels: ``[B, H, W]``.
        points: One :class:`~network.point_refine.PointSet` per image.
    """
    gathered, targets = [], []
    for i, point_set in enumerate(points):
        if len(point_set) == 0:
            continue
        ys, xs = point_set.indices[:, 0], point_set.indices[:, 1]
        gathered.append(refined[i][:, ys, xs])
        targets.append(np.asarray(labels)[i, ys, xs])
    if not gathered:
        return (refined * 0.0).sum()
    return cross_entropy(concat(gathered, axis=1), np.concatenate(targets), ignore_index, axis=0)


def lattice_labels(labels: np.ndarray, stride: int) -> np.ndarray:
    """Nearest-neighbour downsampling: the pixel at offset ``stride // 2`` of each cell."""
    offset = stride // 2
    return np.asarray(labels)[..., offset::stride, offset::stride]


def band_regularizer(attention: Tensor, lattice_label_map: np.ndarray, band: np.ndarray,
                     lambda_band: float, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """
    Masked class-assignment cross entropy on band tokens.

    The columns of ``attention`` (one per lattice token) are renormalised over
    classes and read as that token's class assignment.

    Args:
        attention: ``[B, N_class, N]`` class attention.
        lattice_label_map: ``[B, H0, W0]`` labels on the lattice.
        band: ``[B, H0, W0]`` boolean band mask on the lattice.
        lambda_band: Weight.

    Returns:
        Tensor: ``lambda_band`` times the mean cross entropy over band tokens;
        zero for an empty band.
    """
    batch = attention.shape[0]
    labels = np.asarray(lattice_label_map).reshape(batch, -1)
    mask = np.asarray(band, dtype=bool).reshape(batch, -1) & (labels != ignore_index)
    count = int(mask.sum())
    if count == 0 or lambda_band == 0:
        return (attention * 0.0).sum()
    assignment = attention / attention.sum(axis=1, keepdims=True)
    target = _one_hot(np.where(mask, labels, ignore_index), attention.shape[1], 1, ignore_index,
                      attention.dtype)
    # entries off the target become exactly 1, so log() is 0 there
    safe = assignment * target + (1.0 - target)
    return (safe.log() * target).sum() * (-lambda_band / count)


@dataclass
class LossBreakdown:
    total: Tensor
    dense: float
    point: float
    band: float


def total_loss(result, labels: np.ndarray, cfg: Optional[LossConfig] = None,
               ignore_index: int = IGNORE_INDEX) -> LossBreakdown:
    """
    ``CE(refined) + lambda_point * CE(points) + band regularizer``.

    Args:
        result: A :class:`~network.cstr.ForwardResult` from one forward pass.
        labels: ``[B, H, W]`` labels at output resolution.
        cfg: Loss weights and band width on the lattice.
    """
    cfg = cfg or LossConfig()
    labels = np.asarray(labels)
    dense = cross_entropy(result.refined, labels, ignore_index)
    total = dense
    point_value = 0.0
    if cfg.lambda_point and any(len(p) for p in result.points):
        point = point_cross_entropy(result.refined, labels, result.points, ignore_index)
        total = total + point * cfg.lambda_point
        point_value = point.item()
    band_value = 0.0
    if result.attention is not None and cfg.lambda_band:
        height0, width0 = result.t0.shape[-2:]
        stride = labels.shape[-2] // height0
        coarse = lattice_labels(labels, stride)[..., :height0, :width0]
        band = np.stack([boundary_band(item, cfg.band_width, ignore_index).mask for item in coarse])
        regularizer = band_regularizer(result.attention, coarse, band, cfg.lambda_band, ignore_index)
        total = total + regularizer
        band_value = regularizer.item()
    return LossBreakdown(total=total, dense=dense.item(), point=point_value, band=band_value)
