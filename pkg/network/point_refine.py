"""
Uncertainty-guided point refinement.

Picks the output pixels with the smallest top-2 softmax margin and adds a
residual class-logit delta produced by a small MLP over bilinearly sampled
``T3`` and ``F_s`` features. Active in both training and inference.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from network.layers import Linear, Module
from utils.ops import sample_points, scatter_add_points
from utils.tensor import Tensor, concat, stack

logger = logging.getLogger(__name__)


@dataclass
class PointSet:
    """
    Attributes:
        indices: ``[K, 2]`` integer ``(y, x)`` at output resolution, ordered by margin
                 then row-major position.
        budget: Requested ``k``.
        margins: ``[K]`` margin of each selected pixel.
    """
    indices: np.ndarray
    budget: int
    margins: np.ndarray

    def __len__(self):
        return len(self.indices)


def uncertainty(logits: np.ndarray) -> np.ndarray:
    """
    Top-1 minus top-2 softmax probability per pixel.

    Args:
        logits: ``[N_class, H, W]`` or ``[B, N_class, H, W]`` scores (``N_class >= 2``).

    Returns:
        np.ndarray: Margins in ``[0, 1]``, class axis removed.
    """
    logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    axis = logits.ndim - 3
    if logits.shape[axis] < 2:
        raise ValueError("margin uncertainty needs at least two classes")
    shifted = logits - logits.max(axis=axis, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=axis, keepdims=True)
    top2 = -np.partition(-probs, 1, axis=axis)
    top1 = np.take(top2, 0, axis=axis)
    second = np.take(top2, 1, axis=axis)
    return np.clip(top1 - second, 0.0, 1.0)


def select_points(margins: np.ndarray, k: int) -> PointSet:
    """
    The ``k`` smallest margins of an ``[H, W]`` map; ties keep row-major order.
    """
    if k < 0:
        raise ValueError(f"point budget must be non-negative, got {k}")
    margins = np.asarray(margins)
    height, width = margins.shape
    flat = margins.reshape(-1)
    order = np.argsort(flat, kind='stable')[:min(k, flat.size)]
    indices = np.stack([order // width, order % width], axis=1).astype(int)
    return PointSet(indices=indices, budget=k, margins=flat[order])


def budget_for(height: int, width: int, fraction: float) -> int:
    """Point budget as a fraction of output pixels, at least one point when enabled."""
    if fraction <= 0:
        return 0
    return max(1, int(round(fraction * height * width)))


class PointRefiner(Module):
    """
    Residual point MLP: ``in -> hidden -> ReLU -> hidden -> ReLU -> N_class``.

    The final layer starts at zero so refinement is a no-op at initialisation.

    Args:
        semantic_channels (int): Channels of ``T3``.
        structural_channels (int): Channels of ``F_s``.
        num_classes (int): Delta width.
        hidden (int): Hidden width.
        budget_fraction (float): Fraction of output pixels refined.
    """

    def __init__(self, semantic_channels: int, structural_channels: int, num_classes: int = 6,
                 hidden: int = 64, budget_fraction: float = 0.01, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.budget_fraction = budget_fraction
        self.fc1 = Linear(semantic_channels + structural_channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, hidden, rng=rng, dtype=dtype)
        self.fc3 = Linear(hidden, num_classes, rng=rng, dtype=dtype, zero_init=True)

    def mlp(self, features: Tensor) -> Tensor:
        return self.fc3(self.fc2(self.fc1(features).relu()).relu())

    def select(self, logits: Tensor) -> List[PointSet]:
        """One point set per batch item from the dense logits."""
        margins = uncertainty(logits.data)
        height, width = margins.shape[-2:]
        k = budget_for(height, width, self.budget_fraction)
        return [select_points(m, k) for m in margins]

    def refine_one(self, points: PointSet, t3: Tensor, fine_map: Tensor, logits: Tensor) -> Tensor:
        """
        Refine one image.

        Args:
            points: Selected pixels at logit resolution.
            t3: ``[C, H0, W0]``.
            fine_map: ``[C_s, H_s, W_s]``.
            logits: ``[N_class, H, W]``.

        Returns:
            Tensor: Logits with deltas added at the selected pixels only.
        """
        if len(points) == 0:
            return logits
        height, width = logits.shape[-2:]
        coords = points.indices.astype(np.float64)
        semantic = sample_points(t3, _rescale(coords, (height, width), t3.shape[-2:]))
        structural = sample_points(fine_map, _rescale(coords, (height, width), fine_map.shape[-2:]))
        features = concat([semantic, structural], axis=0).transpose(1, 0)
        delta = self.mlp(features)
        return scatter_add_points(logits, points.indices[:, 0], points.indices[:, 1], delta)

    def refine(self, point_sets: Sequence[PointSet], t3: Tensor, fine_map: Tensor, logits: Tensor) -> Tensor:
        """Batched :meth:`refine_one`."""
        refined = [self.refine_one(points, t3[i], fine_map[i], logits[i])
                   for i, points in enumerate(point_sets)]
        return stack(refined, axis=0)

    def forward(self, t3: Tensor, fine_map: Tensor, logits: Tensor,
                point_sets: Optional[Sequence[PointSet]] = None):
        point_sets = point_sets if point_sets is not None else self.select(logits)
        return self.refine(point_sets, t3, fine_map, logits), point_sets


def _rescale(coords: np.ndarray, source: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Map output-pixel coordinates onto a smaller grid (align-corners)."""
    scaled = np.empty_like(coords)
    for axis in range(2):
        n_src, n_dst = source[axis], target[axis]
        factor = (n_dst - 1) / (n_src - 1) if n_src > 1 else 0.0
        scaled[:, axis] = coords[:, axis] * factor
    return scaled
