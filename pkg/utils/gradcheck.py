"""
Central finite-difference checks of reverse-mode gradients.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from utils.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst_index: Optional[tuple]

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradient(fn: Callable[[], Tensor], tensor: Tensor, points: int = 100, eps: float = 1e-5,
                   rng: Optional[np.random.Generator] = None, floor: float = 1e-4) -> GradCheckResult:
    """
    Compare ``tensor.grad`` after ``fn().backward()`` with central differences.

    Args:
        fn: Recomputes the scalar loss from the current payload of ``tensor``.
        tensor: Leaf with ``requires_grad=True`` and float64 data.
        points: Number of randomly drawn entries (all entries when fewer).
        eps: Perturbation size.

    Returns:
        GradCheckResult: Worst relative error over the checked entries.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tensor.zero_grad()
    fn().backward()
    analytic = tensor.grad.copy() if tensor.grad is not None else np.zeros_like(tensor.data)
    flat_count = tensor.data.size
    chosen = np.arange(flat_count) if flat_count <= points else rng.choice(flat_count, size=points, replace=False)
    original = tensor.data.copy()
    worst, worst_index = 0.0, None
    for flat in chosen:
        index = np.unravel_index(flat, tensor.shape)
        plus = original.copy()
        plus[index] += eps
        tensor.data = plus
        f_plus = fn().item()
        minus = original.copy()
        minus[index] -= eps
        tensor.data = minus
        f_minus = fn().item()
        tensor.data = original
        numeric = (f_plus - f_minus) / (2 * eps)
        error = relative_error(float(analytic[index]), numeric, floor)
        if error > worst:
            worst, worst_index = error, tuple(int(i) for i in index)
    tensor.data = original
    logger.debug(f"gradcheck over {len(chosen)} entries: max relative error {worst:.3e}")
    return GradCheckResult(max_rel_error=worst, checked=len(chosen), worst_index=worst_index)


def check_parameters(fn: Callable[[], Tensor], tensors: Sequence[Tensor], points: int = 100,
                     eps: float = 1e-5, seed: int = 0) -> GradCheckResult:
    """Run :func:`check_gradient` over several leaves with a shared budget per leaf."""
    rng = np.random.default_rng(seed)
    results = [check_gradient(fn, t, points=points, eps=eps, rng=rng) for t in tensors]
    worst = max(results, key=lambda r: r.max_rel_error)
    return GradCheckResult(max_rel_error=worst.max_rel_error, checked=sum(r.checked for r in results),
                           worst_index=worst.worst_index)
