"""
Boundary-jitter annotation noise.

Only pixels inside the radius-``r`` band of a class transition can change; a
changed pixel takes a label drawn uniformly from the distinct labels of its
``(2r+1)^2`` window.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import IGNORE_INDEX
from utils.losses import boundary_band

logger = logging.getLogger(__name__)

DEFAULT_FLIP_PROB = 0.5


def perturb_labels(labels: np.ndarray, r: int, seed, flip_prob: float = DEFAULT_FLIP_PROB,
                   ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """
    Jitter class boundaries of a label map.

    Args:
        labels: ``[H, W]`` integer labels.
        r (int): Band radius; 0 returns an unchanged copy.
        seed: Anything ``numpy.random.default_rng`` accepts.
        flip_prob (float): Probability that a band pixel is redrawn.

    Returns:
        np.ndarray: New label map; the input is not modified.
    """
    if r < 0:
        raise ValueError(f"noise radius must be non-negative, got {r}")
    labels = np.asarray(labels)
    noisy = labels.copy()
    if r == 0:
        return noisy
    rng = np.random.default_rng(seed)
    band = boundary_band(labels, r, ignore_index).mask
    draws = rng.random(labels.shape)
    height, width = labels.shape
    for y, x in zip(*np.nonzero(band & (draws < flip_prob))):
        window = labels[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1]
        candidates = np.unique(window[window != ignore_index])
        noisy[y, x] = candidates[rng.integers(len(candidates))]
    return noisy


def changed_pixels(clean: np.ndarray, noisy: np.ndarray) -> np.ndarray:
    return np.asarray(clean) != np.asarray(noisy)


def perturb_samples(samples: Sequence[Tuple[np.ndarray, np.ndarray]], r: int, seed: int,
                    flip_prob: float = DEFAULT_FLIP_PROB) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Perturb the labels of every ``(image, labels)`` pair; image ``i`` uses stream ``[seed, i]``."""
    perturbed = [(image, perturb_labels(labels, r, [seed, i], flip_prob)) for i, (image, labels) in enumerate(samples)]
    if r > 0 and samples:
        rate = np.mean([changed_pixels(clean, noisy).mean()
                        for (_, clean), (_, noisy) in zip(samples, perturbed)])
        logger.info(f"Label noise r={r}: {rate:.2%} of pixels changed")
    return perturbed


def noise_summary(clean: Sequence[np.ndarray], noisy: Sequence[np.ndarray],
                  r: Optional[int] = None) -> dict:
    """Changed-pixel statistics for a perturbed label set."""
    changed = [changed_pixels(c, n) for c, n in zip(clean, noisy)]
    total = sum(int(c.size) for c in changed)
    flipped = sum(int(c.sum()) for c in changed)
    return {'r': r, 'pixels': total, 'changed': flipped, 'rate': flipped / total if total else 0.0}
