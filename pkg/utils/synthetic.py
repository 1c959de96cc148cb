"""
Procedural off-road scenes with the six terrain groups.

Layers, bottom to top: value-noise terrain (Smooth / Rough / Bumpy), elliptical
Forbidden blobs, a Background band above a wavy horizon, and thin vertical
Obstacle strokes. Every scene draws from ``default_rng([seed, index])``.
"""

import logging
from typing import Tuple

import numpy as np

from config import CLASS_COLORS, SceneConfig
from utils.ops import interpolation_matrix

logger = logging.getLogger(__name__)

SMOOTH, ROUGH, BUMPY, FORBIDDEN, OBSTACLE, BACKGROUND = range(6)

# terrain thresholds on min-max normalised noise
SMOOTH_BELOW = 0.35
BUMPY_ABOVE = 0.72


def value_noise(rng: np.random.Generator, height: int, width: int, cells: int = 4,
                octaves: int = 3, persistence: float = 0.5) -> np.ndarray:
    """
    Fractal value noise: random lattices bilinearly upsampled and summed over octaves.

    Returns:
        np.ndarray: ``[height, width]`` in ``[0, 1]``.
    """
    total = np.zeros((height, width))
    amplitude, norm = 1.0, 0.0
    for octave in range(octaves):
        n = cells * 2 ** octave + 1
        grid = rng.random((n, n))
        total += amplitude * (interpolation_matrix(n, height) @ grid @ interpolation_matrix(n, width).T)
        norm += amplitude
        amplitude *= persistence
    return total / norm


def _normalise(field: np.ndarray) -> np.ndarray:
    low, high = field.min(), field.max()
    if high - low < 1e-12:
        return np.zeros_like(field)
    return (field - low) / (high - low)


def _horizon(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    base = rng.uniform(0.15, 0.35) * height
    phase = rng.uniform(0, 2 * np.pi)
    wobble = rng.uniform(0.02, 0.06) * height
    columns = np.arange(width)
    return np.round(base + wobble * np.sin(2 * np.pi * columns / width * rng.uniform(0.5, 2.0) + phase)).astype(int)


def generate_labels(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    height, width = cfg.height, cfg.width
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]

    terrain = _normalise(value_noise(rng, height, width))
    labels = np.full((height, width), ROUGH, dtype=np.uint8)
    labels[terrain < SMOOTH_BELOW] = SMOOTH
    labels[terrain > BUMPY_ABOVE] = BUMPY

    horizon = _horizon(rng, height, width)
    for _ in range(rng.integers(cfg.forbidden_blobs[0], cfg.forbidden_blobs[1] + 1)):
        cy = rng.uniform(horizon.mean() + 0.1 * height, height)
        cx = rng.uniform(0, width)
        ry = rng.uniform(0.05, 0.15) * height
        rx = rng.uniform(0.08, 0.25) * width
        labels[((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0] = FORBIDDEN

    labels[rows < horizon[None, :]] = BACKGROUND

    for _ in range(rng.integers(cfg.obstacle_strokes[0], cfg.obstacle_strokes[1] + 1)):
        stroke = int(rng.integers(1, 4))
        x0 = int(rng.integers(0, width - stroke + 1))
        top = int(rng.integers(0, max(1, horizon[x0])))
        bottom = int(rng.integers(min(height - 1, horizon[x0] + height // 8), height)) + 1
        labels[top:bottom, x0:x0 + stroke] = OBSTACLE
    return labels


def render_image(rng: np.random.Generator, labels: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    """
    Colour each pixel by its class centre plus shared texture noise.

    ``overlap`` pulls every class centre towards the common mean colour.

    Returns:
        np.ndarray: ``[3, H, W]`` uint8.
    """
    colors = np.asarray(CLASS_COLORS, dtype=np.float64)
    centers = (1.0 - cfg.overlap) * colors + cfg.overlap * colors.mean(axis=0, keepdims=True)
    image = centers[labels].transpose(2, 0, 1)
    texture = np.stack([value_noise(rng, cfg.height, cfg.width, cells=8, octaves=2) for _ in range(3)])
    grain = rng.normal(0.0, 0.25, size=image.shape)
    image = image + cfg.noise_amplitude * (2.0 * texture - 1.0 + grain)
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def generate_scene(cfg: SceneConfig, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Deterministic scene ``index`` of the dataset seeded by ``cfg.seed``.

    Returns:
        tuple: ``(image [3, H, W] uint8, labels [H, W] uint8 in 0..5)``.

    Raises:
        ValueError: If the size is not a multiple of 16.
    """
    if cfg.height % 16 or cfg.width % 16:
        raise ValueError(f"scene size {cfg.height}x{cfg.width} must be divisible by 16")
    rng = np.random.default_rng([cfg.seed, index])
    labels = generate_labels(rng, cfg)
    return render_image(rng, labels, cfg), labels


def stroke_widths(labels: np.ndarray) -> np.ndarray:
    """Widths of horizontal Obstacle runs, one entry per run."""
    widths = []
    for row in np.asarray(labels) == OBSTACLE:
        padded = np.concatenate([[False], row, [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        widths.extend(edges[1::2] - edges[0::2])
    return np.asarray(widths, dtype=int)


def has_thin_obstacle(labels: np.ndarray, max_width: int = 3) -> bool:
    widths = stroke_widths(labels)
    return bool(widths.size) and bool(widths.min() <= max_width)
