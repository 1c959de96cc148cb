"""
Small convolutional pyramid encoder producing the four-level feature pyramid.

Each stage: stride-2 3x3 convolution + batch norm + ReLU, then one residual
3x3 block ``relu(x + bn(conv(x)))``. Strides are 2, 4, 8, 16.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from network.layers import BatchNorm2d, Conv2d, Module
from utils.tensor import Tensor

logger = logging.getLogger(__name__)

PYRAMID_LEVELS = 4
DEFAULT_WIDTHS = (16, 32, 64, 128)


class InputSizeError(ValueError):
    """Raised when spatial extents violate a stride or pooling contract."""
    pass


@dataclass
class FeaturePyramid:
    """
    Encoder outputs.

    Attributes:
        levels: Four tensors ``[B, C_l, H / 2^(l+1), W / 2^(l+1)]``.
    """
    levels: List[Tensor]

    @property
    def fine_map(self) -> Tensor:
        """The stride-4 level, consumed by boundary-guided correction."""
        return self.levels[1]

    @property
    def strides(self) -> Tuple[int, ...]:
        return tuple(2 ** (i + 1) for i in range(len(self.levels)))

    def __len__(self):
        return len(self.levels)


class EncoderStage(Module):
    """One pyramid level: downsampling block followed by a residual block."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype):
        super().__init__()
        self.down = Conv2d(in_channels, out_channels, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.down_norm = BatchNorm2d(out_channels, dtype=dtype)
        self.res = Conv2d(out_channels, out_channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.res_norm = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.down_norm(self.down(x)).relu()
        return (x + self.res_norm(self.res(x))).relu()


class PyramidEncoder(Module):
    """
    Multi-scale encoder.

    Args:
        in_channels (int): Image channels (3).
        widths (Sequence[int]): Channel width per level.
        rng (np.random.Generator): Initialisation stream.
        dtype: Parameter dtype.
    """

    def __init__(self, in_channels: int = 3, widths: Sequence[int] = DEFAULT_WIDTHS,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64):
        super().__init__()
        if len(widths) != PYRAMID_LEVELS:
            raise ValueError(f"encoder needs {PYRAMID_LEVELS} widths, got {len(widths)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = tuple(widths)
        channels = [in_channels] + list(widths)
        self.stages = [EncoderStage(channels[i], channels[i + 1], rng, dtype) for i in range(PYRAMID_LEVELS)]

    def forward(self, images: Tensor) -> FeaturePyramid:
        return self.encode(images)

    def encode(self, images: Tensor) -> FeaturePyramid:
        """
        Run the encoder.

        Args:
            images: ``[B, 3, H, W]`` (or ``[3, H, W]``) with ``H, W`` divisible by 16 and >= 32.

        Returns:
            FeaturePyramid: Four levels at strides 2, 4, 8, 16.

        Raises:
            InputSizeError: If the extents are too small or not divisible by 16.
        """
        if images.ndim == 3:
            images = images.unsqueeze(0)
        height, width = images.shape[-2:]
        if height < 32 or width < 32 or height % 16 or width % 16:
            raise InputSizeError(
                f"input {height}x{width} must be at least 32x32 and divisible by 16; "
                f"pad the image to the next multiple of 16")
        levels = []
        x = images
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels=levels)

    @staticmethod
    def receptive_fields() -> List[Tuple[int, int]]:
        """
        ``(stride, radius)`` per level: feature ``o`` of a level depends only on
        input pixels within ``radius`` of ``o * stride`` (per axis).
        """
        fields = []
        jump, radius = 1, 0
        for _ in range(PYRAMID_LEVELS):
            radius += jump      # stride-2 3x3 conv, padding 1
            jump *= 2
            radius += jump      # residual 3x3 conv at the new stride
            fields.append((jump, radius))
        return fields
