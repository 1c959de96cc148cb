"""
Boundary-Guided Correction.

Extracts two kinds of fine-scale structural cues from the stride-4 map ``F_s``:
an edge path (fixed Sobel magnitude per channel, learnable pointwise projection)
and a grid path (``k x k`` average pooling, pointwise projection, bilinear
upsampling back). The concatenated cues are projected to keys and values and
kept as a read-only buffer; nothing here writes to the semantic stream.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from network.encoder import InputSizeError
from network.layers import Conv2d, Linear, Module
from utils.ops import avg_pool2d, bilinear_resize, sobel_response, tokens
from utils.tensor import Tensor, concat

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StructuralBuffer:
    """
    Buffered structural tokens ``S = {K_s, V_s}``.

    Attributes:
        keys: ``[B, M, d_k]``.
        values: ``[B, M, C]``.
        height, width: Fine-scale extents with ``M = height * width``.
    """
    keys: Tensor
    values: Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.keys.shape[:2] != self.values.shape[:2]:
            raise ValueError(f"keys {self.keys.shape} and values {self.values.shape} disagree on token count")
        self.keys.data.flags.writeable = False
        self.values.data.flags.writeable = False

    @property
    def token_count(self) -> int:
        return self.keys.shape[1]


class EdgePath(Module):
    """Sobel magnitude per input channel followed by a pointwise projection."""

    def __init__(self, in_channels: int, out_channels: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        super().__init__()
        self.projection = Conv2d(in_channels, out_channels, 1, rng=rng, dtype=dtype)

    def forward(self, fine_map: Tensor) -> Tensor:
        return self.projection(sobel_response(fine_map))


class GridPath(Module):
    """
    Grid smoothing: ``k x k`` average pooling, pointwise projection, upsampling.

    Raises:
        InputSizeError: If the fine-scale extents are not divisible by ``pool_size``.
    """

    def __init__(self, in_channels: int, out_channels: int, pool_size: int = 2, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64):
        super().__init__()
        self.pool_size = pool_size
        self.projection = Conv2d(in_channels, out_channels, 1, bias=bias, rng=rng, dtype=dtype)

    def pooled(self, fine_map: Tensor) -> Tensor:
        height, width = fine_map.shape[-2:]
        if height % self.pool_size or width % self.pool_size:
            raise InputSizeError(f"fine map {height}x{width} not divisible by pool size {self.pool_size}")
        return avg_pool2d(fine_map, self.pool_size)

    def forward(self, fine_map: Tensor) -> Tensor:
        height, width = fine_map.shape[-2:]
        return bilinear_resize(self.projection(self.pooled(fine_map)), height, width)


class BoundaryGuidedCorrection(Module):
    """
    Args:
        in_channels (int): Channels of ``F_s``.
        embed_dim (int): Value width ``C``.
        key_dim (int): Key width ``d_k``.
        edge_channels (int): ``C_e``.
        grid_channels (int): ``C_g``.
        pool_size (int): Grid pooling size ``k``.
    """

    def __init__(self, in_channels: int, embed_dim: int = 32, key_dim: Optional[int] = None,
                 edge_channels: int = 16, grid_channels: int = 16, pool_size: int = 2,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        key_dim = key_dim or embed_dim
        self.edge = EdgePath(in_channels, edge_channels, rng=rng, dtype=dtype)
        self.grid = GridPath(in_channels, grid_channels, pool_size=pool_size, rng=rng, dtype=dtype)
        self.key_proj = Linear(edge_channels + grid_channels, key_dim, rng=rng, dtype=dtype)
        self.value_proj = Linear(edge_channels + grid_channels, embed_dim, rng=rng, dtype=dtype)

    def edge_path(self, fine_map: Tensor) -> Tensor:
        return self.edge(fine_map)

    def grid_path(self, fine_map: Tensor) -> Tensor:
        return self.grid(fine_map)

    def build_buffer(self, edge_features: Tensor, grid_features: Tensor) -> StructuralBuffer:
        """
        Concatenate both paths and project to keys and values, row-major tokens.

        Raises:
            InputSizeError: If the two paths disagree on spatial extents.
        """
        if edge_features.shape[-2:] != grid_features.shape[-2:]:
            raise InputSizeError(
                f"edge {edge_features.shape[-2:]} and grid {grid_features.shape[-2:]} extents differ")
        height, width = edge_features.shape[-2:]
        cues = tokens(concat([edge_features, grid_features], axis=1))
        return StructuralBuffer(keys=self.key_proj(cues), values=self.value_proj(cues),
                                height=height, width=width)

    def forward(self, fine_map: Tensor) -> StructuralBuffer:
        return self.build_buffer(self.edge_path(fine_map), self.grid_path(fine_map))
