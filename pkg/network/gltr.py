"""
Global-Local Token Refinement.

Consolidates the feature pyramid into a compact bottleneck lattice ``T0`` at
stride 16, lets learnable class prototypes attend over the lattice tokens, hands
the class tokens back to the lattice through the transposed attention (``T1``) and
restores local coherence with a residual depthwise-pointwise block (``T2``).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from network.encoder import FeaturePyramid
from network.layers import Conv2d, DepthwiseSeparable, Linear, Module, Parameter
from utils.ops import bilinear_resize, global_average_pool, lattice, softmax, tokens
from utils.tensor import Tensor, concat

logger = logging.getLogger(__name__)

BOTTLENECK_MODES = ('softmax', 'uniform')


@dataclass
class ClassAttentionResult:
    """
    Attributes:
        attention: ``[B, N_class, N]``, rows sum to 1.
        class_tokens: ``[B, N_class, C]``.
        t1: Lattice ``[B, C, H0, W0]`` after redistribution.
    """
    attention: Tensor
    class_tokens: Tensor
    t1: Tensor


def redistribute(attention: Tensor, class_tokens: Tensor) -> Tensor:
    """
    Hand class tokens back to the lattice: token ``i`` receives
    ``sum_c A[c, i] * class_token[c]``.

    Args:
        attention: ``[B, N_class, N]``.
        class_tokens: ``[B, N_class, C]``.

    Returns:
        Tensor: ``[B, N, C]`` token view of ``T1``.
    """
    return attention.transpose(0, 2, 1) @ class_tokens


def class_attention_tokens(token_view: Tensor, prototypes: Tensor, key_proj: Linear,
                           value_proj: Linear) -> ClassAttentionResult:
    """
    Cross-attention from class prototypes to lattice tokens.

    Args:
        token_view: ``[B, N, C]`` bottleneck tokens.
        prototypes: ``[N_class, d_k]``.
        key_proj, value_proj: Token projections to ``d_k`` and ``C``.

    Returns:
        ClassAttentionResult: with ``t1`` left in token view ``[B, N, C]``.
    """
    d_k = prototypes.shape[-1]
    keys = key_proj(token_view)
    values = value_proj(token_view)
    scores = (prototypes @ keys.transpose(0, 2, 1)) * (1.0 / math.sqrt(d_k))
    attention = softmax(scores, axis=-1)
    class_tokens = attention @ values
    return ClassAttentionResult(attention=attention, class_tokens=class_tokens,
                                t1=redistribute(attention, class_tokens))


class GlobalLocalTokenRefinement(Module):
    """
    Args:
        level_channels (Sequence[int]): Channels of each pyramid level.
        embed_dim (int): Lattice channels ``C``.
        num_classes (int): Number of class prototypes.
        key_dim (int, optional): ``d_k``; defaults to ``embed_dim``.
        bottleneck (str): ``'softmax'`` learns scale weights from pooled features;
                          ``'uniform'`` fixes them to ``1 / L``.
        class_attention (bool): Disable to pass ``T0`` straight through (baseline decoder).
        zero_init_refine (bool): Zero the pointwise layer of the local refinement.
    """

    def __init__(self, level_channels: Sequence[int], embed_dim: int = 32, num_classes: int = 6,
                 key_dim: Optional[int] = None, bottleneck: str = 'softmax', class_attention: bool = True,
                 zero_init_refine: bool = False, rng: Optional[np.random.Generator] = None, dtype=np.float64):
        super().__init__()
        if bottleneck not in BOTTLENECK_MODES:
            raise ValueError(f"bottleneck must be one of {BOTTLENECK_MODES}, got {bottleneck!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        key_dim = key_dim or embed_dim
        self.level_channels = tuple(level_channels)
        self.embed_dim = embed_dim
        self.bottleneck = bottleneck
        self.use_class_attention = class_attention
        self.projections = [Conv2d(c, embed_dim, 1, rng=rng, dtype=dtype) for c in self.level_channels]
        if bottleneck == 'softmax':
            self.w_alpha = Parameter(np.zeros(sum(self.level_channels), dtype=dtype))
        if class_attention:
            bound = 1.0 / math.sqrt(key_dim)
            self.prototypes = Parameter(rng.uniform(-bound, bound, size=(num_classes, key_dim)).astype(dtype))
            self.key_proj = Linear(embed_dim, key_dim, rng=rng, dtype=dtype)
            self.value_proj = Linear(embed_dim, embed_dim, rng=rng, dtype=dtype)
            self.refine = DepthwiseSeparable(embed_dim, rng=rng, dtype=dtype, zero_init_pointwise=zero_init_refine)

    # ---------------------------------------------------------------- stage 1
    def scale_weights(self, pyramid: FeaturePyramid) -> Tensor:
        """
        Softmax over levels of ``w_alpha_l . GAP(F_l)``.

        Returns:
            Tensor: ``[B, L]`` simplex weights.
        """
        batch = pyramid.levels[0].shape[0]
        count = len(pyramid.levels)
        if self.bottleneck == 'uniform':
            return Tensor(np.full((batch, count), 1.0 / count, dtype=pyramid.levels[0].dtype))
        logits = []
        offset = 0
        for level in pyramid.levels:
            channels = level.shape[1]
            w = self.w_alpha[offset:offset + channels].reshape(channels, 1)
            logits.append(global_average_pool(level) @ w)
            offset += channels
        return softmax(concat(logits, axis=1), axis=1)

    def project_level(self, index: int, level: Tensor, height: int, width: int) -> Tensor:
        """``phi_l``: pointwise projection to ``C`` then bilinear resize to the lattice."""
        return bilinear_resize(self.projections[index](level), height, width)

    def aggregate_bottleneck(self, pyramid: FeaturePyramid, weights: Tensor) -> Tensor:
        """
        ``T0 = sum_l weight_l * phi_l(F_l)`` on the stride-16 lattice.

        Returns:
            Tensor: ``[B, C, H0, W0]``.
        """
        height, width = pyramid.levels[-1].shape[-2:]
        t0 = None
        for index, level in enumerate(pyramid.levels):
            projected = self.project_level(index, level, height, width)
            w = weights[:, index].reshape(-1, 1, 1, 1)
            term = projected * w
            t0 = term if t0 is None else t0 + term
        return t0

    # ---------------------------------------------------------------- stage 2
    def class_attention(self, t0: Tensor) -> ClassAttentionResult:
        """
        Class-prototype cross-attention over ``T0`` tokens.

        Returns:
            ClassAttentionResult: ``t1`` as a lattice shaped like ``T0``.
        """
        height, width = t0.shape[-2:]
        result = class_attention_tokens(tokens(t0), self.prototypes, self.key_proj, self.value_proj)
        result.t1 = lattice(result.t1, height, width)
        return result

    # ---------------------------------------------------------------- stage 3
    def local_refine(self, t1: Tensor) -> Tensor:
        """``T2 = T1 + phi(T1)``."""
        return t1 + self.refine(t1)

    def forward(self, pyramid: FeaturePyramid) -> 'GLTROutput':
        weights = self.scale_weights(pyramid)
        t0 = self.aggregate_bottleneck(pyramid, weights)
        if not self.use_class_attention:
            return GLTROutput(weights=weights, t0=t0, attention=None, t1=t0, t2=t0)
        result = self.class_attention(t0)
        t2 = self.local_refine(result.t1)
        return GLTROutput(weights=weights, t0=t0, attention=result.attention, t1=result.t1, t2=t2)


@dataclass
class GLTROutput:
    weights: Tensor
    t0: Tensor
    attention: Optional[Tensor]
    t1: Tensor
    t2: Tensor
