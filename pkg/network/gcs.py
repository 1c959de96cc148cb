"""
Gated Cross-Scale Interaction.

Lattice tokens ``T2`` query the structural buffer exactly once. Two readouts
share the attention weights: the cross-attention output ``F_cs`` (CA) and a
texture/structure readout (TB) through a separate value projection. A sigmoid
gate over the enabled inputs decides how much of ``F_cs`` enters ``T3``, and a
pointwise head turns ``T3`` into class logits at input resolution.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np

from network.bgc import StructuralBuffer
from network.layers import Conv2d, Linear, Module
from utils.ops import bilinear_resize, lattice, softmax, tokens
from utils.tensor import Tensor

logger = logging.getLogger(__name__)


class UnknownGateConfig(ValueError):
    """Raised when a gate preset name is not recognised."""
    pass


@dataclass(frozen=True)
class GateConfig:
    """
    Which signals feed the gate pre-activation. ``T2`` always does; ``CA`` is mandatory.

    Attributes:
        name: Preset name (``"1-way CA"`` ...).
        inputs: Subset of ``{"CA", "TB", "T0"}``.
    """
    name: str
    inputs: FrozenSet[str]

    @property
    def uses_tb(self) -> bool:
        return 'TB' in self.inputs

    @property
    def uses_t0(self) -> bool:
        return 'T0' in self.inputs


GATE_PRESETS: Dict[str, GateConfig] = {
    '1-way CA': GateConfig('1-way CA', frozenset({'CA'})),
    '2-way CA+T0': GateConfig('2-way CA+T0', frozenset({'CA', 'T0'})),
    '2-way CA+TB': GateConfig('2-way CA+TB', frozenset({'CA', 'TB'})),
    '3-way CA+TB+T0': GateConfig('3-way CA+TB+T0', frozenset({'CA', 'TB', 'T0'})),
}

GATE_ALIASES: Dict[str, str] = {
    'ca': '1-way CA',
    'ca-t0': '2-way CA+T0',
    'ca-tb': '2-way CA+TB',
    'ca-tb-t0': '3-way CA+TB+T0',
}

DEFAULT_GATE = '3-way CA+TB+T0'
# fixed unit gate (T3 = T2 + F_cs) without gate parameters
UNIT_GATE = 'unit'


def resolve_gate(name: str) -> Optional[GateConfig]:
    """
    Look up a gate preset by its table name or CLI alias; ``'unit'`` gives ``None``.

    Raises:
        UnknownGateConfig: If neither matches.
    """
    if name == UNIT_GATE:
        return None
    key = GATE_ALIASES.get(name, name)
    if key not in GATE_PRESETS:
        choices = sorted(GATE_PRESETS) + sorted(GATE_ALIASES) + [UNIT_GATE]
        raise UnknownGateConfig(f"unknown gate config {name!r}; expected one of {choices}")
    return GATE_PRESETS[key]


@dataclass
class CrossScaleReadout:
    """
    Attributes:
        f_cs: ``[B, C, H0, W0]`` cross-attention output.
        tb: ``[B, C, H0, W0]`` second readout, present when the gate uses TB.
        attention: ``[B, N, M]`` rows sum to 1.
    """
    f_cs: Tensor
    tb: Optional[Tensor]
    attention: Tensor


class GatedCrossScaleInteraction(Module):
    """
    Args:
        embed_dim (int): Lattice channels ``C``.
        num_classes (int): Logit channels.
        gate (str | GateConfig | None): Gate preset; ``None`` means a fixed unit gate
            (``T3 = T2 + F_cs``) without learnable gate parameters.
        key_dim (int, optional): ``d_k`` of the buffer keys.
        zero_init_gate (bool): Start all gate projections at zero (``g = 0.5``).
    """

    def __init__(self, embed_dim: int = 32, num_classes: int = 6, gate=DEFAULT_GATE,
                 key_dim: Optional[int] = None, zero_init_gate: bool = False,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        key_dim = key_dim or embed_dim
        self.gate_config = resolve_gate(gate) if isinstance(gate, str) else gate
        self.query_proj = Linear(embed_dim, key_dim, rng=rng, dtype=dtype)
        if self.gate_config is not None:
            self.w_t = Conv2d(embed_dim, embed_dim, 1, rng=rng, dtype=dtype, zero_init=zero_init_gate)
            self.w_s = Conv2d(embed_dim, embed_dim, 1, bias=False, rng=rng, dtype=dtype, zero_init=zero_init_gate)
            if self.gate_config.uses_tb:
                self.tb_value_proj = Linear(embed_dim, embed_dim, rng=rng, dtype=dtype)
                self.w_b = Conv2d(embed_dim, embed_dim, 1, bias=False, rng=rng, dtype=dtype,
                                  zero_init=zero_init_gate)
            if self.gate_config.uses_t0:
                self.w_0 = Conv2d(embed_dim, embed_dim, 1, bias=False, rng=rng, dtype=dtype,
                                  zero_init=zero_init_gate)
        self.fuse_calls = 0

    def cross_scale_attention(self, t2: Tensor, buffer: StructuralBuffer) -> CrossScaleReadout:
        """
        ``F_cs = Attn(Q = T2, K = K_s, V = V_s)`` with a softmax over the ``M`` buffer tokens.
        """
        height, width = t2.shape[-2:]
        queries = self.query_proj(tokens(t2))
        d_k = queries.shape[-1]
        scores = (queries @ buffer.keys.transpose(0, 2, 1)) * (1.0 / math.sqrt(d_k))
        attention = softmax(scores, axis=-1)
        f_cs = lattice(attention @ buffer.values, height, width)
        tb = None
        if self.gate_config is not None and self.gate_config.uses_tb:
            tb = lattice(attention @ self.tb_value_proj(buffer.values), height, width)
        return CrossScaleReadout(f_cs=f_cs, tb=tb, attention=attention)

    def gate(self, t2: Tensor, f_cs: Tensor, t0: Optional[Tensor] = None,
             tb: Optional[Tensor] = None) -> Tensor:
        """
        ``g = sigmoid(W_T T2 + W_S F_cs [+ W_B TB] [+ W_0 T0])``, elementwise.

        Inputs disabled by the preset are ignored and have no parameters.
        """
        if self.gate_config is None:
            return Tensor(np.ones(f_cs.shape, dtype=f_cs.dtype))
        pre = self.w_t(t2) + self.w_s(f_cs)
        if self.gate_config.uses_tb:
            pre = pre + self.w_b(tb)
        if self.gate_config.uses_t0:
            pre = pre + self.w_0(t0)
        return pre.sigmoid()

    def fuse(self, t2: Tensor, f_cs: Tensor, g: Tensor) -> Tensor:
        """``T3 = T2 + g * F_cs``; invoked once per forward pass."""
        self.fuse_calls += 1
        return t2 + g * f_cs

    def forward(self, t2: Tensor, buffer: StructuralBuffer, t0: Tensor) -> Tuple[Tensor, Tensor, CrossScaleReadout]:
        self.fuse_calls = 0
        readout = self.cross_scale_attention(t2, buffer)
        g = self.gate(t2, readout.f_cs, t0=t0, tb=readout.tb)
        t3 = self.fuse(t2, readout.f_cs, g)
        return t3, g, readout


class LogitHead(Module):
    """Pointwise projection to class logits on the lattice, upsampled to input size."""

    def __init__(self, embed_dim: int = 32, num_classes: int = 6, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        super().__init__()
        self.projection = Conv2d(embed_dim, num_classes, 1, rng=rng, dtype=dtype)

    def forward(self, t3: Tensor, height: int, width: int) -> Tensor:
        return bilinear_resize(self.projection(t3), height, width)


def coarse_logits(head: LogitHead, t3: Tensor, height: int, width: int) -> Tensor:
    """Dense ``[B, N_class, H, W]`` logits from the fused lattice."""
    return head(t3, height, width)
