"""
Full cross-scale decoder: encoder, GLTR, BGC, GCS, logit head and point refinement.

Ablation variants switch components off structurally; a disabled component
owns no parameters.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import ModelConfig, NUM_CLASSES
from network.bgc import BoundaryGuidedCorrection, StructuralBuffer
from network.encoder import FeaturePyramid, PyramidEncoder
from network.gcs import CrossScaleReadout, GatedCrossScaleInteraction, LogitHead, coarse_logits
from network.gltr import GlobalLocalTokenRefinement
from network.layers import Module
from network.point_refine import PointRefiner, PointSet
from utils.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariantSpec:
    """
    One row of the incremental ablation chain.

    Attributes:
        name: Row name.
        gltr: Softmax scale weights, class attention and local refinement.
        bgc: Structural buffer consulted by cross-scale attention (unit gate when ``gate`` is off).
        gate: Learned gate.
        point: Point refinement.
    """
    name: str
    gltr: bool
    bgc: bool
    gate: bool
    point: bool


VARIANTS: Dict[str, VariantSpec] = {
    'Baseline': VariantSpec('Baseline', gltr=False, bgc=False, gate=False, point=False),
    '+GLTR': VariantSpec('+GLTR', gltr=True, bgc=False, gate=False, point=False),
    '+BGC': VariantSpec('+BGC', gltr=True, bgc=True, gate=False, point=False),
    '+GCS-no-point': VariantSpec('+GCS-no-point', gltr=True, bgc=True, gate=True, point=False),
    '+GCS-point': VariantSpec('+GCS-point', gltr=True, bgc=True, gate=True, point=True),
}
VARIANT_ORDER = tuple(VARIANTS)
FULL_VARIANT = '+GCS-point'


class UnknownVariant(ValueError):
    """Raised when a variant name is not part of the ablation chain."""
    pass


def resolve_variant(name: str) -> VariantSpec:
    if name not in VARIANTS:
        raise UnknownVariant(f"unknown variant {name!r}; expected one of {list(VARIANT_ORDER)}")
    return VARIANTS[name]


@dataclass
class ForwardResult:
    """
    Everything one forward pass produces; losses read what they need.

    Attributes:
        logits: Coarse dense logits ``[B, N_class, H, W]``.
        refined: Logits after point refinement (``logits`` itself when disabled).
        points: Selected points per image (empty sets when disabled).
        attention: Class attention ``[B, N_class, N]`` or ``None`` without GLTR.
        scale_weights: ``[B, L]``.
        t0, t2, t3: Bottleneck lattices.
        gate: Gate values, ``None`` without BGC.
        buffer: Structural buffer, ``None`` without BGC.
        readout: Cross-scale readout, ``None`` without BGC.
    """
    logits: Tensor
    refined: Tensor
    points: List[PointSet]
    attention: Optional[Tensor]
    scale_weights: Tensor
    t0: Tensor
    t2: Tensor
    t3: Tensor
    gate: Optional[Tensor] = None
    buffer: Optional[StructuralBuffer] = None
    readout: Optional[CrossScaleReadout] = None
    pyramid: Optional[FeaturePyramid] = None


class CSTRSegmenter(Module):
    """
    Args:
        model_cfg (ModelConfig): Widths, gate preset, point budget and variant.
        num_classes (int): Output classes.
        seed (int): Initialisation seed; one stream feeds every component in order.
        dtype: Parameter dtype.
    """

    def __init__(self, model_cfg: Optional[ModelConfig] = None, num_classes: int = NUM_CLASSES,
                 seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg = model_cfg or ModelConfig()
        self.variant = resolve_variant(cfg.variant)
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        widths = tuple(cfg.widths)
        self.encoder = PyramidEncoder(3, widths, rng=rng, dtype=dtype)
        self.gltr = GlobalLocalTokenRefinement(
            widths, embed_dim=cfg.embed_dim, num_classes=num_classes,
            bottleneck=cfg.bottleneck if self.variant.gltr else 'uniform',
            class_attention=self.variant.gltr, rng=rng, dtype=dtype)
        self.bgc = None
        self.gcs = None
        if self.variant.bgc:
            self.bgc = BoundaryGuidedCorrection(widths[1], embed_dim=cfg.embed_dim,
                                                edge_channels=cfg.edge_channels,
                                                grid_channels=cfg.grid_channels,
                                                pool_size=cfg.pool_size, rng=rng, dtype=dtype)
            self.gcs = GatedCrossScaleInteraction(cfg.embed_dim, num_classes,
                                                  gate=cfg.gate if self.variant.gate else None,
                                                  rng=rng, dtype=dtype)
        self.head = LogitHead(cfg.embed_dim, num_classes, rng=rng, dtype=dtype)
        self.point_refiner = None
        if self.variant.point and cfg.point_refine:
            self.point_refiner = PointRefiner(cfg.embed_dim, widths[1], num_classes,
                                              hidden=cfg.point_hidden, budget_fraction=cfg.point_budget,
                                              rng=rng, dtype=dtype)
        self.dtype = np.dtype(dtype)
        logger.debug(f"Built {self.variant.name} with {self.parameter_count()} parameters")

    @property
    def uses_point_refine(self) -> bool:
        return self.point_refiner is not None

    def forward(self, images, point_sets: Optional[Sequence[PointSet]] = None) -> ForwardResult:
        """
        Args:
            images: ``[B, 3, H, W]`` float tensor or array.
            point_sets: Fixed refinement points (gradient checks); selected from the
                        coarse logits when omitted.
        """
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.dtype))
        if images.ndim == 3:
            images = images.unsqueeze(0)
        height, width = images.shape[-2:]
        pyramid = self.encoder(images)
        gltr_out = self.gltr(pyramid)
        t3, gate, buffer, readout = gltr_out.t2, None, None, None
        if self.bgc is not None:
            buffer = self.bgc(pyramid.fine_map)
            t3, gate, readout = self.gcs(gltr_out.t2, buffer, gltr_out.t0)
        logits = coarse_logits(self.head, t3, height, width)
        refined, points = logits, [_empty_points() for _ in range(images.shape[0])]
        if self.point_refiner is not None:
            refined, points = self.point_refiner(t3, pyramid.fine_map, logits, point_sets)
        return ForwardResult(logits=logits, refined=refined, points=list(points),
                             attention=gltr_out.attention, scale_weights=gltr_out.weights,
                             t0=gltr_out.t0, t2=gltr_out.t2, t3=t3, gate=gate, buffer=buffer,
                             readout=readout, pyramid=pyramid)

    def predict(self, images) -> np.ndarray:
        """Label maps ``[B, H, W]`` from the refined logits (eval mode statistics)."""
        was_training = self.training
        self.eval()
        try:
            result = self.forward(images)
        finally:
            self.train(was_training)
        return result.refined.data.argmax(axis=1).astype(np.uint8)


def _empty_points() -> PointSet:
    return PointSet(indices=np.zeros((0, 2), dtype=int), budget=0, margins=np.zeros(0))
