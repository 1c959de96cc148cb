"""
Optimisation: polynomial schedule with linear warm-up, global-norm clipping and
SGD with momentum and L2 weight decay.
"""

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from config import OptimConfig

logger = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    """Raised when a gradient holds NaN or infinite values."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


def poly_lr(iteration: int, cfg: OptimConfig) -> float:
    """
    Linear ramp from 0 to ``base_lr`` over ``warmup_iters``, then
    ``base_lr * (1 - progress) ** poly_power`` reaching 0 at ``max_iters``.
    """
    if iteration < 0 or iteration > cfg.max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    if iteration < cfg.warmup_iters:
        return cfg.base_lr * iteration / cfg.warmup_iters
    decay = cfg.max_iters - cfg.warmup_iters
    if decay <= 0:
        return cfg.base_lr
    progress = (iteration - cfg.warmup_iters) / decay
    return cfg.base_lr * (1.0 - progress) ** cfg.poly_power


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float = 35.0) -> Tuple[Dict[str, np.ndarray], float]:
    """
    Scale every gradient by ``max_norm / norm`` when the global L2 norm exceeds ``max_norm``.

    Returns:
        tuple: ``(grads, norm before clipping)``; unchanged arrays are returned as-is.

    Raises:
        NonFiniteGradient: Naming the first offending parameter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}, norm


def sgd_momentum_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                      velocity: Dict[str, np.ndarray], lr: float, momentum: float,
                      weight_decay: float) -> Dict[str, np.ndarray]:
    """
    ``v <- momentum * v + (grad + weight_decay * param)``; ``param <- param - lr * v``.

    ``velocity`` is updated in place (missing entries start at zero).

    Returns:
        dict: Updated parameter values.
    """
    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(value)
        v = momentum * v + (grad + weight_decay * value)
        velocity[name] = v.astype(value.dtype)
        updated[name] = (value - lr * v).astype(value.dtype)
    return updated


class SGD:
    """
    SGD with momentum over a model's named parameters.

    Args:
        named_parameters: ``(name, Parameter)`` pairs.
        momentum (float), weight_decay (float), clip_norm (float)
    """

    def __init__(self, named_parameters: Iterable, momentum: float = 0.9, weight_decay: float = 4e-5,
                 clip_norm: Optional[float] = 35.0):
        self.params = list(named_parameters)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.velocity: Dict[str, np.ndarray] = {}
        self.last_norm = 0.0

    @classmethod
    def from_config(cls, cfg: OptimConfig, named_parameters: Iterable) -> 'SGD':
        return cls(named_parameters, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                   clip_norm=cfg.clip_norm)

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params
                if p.requires_grad}

    def step(self, lr: float) -> float:
        """
        Clip, then apply one update at learning rate ``lr``.

        Returns:
            float: Global gradient norm before clipping.

        Raises:
            NonFiniteGradient: If any gradient is NaN or infinite.
        """
        grads = self.gradients()
        if self.clip_norm:
            grads, self.last_norm = clip_global_norm(grads, self.clip_norm)
        else:
            self.last_norm = global_norm(grads)
        values = {name: p.data for name, p in self.params if name in grads}
        updated = sgd_momentum_step(values, grads, self.velocity, lr, self.momentum, self.weight_decay)
        for name, p in self.params:
            if name in updated:
                p.assign(updated[name])
        return self.last_norm

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {f"velocity.{k}": v.copy() for k, v in self.velocity.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.velocity = {k[len('velocity.'):]: np.array(v) for k, v in state.items() if k.startswith('velocity.')}


def lr_trace(cfg: OptimConfig) -> List[float]:
    """Learning rate at every iteration ``0..max_iters``."""
    return [poly_lr(i, cfg) for i in range(cfg.max_iters + 1)]
