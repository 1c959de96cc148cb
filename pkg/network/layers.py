"""
Module and parameter plumbing for the decoder.

A ``Module`` discovers its parameters, buffers and sub-modules from its
attributes in assignment order, which makes parameter enumeration deterministic
and parameter names unique dotted paths (``encoder.stages.0.down.weight``).
"""

import logging
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from utils.ops import conv2d
from utils.tensor import Tensor, ShapeError

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """
    A learnable tensor. ``name`` is filled in by the owning module tree.

    Args:
        data: Initial value.
        requires_grad (bool): Frozen parameters keep ``requires_grad=False``.
    """

    def __init__(self, data, requires_grad: bool = True, name: Optional[str] = None):
        super().__init__(np.array(data, copy=True), requires_grad=requires_grad, name=name)

    def assign(self, value: np.ndarray) -> None:
        """Replace the payload in place (optimizer updates and checkpoint loads only)."""
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ShapeError(f"parameter {self.name}: expected shape {self.shape}, got {value.shape}")
        self.data = value


def fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    """Uniform ``[-b, b]`` with ``b = sqrt(6 / fan_in)``, suited to ReLU stacks."""
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class for every network component."""

    def __init__(self):
        self.training = True
        self._buffers: Dict[str, np.ndarray] = OrderedDict()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # --------------------------------------------------------------- traversal
    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith('_'):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, item in enumerate(value):
                    yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            else:
                yield from value.named_parameters(prefix=f"{path}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for key, value in self._buffers.items():
            yield f"{prefix}{key}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{key}.")

    def modules(self) -> Iterator['Module']:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # -------------------------------------------------------------- mode / grads
    def train(self, mode: bool = True) -> 'Module':
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # ------------------------------------------------------------------- state
    def state_dict(self) -> 'OrderedDict[str, np.ndarray]':
        """Named parameters followed by named buffers, as array copies."""
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy values from ``state`` into parameters and buffers.

        Raises:
            KeyError: In strict mode, if names are missing or unexpected.
        """
        params = dict(self.named_parameters())
        expected = set(params)
        buffer_owners = {}
        for module_prefix, module in self._named_modules():
            for key in module._buffers:
                buffer_owners[f"{module_prefix}{key}"] = (module, key)
        expected |= set(buffer_owners)
        if strict:
            missing = sorted(expected - set(state))
            unexpected = sorted(set(state) - expected)
            if missing or unexpected:
                raise KeyError(f"state mismatch; missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name in params:
                params[name].assign(value)
            elif name in buffer_owners:
                module, key = buffer_owners[name]
                module._buffers[key] = np.asarray(value, dtype=module._buffers[key].dtype).copy()

    def _named_modules(self, prefix: str = '') -> Iterator[Tuple[str, 'Module']]:
        yield prefix, self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(prefix=f"{prefix}{key}.")


class Conv2d(Module):
    """
    2-D convolution layer with fan-in scaled uniform initialisation.

    Args:
        in_channels (int), out_channels (int), kernel_size (int)
        stride (int), padding (int), groups (int)
        bias (bool): Adds a learnable per-channel offset.
        rng (np.random.Generator): Source of initial weights.
        dtype: Parameter dtype.
        zero_init (bool): Start from all-zero weights.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64, zero_init: bool = False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        init = np.zeros(shape, dtype=dtype) if zero_init else fan_in_uniform(rng, shape, fan_in, dtype)
        self.weight = Parameter(init)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class Linear(Module):
    """Affine map over the last axis: ``x @ W + b`` with ``W`` of shape ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64, zero_init: bool = False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (in_features, out_features)
        init = np.zeros(shape, dtype=dtype) if zero_init else fan_in_uniform(rng, shape, in_features, dtype)
        self.weight = Parameter(init)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class BatchNorm2d(Module):
    """
    Per-channel normalisation over ``(B, H, W)``.

    Training mode normalises with batch statistics and updates running averages;
    eval mode uses the frozen running averages.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps
        self._buffers['running_mean'] = np.zeros(channels, dtype=dtype)
        self._buffers['running_var'] = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        channels = x.shape[1]
        gamma = self.gamma.reshape(1, channels, 1, 1)
        beta = self.beta.reshape(1, channels, 1, 1)
        if self.training:
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
            self._buffers['running_mean'] = ((1 - self.momentum) * self._buffers['running_mean']
                                             + self.momentum * mean.data.reshape(-1))
            self._buffers['running_var'] = ((1 - self.momentum) * self._buffers['running_var']
                                            + self.momentum * unbiased)
            normalised = centered / (var + self.eps).sqrt()
        else:
            mean = self._buffers['running_mean'].reshape(1, channels, 1, 1)
            std = np.sqrt(self._buffers['running_var'] + self.eps).reshape(1, channels, 1, 1)
            normalised = (x - mean) / std
        return normalised * gamma + beta


class DepthwiseSeparable(Module):
    """
    Depthwise 3x3 convolution, ReLU, then pointwise 1x1 convolution.

    ``zero_init_pointwise`` makes the block output exactly zero at initialisation.
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, dtype=np.float64,
                 zero_init_pointwise: bool = False):
        super().__init__()
        self.depthwise = Conv2d(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
        self.pointwise = Conv2d(channels, channels, 1, rng=rng, dtype=dtype, zero_init=zero_init_pointwise)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x).relu())
