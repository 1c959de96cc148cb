"""
Dense tensor with reverse-mode automatic differentiation.

Every value flowing through the decoder is a ``Tensor``: a numpy array plus an
optional tape node (``_backward`` closure and parent references). Gradients are
accumulated by ``backward`` in reverse topological order.

Principles:
1. Tensors are value-semantic; no op mutates ``data`` in place.
2. A tensor only records parents when at least one parent requires a gradient,
   so detached branches cost nothing and receive nothing.
3. Leaf gradients accumulate across ``backward`` calls until ``zero_grad``.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


class TensorDomainError(ValueError):
    """Raised when an operation receives values outside its mathematical domain."""
    pass


class ShapeError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""
    pass


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """
    A dense n-dimensional value with an optional gradient tape node.

    Args:
        data: Array-like payload. Python scalars and lists become numpy arrays of
              ``dtype`` (float64 unless given).
        requires_grad (bool): Whether gradients should be accumulated into ``grad``.
        dtype: Optional numpy dtype for conversion.
        name (str, optional): Diagnostic label, used for parameters.
    """

    __array_ufunc__ = None  # ndarray op Tensor defers to the Tensor reflected method

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if array.dtype.kind not in 'fc':
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward: Callable[[], None] = lambda: None
        self._prev: Tuple[Tensor, ...] = ()
        self._op = ''

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> 'Tensor':
        """Return a tape-free tensor sharing the same payload."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # --------------------------------------------------------------- tape glue
    @staticmethod
    def _lift(value, dtype) -> 'Tensor':
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=dtype))

    def _make(self, data: np.ndarray, parents: Iterable['Tensor'], op: str) -> 'Tensor':
        parents = tuple(parents)
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = parents
            out._op = op
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad, dtype=self.data.dtype), self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """
        Run reverse-mode accumulation from this tensor.

        Args:
            grad: Seed gradient. Defaults to ones, which requires a scalar tensor.

        Raises:
            ShapeError: If no seed is given and the tensor is not a scalar.
        """
        if not self.requires_grad:
            logger.debug("backward() on a tensor without a tape; nothing to do")
            return
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)

        topo = []
        visited = set()

        def build_topo(node):
            # iterative to survive deep graphs
            stack = [(node, False)]
            while stack:
                current, expanded = stack.pop()
                if expanded:
                    topo.append(current)
                    continue
                if id(current) in visited:
                    continue
                visited.add(id(current))
                stack.append((current, True))
                for parent in current._prev:
                    if id(parent) not in visited:
                        stack.append((parent, False))

        build_topo(self)

        # interior nodes start clean on every pass; leaves keep accumulating
        for node in topo:
            if node._prev:
                node.grad = None
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._prev and node.grad is not None:
                node._backward()

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other) -> 'Tensor':
        other = self._lift(other, self.dtype)
        out = self._make(self.data + other.data, (self, other), '+')

        def _backward():
            self._accumulate(out.grad)
            other._accumulate(out.grad)
        out._backward = _backward
        return out

    def __radd__(self, other) -> 'Tensor':
        return self + other

    def __neg__(self) -> 'Tensor':
        out = self._make(-self.data, (self,), 'neg')

        def _backward():
            self._accumulate(-out.grad)
        out._backward = _backward
        return out

    def __sub__(self, other) -> 'Tensor':
        other = self._lift(other, self.dtype)
        out = self._make(self.data - other.data, (self, other), '-')

        def _backward():
            self._accumulate(out.grad)
            other._accumulate(-out.grad)
        out._backward = _backward
        return out

    def __rsub__(self, other) -> 'Tensor':
        return self._lift(other, self.dtype) - self

    def __mul__(self, other) -> 'Tensor':
        other = self._lift(other, self.dtype)
        out = self._make(self.data * other.data, (self, other), '*')

        def _backward():
            self._accumulate(other.data * out.grad)
            other._accumulate(self.data * out.grad)
        out._backward = _backward
        return out

    def __rmul__(self, other) -> 'Tensor':
        return self * other

    def __truediv__(self, other) -> 'Tensor':
        other = self._lift(other, self.dtype)
        out = self._make(self.data / other.data, (self, other), '/')

        def _backward():
            self._accumulate(out.grad / other.data)
            other._accumulate(-out.grad * self.data / (other.data ** 2))
        out._backward = _backward
        return out

    def __rtruediv__(self, other) -> 'Tensor':
        return self._lift(other, self.dtype) / self

    def __pow__(self, exponent: float) -> 'Tensor':
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        out = self._make(self.data ** exponent, (self,), f'**{exponent}')

        def _backward():
            self._accumulate(exponent * self.data ** (exponent - 1) * out.grad)
        out._backward = _backward
        return out

    def __matmul__(self, other) -> 'Tensor':
        other = self._lift(other, self.dtype)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul needs operands with at least 2 dims, got {self.shape} @ {other.shape}")
        out = self._make(np.matmul(self.data, other.data), (self, other), '@')

        def _backward():
            self._accumulate(np.matmul(out.grad, np.swapaxes(other.data, -1, -2)))
            other._accumulate(np.matmul(np.swapaxes(self.data, -1, -2), out.grad))
        out._backward = _backward
        return out

    # -------------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        out = self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), 'sum')

        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))
        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ----------------------------------------------------------- elementwise
    def exp(self) -> 'Tensor':
        value = np.exp(self.data)
        out = self._make(value, (self,), 'exp')

        def _backward():
            self._accumulate(value * out.grad)
        out._backward = _backward
        return out

    def log(self) -> 'Tensor':
        if np.any(self.data <= 0):
            raise TensorDomainError("log() requires strictly positive inputs")
        out = self._make(np.log(self.data), (self,), 'log')

        def _backward():
            self._accumulate(out.grad / self.data)
        out._backward = _backward
        return out

    def sqrt(self) -> 'Tensor':
        if np.any(self.data < 0):
            raise TensorDomainError("sqrt() requires non-negative inputs")
        value = np.sqrt(self.data)
        out = self._make(value, (self,), 'sqrt')

        def _backward():
            self._accumulate(out.grad * 0.5 / value)
        out._backward = _backward
        return out

    def relu(self) -> 'Tensor':
        mask = self.data > 0
        out = self._make(np.where(mask, self.data, 0).astype(self.dtype), (self,), 'relu')

        def _backward():
            self._accumulate(out.grad * mask)
        out._backward = _backward
        return out

    def sigmoid(self) -> 'Tensor':
        # split by sign so large magnitudes never overflow exp()
        x = self.data
        value = np.empty_like(x)
        positive = x >= 0
        value[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
        ex = np.exp(x[~positive])
        value[~positive] = ex / (1.0 + ex)
        out = self._make(value, (self,), 'sigmoid')

        def _backward():
            self._accumulate(out.grad * value * (1.0 - value))
        out._backward = _backward
        return out

    # -------------------------------------------------------------- reshaping
    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self._make(self.data.reshape(shape), (self,), 'reshape')

        def _backward():
            self._accumulate(out.grad.reshape(self.shape))
        out._backward = _backward
        return out

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        out = self._make(np.transpose(self.data, axes), (self,), 'transpose')

        def _backward():
            self._accumulate(np.transpose(out.grad, inverse))
        out._backward = _backward
        return out

    def swapaxes(self, a: int, b: int) -> 'Tensor':
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, index) -> 'Tensor':
        out = self._make(self.data[index], (self,), 'getitem')

        def _backward():
            grad = np.zeros_like(self.data)
            np.add.at(grad, index, out.grad)
            self._accumulate(grad)
        out._backward = _backward
        return out

    def unsqueeze(self, axis: int) -> 'Tensor':
        shape = list(self.shape)
        axis = axis if axis >= 0 else self.ndim + 1 + axis
        shape.insert(axis, 1)
        return self.reshape(tuple(shape))

    def squeeze(self, axis: int) -> 'Tensor':
        if self.shape[axis] != 1:
            raise ShapeError(f"cannot squeeze axis {axis} of extent {self.shape[axis]}")
        shape = list(self.shape)
        del shape[axis]
        return self.reshape(tuple(shape))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis`` with gradient routing back to each part."""
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = tensors[0]._make(data, tensors, 'concat')
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward():
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * out.ndim
            index[axis] = slice(start, stop)
            t._accumulate(out.grad[tuple(index)])
    out._backward = _backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new ``axis``."""
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)
    out = tensors[0]._make(data, tensors, 'stack')

    def _backward():
        for i, t in enumerate(tensors):
            t._accumulate(np.take(out.grad, i, axis=axis))
    out._backward = _backward
    return out


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)
