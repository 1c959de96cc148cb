"""
Differentiable operators used by the decoder.

Resampling follows the align-corners convention everywhere: output index ``i`` of
an axis of length ``n_out`` reads source coordinate ``i * (n_in - 1) / (n_out - 1)``
(coordinate 0 when ``n_out == 1``). Convolutions use zero padding.

Functions accept batched ``[B, C, H, W]`` tensors; the spatial operators also
accept an unbatched ``[C, H, W]`` tensor and return the same rank.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.tensor import Tensor, ShapeError, TensorDomainError, as_tensor

logger = logging.getLogger(__name__)

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


class PointOutOfRange(ValueError):
    """Raised when a sampling coordinate lies outside the feature grid."""
    pass


def _require_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise TensorDomainError(f"{op}() received non-finite input")


def _batched(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim != 4:
        raise ShapeError(f"expected [C,H,W] or [B,C,H,W], got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------- softmaxes
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Numerically stabilised softmax along ``axis``.

    Raises:
        TensorDomainError: If ``x`` holds NaN or infinite values.
    """
    x = as_tensor(x)
    _require_finite(x, 'softmax')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)
    out = x._make(value, (x,), 'softmax')

    def _backward():
        g = out.grad
        x._accumulate(value * (g - (g * value).sum(axis=axis, keepdims=True)))
    out._backward = _backward
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Log of ``softmax(x, axis)`` computed without forming the probabilities first."""
    x = as_tensor(x)
    _require_finite(x, 'log_softmax')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    value = shifted - log_norm
    out = x._make(value, (x,), 'log_softmax')

    def _backward():
        g = out.grad
        x._accumulate(g - np.exp(value) * g.sum(axis=axis, keepdims=True))
    out._backward = _backward
    return out


# ------------------------------------------------------------- convolutions
def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """
    Grouped 2-D convolution (cross-correlation) with zero padding.

    Args:
        x: Input ``[C_in, H, W]`` or ``[B, C_in, H, W]``.
        weight: Kernel ``[C_out, C_in / groups, k, k]``.
        bias: Optional ``[C_out]``.
        stride (int): Spatial stride.
        padding (int): Zero padding on every side.
        groups (int): ``groups == C_in`` gives a depthwise convolution.

    Returns:
        Tensor: ``[.., C_out, H_out, W_out]`` with ``H_out = (H + 2p - k) // s + 1``.

    Raises:
        ShapeError: If channel counts or kernel extents disagree.
    """
    x, unbatched = _batched(as_tensor(x))
    weight = as_tensor(weight)
    batch, c_in, height, width = x.shape
    c_out, c_group, k_h, k_w = weight.shape
    if c_in % groups or c_out % groups:
        raise ShapeError(f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if c_group != c_in // groups:
        raise ShapeError(f"kernel expects {c_group * groups} input channels, input has {c_in}")
    h_out = (height + 2 * padding - k_h) // stride + 1
    w_out = (width + 2 * padding - k_w) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"kernel {k_h}x{k_w} does not fit input {height}x{width} with padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    windows = windows.reshape(batch, groups, c_group, h_out, w_out, k_h, k_w)
    kernel = weight.data.reshape(groups, c_out // groups, c_group, k_h, k_w)
    value = np.einsum('bgchwij,gocij->bgohw', windows, kernel, optimize=True)
    value = value.reshape(batch, c_out, h_out, w_out)
    parents = [x, weight]
    if bias is not None:
        value = value + bias.data.reshape(1, c_out, 1, 1)
        parents.append(bias)
    out = x._make(value, parents, 'conv2d')

    def _backward():
        g = out.grad.reshape(batch, groups, c_out // groups, h_out, w_out)
        if weight.requires_grad:
            gk = np.einsum('bgohw,bgchwij->gocij', g, windows, optimize=True)
            weight._accumulate(gk.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(out.grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gw = np.einsum('bgohw,gocij->bgchwij', g, kernel, optimize=True)
            gw = gw.reshape(batch, c_in, h_out, w_out, k_h, k_w)
            gxp = np.zeros_like(xp)
            for i in range(k_h):
                for j in range(k_w):
                    gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += gw[..., i, j]
            x._accumulate(gxp[:, :, padding:padding + height, padding:padding + width])
    out._backward = _backward
    return out.squeeze(0) if unbatched else out


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping ``k x k`` average pooling; extents must be divisible by ``k``."""
    x, unbatched = _batched(as_tensor(x))
    batch, channels, height, width = x.shape
    if height % k or width % k:
        raise ShapeError(f"extents {height}x{width} not divisible by pool size {k}")
    pooled = x.reshape(batch, channels, height // k, k, width // k, k).mean(axis=(3, 5))
    return pooled.squeeze(0) if unbatched else pooled


def gradient_magnitude(gx: Tensor, gy: Tensor) -> Tensor:
    """
    Elementwise ``sqrt(gx^2 + gy^2)``, exact at zero.

    The derivative is taken as zero where the magnitude vanishes.
    """
    value = np.sqrt(gx.data * gx.data + gy.data * gy.data)
    out = gx._make(value, (gx, gy), 'magnitude')

    def _backward():
        safe = np.where(value > 0, value, 1.0)
        scale = np.where(value > 0, out.grad / safe, 0.0)
        gx._accumulate(scale * gx.data)
        gy._accumulate(scale * gy.data)
    out._backward = _backward
    return out


# ---------------------------------------------------------------- resampling
def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """
    Align-corners linear interpolation weights ``R`` with ``out = R @ in``.

    Args:
        n_in (int): Source length.
        n_out (int): Target length (>= 1).

    Returns:
        np.ndarray: ``[n_out, n_in]`` matrix whose rows sum to 1.
    """
    if n_in < 1 or n_out < 1:
        raise ShapeError(f"interpolation needs positive lengths, got {n_in} -> {n_out}")
    matrix = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        matrix[:, 0] = 1.0
        return matrix
    if n_out == 1:
        matrix[0, 0] = 1.0
        return matrix
    coords = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lower = np.minimum(np.floor(coords).astype(int), n_in - 2)
    frac = coords - lower
    rows = np.arange(n_out)
    matrix[rows, lower] = 1.0 - frac
    matrix[rows, lower + 1] += frac
    return matrix


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    """
    Bilinear resampling to ``height x width`` under the align-corners convention.

    Equal target and source extents return the input unchanged.

    Raises:
        ShapeError: If a target extent is below 1.
    """
    if height < 1 or width < 1:
        raise ShapeError(f"target size must be positive, got {height}x{width}")
    x = as_tensor(x)
    if x.shape[-2:] == (height, width):
        return x
    x, unbatched = _batched(x)
    r_h = interpolation_matrix(x.shape[2], height, x.dtype)
    r_w = interpolation_matrix(x.shape[3], width, x.dtype)
    value = np.einsum('ph,bchw,qw->bcpq', r_h, x.data, r_w, optimize=True)
    out = x._make(value, (x,), 'resize')

    def _backward():
        x._accumulate(np.einsum('ph,bcpq,qw->bchw', r_h, out.grad, r_w, optimize=True))
    out._backward = _backward
    return out.squeeze(0) if unbatched else out


def sample_points(feature_map: Tensor, coords) -> Tensor:
    """
    Bilinearly sample a ``[C, H, W]`` map at continuous ``(y, x)`` coordinates.

    Args:
        feature_map: Unbatched feature map.
        coords: ``[K, 2]`` array of ``(y, x)`` within ``[0, H-1] x [0, W-1]``.

    Returns:
        Tensor: ``[C, K]``; integer coordinates return the stored grid values exactly.

    Raises:
        PointOutOfRange: If any coordinate leaves the grid.
    """
    feature_map = as_tensor(feature_map)
    if feature_map.ndim != 3:
        raise ShapeError(f"sample_points expects [C,H,W], got {feature_map.shape}")
    _, height, width = feature_map.shape
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    ys, xs = coords[:, 0], coords[:, 1]
    if np.any(ys < 0) or np.any(ys > height - 1) or np.any(xs < 0) or np.any(xs > width - 1):
        bad = coords[(ys < 0) | (ys > height - 1) | (xs < 0) | (xs > width - 1)][0]
        raise PointOutOfRange(f"coordinate (y={bad[0]}, x={bad[1]}) outside grid {height}x{width}")

    y0 = np.minimum(np.floor(ys).astype(int), max(height - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(width - 2, 0))
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = (ys - y0).astype(feature_map.dtype)
    wx = (xs - x0).astype(feature_map.dtype)
    corners = (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x1, (1 - wy) * wx),
        (y1, x0, wy * (1 - wx)),
        (y1, x1, wy * wx),
    )
    data = feature_map.data
    value = sum(data[:, yi, xi] * w for yi, xi, w in corners)
    out = feature_map._make(value, (feature_map,), 'sample_points')

    def _backward():
        grad = np.zeros_like(data)
        for yi, xi, w in corners:
            np.add.at(grad, (slice(None), yi, xi), out.grad * w)
        feature_map._accumulate(grad)
    out._backward = _backward
    return out


def scatter_add_points(dense: Tensor, ys: np.ndarray, xs: np.ndarray, delta: Tensor) -> Tensor:
    """
    Add per-point rows of ``delta`` (``[K, C]``) into ``dense`` (``[C, H, W]``).

    Pixels not listed in ``(ys, xs)`` keep their exact input values.
    """
    ys = np.asarray(ys, dtype=int)
    xs = np.asarray(xs, dtype=int)
    value = dense.data.copy()
    np.add.at(value, (slice(None), ys, xs), delta.data.T)
    out = dense._make(value, (dense, delta), 'scatter_add')

    def _backward():
        dense._accumulate(out.grad)
        delta._accumulate(out.grad[:, ys, xs].T)
    out._backward = _backward
    return out


def sobel_response(x: Tensor) -> Tensor:
    """Per-channel Sobel gradient magnitude, padding 1, same extents as ``x``."""
    x, unbatched = _batched(as_tensor(x))
    channels = x.shape[1]
    kx = Tensor(np.broadcast_to(SOBEL_X, (channels, 1, 3, 3)).astype(x.dtype))
    ky = Tensor(np.broadcast_to(SOBEL_Y, (channels, 1, 3, 3)).astype(x.dtype))
    gx = conv2d(x, kx, padding=1, groups=channels)
    gy = conv2d(x, ky, padding=1, groups=channels)
    magnitude = gradient_magnitude(gx, gy)
    return magnitude.squeeze(0) if unbatched else magnitude


def tokens(lattice: Tensor) -> Tensor:
    """Row-major token view ``[B, C, H, W] -> [B, H*W, C]``."""
    batch, channels, height, width = lattice.shape
    return lattice.reshape(batch, channels, height * width).transpose(0, 2, 1)


def lattice(token_view: Tensor, height: int, width: int) -> Tensor:
    """Inverse of :func:`tokens`."""
    batch, count, channels = token_view.shape
    if count != height * width:
        raise ShapeError(f"{count} tokens cannot fill a {height}x{width} lattice")
    return token_view.transpose(0, 2, 1).reshape(batch, channels, height, width)


def global_average_pool(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, C]``."""
    return x.mean(axis=(2, 3))
