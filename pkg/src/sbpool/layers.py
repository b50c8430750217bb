"""Backbone layer primitives with hand-written backward passes.

Every forward accepts a single sample (channel-first, no batch axis) or a
batch with a leading ``N`` axis and returns the matching rank.  Backward
passes are exact adjoints of the forward maps:

* ReLU uses subgradient 0 at the origin.
* 2x2 max pooling routes the incoming gradient to the first maximal
  element in row-major scan order of the window on ties.
* conv2d is 3x3 cross-correlation, stride 1, zero padding 1, so spatial
  extents are preserved.
"""

from __future__ import annotations

import numpy as np

from .errors import OddSpatialExtent, ShapeMismatch

KERNEL = 3
PAD = 1


def _as_batch(x: np.ndarray, sample_ndim: int):
    if x.ndim == sample_ndim:
        return x[None], True
    if x.ndim == sample_ndim + 1:
        return x, False
    raise ShapeMismatch(f"expected {sample_ndim}-D or {sample_ndim + 1}-D input, got {x.shape}")


def _maybe_squeeze(y: np.ndarray, squeezed: bool) -> np.ndarray:
    return y[0] if squeezed else y


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N,C,H,W) -> (N, C*9, H*W) patches of the zero-padded input."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * PAD, w + 2 * PAD), dtype=np.float64)
    xp[:, :, PAD : PAD + h, PAD : PAD + w] = x
    cols = np.empty((n, c, KERNEL * KERNEL, h, w), dtype=np.float64)
    for di in range(KERNEL):
        for dj in range(KERNEL):
            cols[:, :, di * KERNEL + dj] = xp[:, :, di : di + h, dj : dj + w]
    return cols.reshape(n, c * KERNEL * KERNEL, h * w)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 / stride 1 / pad 1 cross-correlation: (D_in,H,W) -> (D_out,H,W)."""
    x, squeezed = _as_batch(x, 3)
    n, d_in, h, w = x.shape
    if weight.ndim != 4 or weight.shape[1:] != (d_in, KERNEL, KERNEL):
        raise ShapeMismatch(f"weight shape {weight.shape} incompatible with input {x.shape}")
    d_out = weight.shape[0]
    if bias.shape != (d_out,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({d_out},)")
    cols = _im2col(x)
    y = (weight.reshape(d_out, -1) @ cols).reshape(n, d_out, h, w)
    y += bias[None, :, None, None]
    return _maybe_squeeze(y, squeezed)


def conv2d_backward(x: np.ndarray, weight: np.ndarray, dy: np.ndarray):
    """Gradients of conv2d_forward: returns (dx, dweight, dbias)."""
    x, squeezed = _as_batch(x, 3)
    dy, dy_squeezed = _as_batch(dy, 3)
    if squeezed != dy_squeezed or x.shape[0] != dy.shape[0]:
        raise ShapeMismatch("input and upstream gradient batch shapes differ")
    n, d_in, h, w = x.shape
    d_out = weight.shape[0]
    if dy.shape != (n, d_out, h, w):
        raise ShapeMismatch(f"upstream gradient shape {dy.shape} != {(n, d_out, h, w)}")
    cols = _im2col(x)
    dy_flat = dy.reshape(n, d_out, h * w)
    # sum_n dy_n @ cols_n^T, folded into one GEMM over the batch
    dweight = (
        dy_flat.transpose(1, 0, 2).reshape(d_out, -1)
        @ cols.transpose(0, 2, 1).reshape(-1, d_in * KERNEL * KERNEL)
    ).reshape(weight.shape)
    dcols = weight.reshape(d_out, -1).T @ dy_flat  # (n, C*9, H*W)
    dcols = dcols.reshape(n, d_in, KERNEL * KERNEL, h, w)
    dxp = np.zeros((n, d_in, h + 2 * PAD, w + 2 * PAD), dtype=np.float64)
    for di in range(KERNEL):
        for dj in range(KERNEL):
            dxp[:, :, di : di + h, dj : dj + w] += dcols[:, :, di * KERNEL + dj]
    dbias = dy.sum(axis=(0, 2, 3))
    dx = dxp[:, :, PAD : PAD + h, PAD : PAD + w]
    return _maybe_squeeze(dx, squeezed), dweight, dbias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if x.shape != dy.shape:
        raise ShapeMismatch(f"shapes differ: {x.shape} vs {dy.shape}")
    return dy * (x > 0.0)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, d, h, w = x.shape
    # (n, d, h/2, w/2, 4) with window cells in row-major scan order
    return (
        x.reshape(n, d, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, d, h // 2, w // 2, 4)
    )


def maxpool2x2_forward(x: np.ndarray) -> np.ndarray:
    x, squeezed = _as_batch(x, 3)
    n, d, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialExtent(f"maxpool2x2 needs even extents, got {h}x{w}")
    y = _pool_windows(x).max(axis=-1)
    return _maybe_squeeze(y, squeezed)


def maxpool2x2_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    x, squeezed = _as_batch(x, 3)
    dy, _ = _as_batch(dy, 3)
    n, d, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialExtent(f"maxpool2x2 needs even extents, got {h}x{w}")
    if dy.shape != (n, d, h // 2, w // 2):
        raise ShapeMismatch(f"upstream gradient shape {dy.shape} != {(n, d, h // 2, w // 2)}")
    windows = _pool_windows(x)
    # argmax picks the first maximal cell in scan order, fixing the tie rule
    idx = windows.argmax(axis=-1)
    dwin = np.zeros_like(windows)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = (
        dwin.reshape(n, d, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, d, h, w)
    )
    return _maybe_squeeze(dx, squeezed)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map y = W x + b for a vector x, batched over rows if 2-D."""
    x, squeezed = _as_batch(x, 1)
    if weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"weight shape {weight.shape} incompatible with input {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    y = x @ weight.T + bias
    return _maybe_squeeze(y, squeezed)


def linear_backward(x: np.ndarray, weight: np.ndarray, dy: np.ndarray):
    """Gradients of linear_forward: returns (dx, dweight, dbias)."""
    x, squeezed = _as_batch(x, 1)
    dy, dy_squeezed = _as_batch(dy, 1)
    if squeezed != dy_squeezed or x.shape[0] != dy.shape[0]:
        raise ShapeMismatch("input and upstream gradient batch shapes differ")
    if dy.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"upstream gradient width {dy.shape[1]} != {weight.shape[0]}")
    dx = dy @ weight
    dweight = dy.T @ x
    dbias = dy.sum(axis=0)
    return _maybe_squeeze(dx, squeezed), dweight, dbias
