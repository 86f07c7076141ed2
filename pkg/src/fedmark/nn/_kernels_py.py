"""Pure-numpy implementations of the convolution/pooling kernels.

Fallback backend used when the compiled extension is unavailable. Both
backends must produce bit-identical results: accumulation in col2im runs
in the same (ki, kj)-major order as the compiled loops.
"""

import numpy as np

BACKEND = "numpy"


def conv_out_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Unfold (N, C, H, W) into (N*oh*ow, C*kernel*kernel) patch rows."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, kernel, stride)
    ow = conv_out_size(w, kernel, stride)
    cols = np.empty((n, oh, ow, c, kernel, kernel), dtype=x.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            patch = x[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride]
            cols[:, :, :, :, ki, kj] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * kernel * kernel)


def col2im(
    cols: np.ndarray, n: int, c: int, h: int, w: int, kernel: int, stride: int
) -> np.ndarray:
    """Fold patch-row gradients back onto the (N, C, H, W) input, accumulating overlaps."""
    oh = conv_out_size(h, kernel, stride)
    ow = conv_out_size(w, kernel, stride)
    dc = cols.reshape(n, oh, ow, c, kernel, kernel)
    dx = np.zeros((n, c, h, w), dtype=cols.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            dx[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride] += dc[
                :, :, :, :, ki, kj
            ].transpose(0, 3, 1, 2)
    return dx


def maxpool_forward(x: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool. Returns (pooled, argmax index within each window)."""
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    trimmed = x[:, :, : oh * window, : ow * window]
    tiles = trimmed.reshape(n, c, oh, window, ow, window).transpose(0, 1, 2, 4, 3, 5)
    flat = tiles.reshape(n, c, oh, ow, window * window)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool_backward(
    dout: np.ndarray, idx: np.ndarray, h: int, w: int, window: int
) -> np.ndarray:
    """Scatter pooled gradients back to the argmax positions (windows are disjoint)."""
    n, c, oh, ow = dout.shape
    flat = np.zeros((n, c, oh, ow, window * window), dtype=dout.dtype)
    np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
    tiles = flat.reshape(n, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros((n, c, h, w), dtype=dout.dtype)
    dx[:, :, : oh * window, : ow * window] = tiles.reshape(n, c, oh * window, ow * window)
    return dx
