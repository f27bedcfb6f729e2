"""Numpy fallback for the patch gather/scatter kernels.

im2col gathers k x k patches on a strided grid into a dense matrix so
convolutions become one BLAS matmul; col2im is its transpose (scatter-add).
The accumulation order in col2im is fixed (ascending kernel offsets) so the
compiled backend can reproduce it bit for bit.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """[B,C,H,W] -> [B,OH,OW,C,k,k] patch tensor (C-contiguous copy)."""
    b, c, h, w = x.shape
    oh = out_extent(h, k, stride, pad)
    ow = out_extent(w, k, stride, pad)
    padded = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    padded[:, :, pad:pad + h, pad:pad + w] = x
    sb, sc, sh, sw = padded.strides
    view = as_strided(
        padded,
        shape=(b, oh, ow, c, k, k),
        strides=(sb, stride * sh, stride * sw, sc, sh, sw),
    )
    return np.ascontiguousarray(view)


def col2im(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add [B,OH,OW,C,k,k] patches back onto a [B,C,H,W] grid.

    Each cell accumulates its contributions in descending (kh, kw) order;
    the compiled backend reproduces that order exactly.
    """
    b, oh, ow, c, k, _ = cols.shape
    padded = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    planes = cols.transpose(0, 3, 4, 5, 1, 2)
    for kh in reversed(range(k)):
        for kw in reversed(range(k)):
            padded[:, :, kh:kh + (oh - 1) * stride + 1:stride,
                   kw:kw + (ow - 1) * stride + 1:stride] += planes[:, :, kh, kw]
    if pad == 0:
        return padded
    return np.ascontiguousarray(padded[:, :, pad:pad + h, pad:pad + w])
