"""Bicubic interpolation helpers.

One convention is used everywhere: the Keys kernel with a = -0.5, sample
coordinates clamped to the image (replicate border), and for resizing the
area-anchored mapping  x_in = (x_out + 0.5) / scale - 0.5.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
import scipy.sparse as sp

KEYS_A = -0.5
STENCIL_OFFSETS = np.array([-1, 0, 1, 2])


def keys_kernel(t, a: float = KEYS_A) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def bicubic_stencil(positions, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the 4-tap stencil for each 1-D sample position.

    Returns two arrays of shape positions.shape + (4,). Indices are clamped to
    [0, size - 1]; clamped taps keep their weight so each row still sums to 1.
    """
    pos = np.asarray(positions, dtype=np.float64)
    base = np.floor(pos)
    frac = pos - base
    idx = base[..., np.newaxis].astype(np.int64) + STENCIL_OFFSETS
    weights = keys_kernel(frac[..., np.newaxis] - STENCIL_OFFSETS)
    return np.clip(idx, 0, size - 1), weights


def bicubic_weights_2d(xs, ys, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flat pixel indices and weights (shape (m, 16)) for sampling at (xs, ys)."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    ix, wx = bicubic_stencil(xs, width)
    iy, wy = bicubic_stencil(ys, height)
    cols = (iy[:, :, np.newaxis] * width + ix[:, np.newaxis, :]).reshape(-1, 16)
    weights = (wy[:, :, np.newaxis] * wx[:, np.newaxis, :]).reshape(-1, 16)
    return cols, weights


def sample_bicubic(array, xs, ys) -> np.ndarray:
    """Evaluate the bicubic interpolant of a 2-D array at (xs, ys)."""
    arr = np.asarray(array, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    height, width = arr.shape
    cols, weights = bicubic_weights_2d(xs, ys, width, height)
    return np.sum(arr.reshape(-1)[cols] * weights, axis=1).reshape(xs.shape)


def resize_matrix(n_in: int, n_out: int, scale: float, antialias: bool = True) -> sp.csr_matrix:
    """(n_out x n_in) matrix of a 1-D bicubic resize."""
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    if not antialias or scale >= 1.0:
        idx, weights = bicubic_stencil(centers, n_in)
        rows = np.repeat(np.arange(n_out), 4)
        mat = sp.coo_matrix((weights.reshape(-1), (rows, idx.reshape(-1))), shape=(n_out, n_in))
        return mat.tocsr()

    # Shrinking: widen the kernel by 1/scale and renormalise each row.
    support = int(math.ceil(2.0 / scale))
    taps = np.arange(-support, support + 2)
    base = np.floor(centers).astype(np.int64)
    nodes = base[:, np.newaxis] + taps
    weights = keys_kernel((centers[:, np.newaxis] - nodes) * scale)
    weights /= weights.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(n_out), taps.size)
    cols = np.clip(nodes, 0, n_in - 1).reshape(-1)
    mat = sp.coo_matrix((weights.reshape(-1), (rows, cols)), shape=(n_out, n_in))
    return mat.tocsr()


def bicubic_resize(array, shape: Tuple[int, int], scale: float | None = None, antialias: bool = True) -> np.ndarray:
    """Resize a 2-D array to shape (height, width).

    ``scale`` fixes the coordinate mapping for both axes (as when resizing by
    a factor); by default each axis uses out / in.
    """
    arr = np.asarray(array, dtype=np.float64)
    height, width = int(shape[0]), int(shape[1])
    if height < 1 or width < 1:
        raise ValueError(f"target shape must be positive, got {shape}")
    sy = scale if scale is not None else height / arr.shape[0]
    sx = scale if scale is not None else width / arr.shape[1]
    my = resize_matrix(arr.shape[0], height, sy, antialias)
    mx = resize_matrix(arr.shape[1], width, sx, antialias)
    rows = my @ arr
    return np.asarray((mx @ rows.T).T)


def scaled_shape(shape: Tuple[int, int], factor: float) -> Tuple[int, int]:
    """High-resolution grid for a low-resolution shape and magnification."""
    return (int(round(shape[0] * factor)), int(round(shape[1] * factor)))
