"""Sparse linear operators of the joint super-resolution energy.

Every operator is backed by a scipy CSR matrix acting on row-major flattened
frames, so the adjoint is the exact transpose and the absolute row/column sums
used for solver preconditioning come straight from the matrix.
"""

from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .core import DimensionError, FlowDirection, FlowField, FlowSet, NumericalError
from .resample import bicubic_weights_2d

Dims = Tuple[int, int]  # (width, height)


class LinearOperator:
    """A matrix with forward and adjoint application."""

    def __init__(self, matrix, name: str = ""):
        self.matrix = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        self.matrix.sum_duplicates()
        self.matrix.eliminate_zeros()
        self.name = name
        self._row_abs = None
        self._col_abs = None

    def __repr__(self) -> str:
        return f"LinearOperator({self.name or 'anonymous'}, {self.output_dim}x{self.input_dim}, nnz={self.matrix.nnz})"

    @property
    def input_dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.matrix.shape[0])

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.input_dim:
            raise DimensionError(f"{self.name}: input of length {x.shape[0]}, expected {self.input_dim}")
        return self.matrix @ x

    def apply_adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.output_dim:
            raise DimensionError(f"{self.name}: adjoint input of length {y.shape[0]}, expected {self.output_dim}")
        return self.matrix.T @ y

    def row_abs_sums(self) -> np.ndarray:
        if self._row_abs is None:
            self._row_abs = np.asarray(abs(self.matrix).sum(axis=1)).reshape(-1)
        return self._row_abs

    def col_abs_sums(self) -> np.ndarray:
        if self._col_abs is None:
            self._col_abs = np.asarray(abs(self.matrix).sum(axis=0)).reshape(-1)
        return self._col_abs

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def scaled(self, factor: float) -> "LinearOperator":
        return LinearOperator(self.matrix * float(factor), name=f"{factor:g}*{self.name}")

    def to_coo_text(self, path: str) -> None:
        """Write 'row col value' lines sorted by (row, col)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", encoding="utf-8") as f:
            for k in order:
                f.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")


def zero(output_dim: int, input_dim: int) -> LinearOperator:
    return LinearOperator(sp.csr_matrix((output_dim, input_dim)), name="zero")


def identity(dim: int) -> LinearOperator:
    return LinearOperator(sp.identity(dim, format="csr"), name="I")


def compose(outer: LinearOperator, inner: LinearOperator) -> LinearOperator:
    if outer.input_dim != inner.output_dim:
        raise DimensionError(f"cannot compose {outer!r} after {inner!r}")
    return LinearOperator(outer.matrix @ inner.matrix, name=f"{outer.name}*{inner.name}")


def vstack(ops: Sequence[LinearOperator]) -> LinearOperator:
    widths = {op.input_dim for op in ops}
    if len(widths) != 1:
        raise DimensionError(f"vstack needs equal input dims, got {sorted(widths)}")
    return LinearOperator(sp.vstack([op.matrix for op in ops]), name="[" + ";".join(op.name for op in ops) + "]")


def _check_dims(dims: Dims) -> Tuple[int, int]:
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1 or width * height < 2:
        raise DimensionError(f"degenerate image dimensions {width}x{height}")
    return width, height


def _forward_difference(n: int) -> sp.csr_matrix:
    # Last row stays zero (Neumann boundary).
    if n == 1:
        return sp.csr_matrix((1, 1))
    main = -np.ones(n)
    main[-1] = 0.0
    upper = np.ones(n - 1)
    return sp.diags([main, upper], [0, 1], shape=(n, n), format="csr")


def gradient_parts(dims: Dims) -> Tuple[LinearOperator, LinearOperator]:
    width, height = _check_dims(dims)
    dx = sp.kron(sp.identity(height), _forward_difference(width), format="csr")
    dy = sp.kron(_forward_difference(height), sp.identity(width), format="csr")
    return LinearOperator(dx, name="dx"), LinearOperator(dy, name="dy")


def gradient(dims: Dims) -> LinearOperator:
    """Forward differences; output is the x-plane followed by the y-plane."""
    dx, dy = gradient_parts(dims)
    op = vstack([dx, dy])
    op.name = "grad"
    return op


def block_gradient(dims: Dims, n: int) -> LinearOperator:
    """Gradient of every frame: x-planes of frames 1..n, then y-planes."""
    dx, dy = gradient_parts(dims)
    eye = sp.identity(n, format="csr")
    return LinearOperator(sp.vstack([sp.kron(eye, dx.matrix), sp.kron(eye, dy.matrix)]), name="grad")


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    # Half-sample symmetric: d c b a | a b c d | d c b a
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    taps = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (taps / sigma) ** 2)
    return kernel / kernel.sum()


def _blur_1d(n: int, kernel: np.ndarray) -> sp.csr_matrix:
    radius = kernel.size // 2
    offsets = np.arange(-radius, radius + 1)
    rows = np.repeat(np.arange(n), kernel.size)
    cols = _reflect((np.arange(n)[:, np.newaxis] + offsets).reshape(-1), n)
    data = np.tile(kernel, n)
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def gaussian_blur(sigma: float, dims: Dims) -> LinearOperator:
    """Separable Gaussian blur, radius ceil(3 sigma), reflective boundary."""
    kernel = gaussian_kernel(sigma)
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1:
        raise DimensionError(f"degenerate image dimensions {width}x{height}")
    mat = sp.kron(_blur_1d(height, kernel), _blur_1d(width, kernel), format="csr")
    return LinearOperator(mat, name=f"blur{sigma:g}")


def _sample_1d(n_in: int, n_out: int, factor: float) -> sp.csr_matrix:
    # Low-res sample i sits at (i + 0.5) * factor - 0.5, the centre used by
    # bicubic_resize; fractional positions get bilinear weights.
    pos = np.clip((np.arange(n_out) + 0.5) * factor - 0.5, 0.0, n_in - 1)
    left = np.floor(pos).astype(np.int64)
    frac = pos - left
    frac[frac < 1e-12] = 0.0
    right = np.minimum(left + 1, n_in - 1)
    rows = np.concatenate([np.arange(n_out), np.arange(n_out)])
    cols = np.concatenate([left, right])
    data = np.concatenate([1.0 - frac, frac])
    return sp.coo_matrix((data, (rows, cols)), shape=(n_out, n_in)).tocsr()


def decimate(factor: float, hi_dims: Dims, lo_dims: Dims | None = None) -> LinearOperator:
    """Sampling of the blurred frame at the low-res pixel centres.

    Centres that fall on a high-res pixel (odd integer factors) are point
    samples; others interpolate bilinearly between the two neighbours.
    """
    if factor <= 1:
        raise ValueError(f"decimation factor must exceed 1, got {factor}")
    width, height = int(hi_dims[0]), int(hi_dims[1])
    if lo_dims is None:
        lo_dims = (int(math.floor(width / factor)), int(math.floor(height / factor)))
    lo_w, lo_h = int(lo_dims[0]), int(lo_dims[1])
    if lo_w < 1 or lo_h < 1:
        raise DimensionError(f"decimating {width}x{height} by {factor} leaves {lo_w}x{lo_h}")
    mat = sp.kron(_sample_1d(height, lo_h, factor), _sample_1d(width, lo_w, factor), format="csr")
    return LinearOperator(mat, name=f"D{factor:g}")


def warp_matrix(flow: FlowField) -> LinearOperator:
    """Bicubic warp: (W u)(x) = u(x + v(x)) with clamped sample coordinates."""
    vx, vy = flow.vx.data, flow.vy.data
    if not (np.all(np.isfinite(vx)) and np.all(np.isfinite(vy))):
        raise NumericalError("warp flow contains non-finite values")
    height, width = vx.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cols, weights = bicubic_weights_2d(xs + vx, ys + vy, width, height)
    rows = np.repeat(np.arange(width * height), 16)
    mat = sp.coo_matrix((weights.reshape(-1), (rows, cols.reshape(-1))), shape=(width * height,) * 2)
    return LinearOperator(mat, name="W")


def motion_time_derivative(flows: FlowSet, h: float, dims: Dims | None = None, n: int | None = None) -> LinearOperator:
    """Block motion-corrected time derivative over n stacked frames.

    Block row k (zero-based, k < n-1) pairs frames k and k+1:
      BACKWARD flow: (u^k - W^k u^{k+1}) / h
      FORWARD flow:  (W^k u^k - u^{k+1}) / h
    The last block row is zero.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    if n is None:
        n = flows.frame_count()
    if len(flows) != n - 1:
        raise DimensionError(f"{len(flows)} flows do not describe a sequence of {n} frames")
    if dims is None:
        if not len(flows):
            raise DimensionError("frame dimensions are required when there are no flows")
        dims = (flows[0].width, flows[0].height)
    width, height = int(dims[0]), int(dims[1])
    pixels = width * height
    blocks = [[None] * n for _ in range(n)]
    eye = sp.identity(pixels, format="csr")
    for k, (flow, direction) in enumerate(zip(flows.flows, flows.directions)):
        if flow.shape != (height, width):
            raise DimensionError(f"flow {k} has shape {flow.shape}, frames are {(height, width)}")
        warp = warp_matrix(flow).matrix
        if direction == FlowDirection.BACKWARD:
            blocks[k][k], blocks[k][k + 1] = eye, -warp
        else:
            blocks[k][k], blocks[k][k + 1] = warp, -eye
    blocks[n - 1][n - 1] = sp.csr_matrix((pixels, pixels))
    mat = sp.bmat(blocks, format="csr") / float(h)
    return LinearOperator(mat, name="Wt")


def block_diag_data_operator(blur: LinearOperator, dec: LinearOperator, n: int) -> LinearOperator:
    """diag(D B, ..., D B) over n frames."""
    single = compose(dec, blur)
    if n < 1:
        raise DimensionError(f"need at least one frame, got {n}")
    return LinearOperator(sp.kron(sp.identity(n, format="csr"), single.matrix, format="csr"), name="A")


def adjoint_mismatch(op: LinearOperator, rng: np.random.Generator, trials: int = 100) -> float:
    """Largest relative |<Kx,y> - <x,K^T y>| over random pairs."""
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.input_dim)
        y = rng.standard_normal(op.output_dim)
        lhs = float(np.dot(op.apply(x), y))
        rhs = float(np.dot(x, op.apply_adjoint(y)))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst
