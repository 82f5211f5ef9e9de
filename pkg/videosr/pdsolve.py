"""Diagonally preconditioned primal-dual solver and proximal mappings.

Problems have the saddle-point form

    min_x max_y  <K x, y> + sum_j g_j(x_j) - sum_i f_i*(y_i)

with K assembled from per-block sparse operators. Step sizes follow the
diagonal rule T_j = 1 / sum_i |K_ij|, Sigma_i = 1 / sum_j |K_ij|; rows or
columns with zero absolute sum get step 1.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .core import DimensionError, NumericalError
from .linops import LinearOperator, zero

logger = logging.getLogger(__name__)

Prox = Callable[[np.ndarray, np.ndarray], np.ndarray]
Value = Callable[[np.ndarray], float]


# --- proximal mappings -----------------------------------------------------

def prox_identity(x: np.ndarray, step: np.ndarray) -> np.ndarray:
    return x


def prox_quadratic(x: np.ndarray, step: np.ndarray, target: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """prox of (weight/2) * ||x - target||^2."""
    return (x + step * weight * target) / (1.0 + step * weight)


def prox_l1_translated(y: np.ndarray, sigma: np.ndarray, f: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """prox of sigma * F* for F(z) = weight * ||z - f||_1."""
    return np.clip(y - sigma * f, -weight, weight)


def _project_groups(y: np.ndarray, alpha: float, channels: int) -> np.ndarray:
    groups = y.reshape(channels, -1)
    if alpha <= 0:
        return np.zeros_like(y)
    norms = np.sqrt(np.sum(groups * groups, axis=0))
    scale = np.maximum(1.0, norms / alpha)
    return (groups / scale).reshape(y.shape)


def prox_l21_dual(y: np.ndarray, alpha: float, channels: int = 3) -> np.ndarray:
    """Projection of every per-pixel vector onto the alpha-ball.

    ``y`` is channel-major: channel c of pixel p sits at y[c * m + p].
    """
    return _project_groups(np.asarray(y, dtype=np.float64), alpha, channels)


def prox_huber_dual(y: np.ndarray, sigma: np.ndarray, alpha: float, epsilon: float, channels: int = 2) -> np.ndarray:
    """prox of sigma * F* for F = alpha * sum_p huber_eps(|z_p|)."""
    if alpha <= 0:
        return np.zeros_like(y)
    shrunk = y / (1.0 + sigma * epsilon / alpha)
    return _project_groups(shrunk, alpha, channels)


def l1_value(r: np.ndarray) -> float:
    return float(np.sum(np.abs(r)))


def l21_value(z: np.ndarray, alpha: float, channels: int) -> float:
    groups = np.asarray(z).reshape(channels, -1)
    return float(alpha * np.sum(np.sqrt(np.sum(groups * groups, axis=0))))


def huber_value(z: np.ndarray, alpha: float, epsilon: float, channels: int) -> float:
    groups = np.asarray(z).reshape(channels, -1)
    norms = np.sqrt(np.sum(groups * groups, axis=0))
    if epsilon <= 0:
        return float(alpha * np.sum(norms))
    quad = norms <= epsilon
    vals = np.where(quad, norms * norms / (2.0 * epsilon), norms - epsilon / 2.0)
    return float(alpha * np.sum(vals))


# --- problem description ---------------------------------------------------

@dataclass
class PrimalBlock:
    name: str
    dim: int
    prox: Prox = prox_identity
    value: Optional[Value] = None
    # Equal-length segments (frames) sharing the smallest step per position.
    segments: int = 1


@dataclass
class DualBlock:
    name: str
    dim: int
    operators: Dict[str, LinearOperator]
    prox: Prox
    value: Optional[Value] = None  # f_i evaluated on (K x)_i


@dataclass
class SaddlePointProblem:
    primal_blocks: List[PrimalBlock]
    dual_blocks: List[DualBlock]

    def __post_init__(self):
        for block in self.primal_blocks:
            if block.segments < 1 or block.dim % block.segments:
                raise DimensionError(f"primal block {block.name!r} of size {block.dim} cannot form {block.segments} segments")
        names = [b.name for b in self.primal_blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate primal block names: {names}")
        dims = {b.name: b.dim for b in self.primal_blocks}
        for block in self.dual_blocks:
            if not block.operators:
                raise ValueError(f"dual block {block.name!r} has no operators")
            for primal, op in block.operators.items():
                if primal not in dims:
                    raise ValueError(f"dual block {block.name!r} refers to unknown primal block {primal!r}")
                if op.input_dim != dims[primal] or op.output_dim != block.dim:
                    raise DimensionError(
                        f"operator {block.name}/{primal} is {op.output_dim}x{op.input_dim}, "
                        f"blocks need {block.dim}x{dims[primal]}"
                    )

    @property
    def primal_dim(self) -> int:
        return sum(b.dim for b in self.primal_blocks)

    @property
    def dual_dim(self) -> int:
        return sum(b.dim for b in self.dual_blocks)

    def operator(self) -> LinearOperator:
        if not self.dual_blocks:
            return zero(0, self.primal_dim)
        rows = []
        for dual in self.dual_blocks:
            row = []
            for primal in self.primal_blocks:
                op = dual.operators.get(primal.name)
                row.append((op if op is not None else zero(dual.dim, primal.dim)).matrix)
            rows.append(row)
        return LinearOperator(sp.bmat(rows, format="csr"), name="K")

    def steps(self, op: LinearOperator | None = None) -> Tuple[np.ndarray, np.ndarray]:
        """Diagonal steps with segmented primal blocks tied to their smallest step."""
        tau, sigma = diagonal_steps(op if op is not None else self.operator())
        for block, s in self.primal_slices():
            if block.segments > 1:
                segs = tau[s].reshape(block.segments, -1)
                tau[s] = np.tile(segs.min(axis=0), block.segments)
        return tau, sigma

    def primal_slices(self) -> List[Tuple[PrimalBlock, slice]]:
        return _slices(self.primal_blocks)

    def dual_slices(self) -> List[Tuple[DualBlock, slice]]:
        return _slices(self.dual_blocks)

    def split(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return {b.name: x[s].copy() for b, s in self.primal_slices()}

    def join(self, parts: Mapping[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self.primal_dim)
        for block, s in self.primal_slices():
            if block.name in parts:
                x[s] = np.asarray(parts[block.name], dtype=np.float64).reshape(-1)
        return x

    def energy(self, x: np.ndarray, kx: np.ndarray) -> float:
        total = 0.0
        for block, s in self.primal_slices():
            if block.value is not None:
                total += block.value(x[s])
        for block, s in self.dual_slices():
            if block.value is not None:
                total += block.value(kx[s])
        return total


def _slices(blocks: Sequence) -> List[Tuple[object, slice]]:
    out = []
    start = 0
    for block in blocks:
        out.append((block, slice(start, start + block.dim)))
        start += block.dim
    return out


class StoppingReason(str, enum.Enum):
    TOLERANCE = "tolerance"
    MAX_ITERATIONS = "maxIterations"


@dataclass
class SolveReport:
    iterations: int = 0
    final_energy: float = float("nan")
    energy_trace: List[float] = field(default_factory=list)
    trace_iterations: List[int] = field(default_factory=list)
    converged: bool = False
    stopping_reason: StoppingReason = StoppingReason.MAX_ITERATIONS


def diagonal_steps(op: LinearOperator) -> Tuple[np.ndarray, np.ndarray]:
    """Primal steps T and dual steps Sigma of the diagonal rule."""
    cols = op.col_abs_sums()
    rows = op.row_abs_sums()
    tau = np.ones_like(cols)
    sigma = np.ones_like(rows)
    np.divide(1.0, cols, out=tau, where=cols > 0)
    np.divide(1.0, rows, out=sigma, where=rows > 0)
    return tau, sigma


def solve(
    problem: SaddlePointProblem,
    max_iterations: int = 500,
    tolerance: float = 1e-4,
    x0: Mapping[str, np.ndarray] | None = None,
    trace_every: int = 1,
    window: int = 10,
    log_every: int = 50,
) -> Tuple[Dict[str, np.ndarray], SolveReport]:
    if max_iterations < 0:
        raise ValueError(f"max_iterations must be non-negative, got {max_iterations}")
    op = problem.operator()
    K = op.matrix
    KT = K.T.tocsr()
    tau, sigma = problem.steps(op)
    primal_slices = problem.primal_slices()
    dual_slices = problem.dual_slices()

    x = problem.join(x0) if x0 is not None else np.zeros(problem.primal_dim)
    y = np.zeros(problem.dual_dim)
    kx = K @ x
    snapshot = x.copy()
    report = SolveReport()

    for it in range(1, max_iterations + 1):
        x_new = x - tau * (KT @ y)
        for block, s in primal_slices:
            x_new[s] = block.prox(x_new[s], tau[s])
        kx_new = K @ x_new
        y = y + sigma * (2.0 * kx_new - kx)
        for block, s in dual_slices:
            y[s] = block.prox(y[s], sigma[s])
        x, kx = x_new, kx_new

        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericalError(f"non-finite iterate at iteration {it}; check operators and step sizes")

        report.iterations = it
        if it % trace_every == 0 or it == max_iterations:
            report.energy_trace.append(problem.energy(x, kx))
            report.trace_iterations.append(it)

        if it % window == 0:
            change = float(np.linalg.norm(x - snapshot)) / max(1.0, float(np.linalg.norm(x)))
            snapshot = x.copy()
            if log_every and it % log_every == 0:
                logger.debug("iteration %d: relative change %.3e", it, change)
            if change < tolerance:
                report.converged = True
                report.stopping_reason = StoppingReason.TOLERANCE
                break

    if report.iterations and (not report.trace_iterations or report.trace_iterations[-1] != report.iterations):
        report.energy_trace.append(problem.energy(x, kx))
        report.trace_iterations.append(report.iterations)
    report.final_energy = problem.energy(x, kx)
    logger.log(
        logging.INFO if log_every else logging.DEBUG,
        "solver stopped (%s) after %d iterations, energy %.6g",
        report.stopping_reason.value, report.iterations, report.final_energy,
    )
    return problem.split(x), report
