"""Coarse-to-fine TV-L1 style optical flow.

Energy per pair: L1 brightness constancy + L1 gradient constancy, Huber
regularised flow gradients. Each warp linearises the data terms around the
current flow and solves the convex problem with pdsolve; the flow is median
filtered once at the end of every pyramid level.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .core import (
    DimensionError,
    FlowConfig,
    FlowDirection,
    FlowField,
    FlowSet,
    FrameSequence,
    Image,
    flow_direction,
)
from .linops import LinearOperator, gradient, warp_matrix
from .pdsolve import (
    DualBlock,
    PrimalBlock,
    SaddlePointProblem,
    huber_value,
    l1_value,
    prox_huber_dual,
    prox_l1_translated,
    solve,
)
from .resample import bicubic_resize, scaled_shape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pyramid:
    levels: Tuple[Tuple[Image, Image], ...]  # level 0 = finest
    scales: Tuple[float, ...]


def central_gradients(array: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences with replicate borders."""
    padded = np.pad(np.asarray(array, dtype=np.float64), 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return gx, gy


def build_pyramid(fixed: Image, moving: Image, cfg: FlowConfig) -> Pyramid:
    levels = [(fixed, moving)]
    scales = [1.0]
    height, width = fixed.shape
    while True:
        next_h = int(math.ceil(height * cfg.pyramid_scale))
        next_w = int(math.ceil(width * cfg.pyramid_scale))
        if min(next_h, next_w) < cfg.min_level_size or (next_h, next_w) == (height, width):
            break
        prev_fixed, prev_moving = levels[-1]
        shrunk = []
        for img in (prev_fixed, prev_moving):
            smooth = ndimage.gaussian_filter(img.data, cfg.presmooth_sigma, mode="nearest")
            shrunk.append(Image(bicubic_resize(smooth, (next_h, next_w), antialias=False)))
        levels.append((shrunk[0], shrunk[1]))
        scales.append(scales[-1] * next_w / width)
        height, width = next_h, next_w
    return Pyramid(tuple(levels), tuple(scales))


def _warp(array: np.ndarray, warp: LinearOperator) -> np.ndarray:
    return warp.apply(array.reshape(-1)).reshape(array.shape)


def _global_flow_step(channels, v_tilde: FlowField, cfg: FlowConfig) -> FlowField:
    """Infinite regularisation weight: one increment shared by every pixel."""
    duals = []
    for k, (rho, gx, gy) in enumerate(channels):
        target = -rho.reshape(-1)
        duals.append(DualBlock(
            name=f"data{k}",
            dim=target.size,
            operators={"dx": LinearOperator(gx.reshape(-1, 1)), "dy": LinearOperator(gy.reshape(-1, 1))},
            prox=partial(prox_l1_translated, f=target),
            value=lambda r, t=target: l1_value(r - t),
        ))
    problem = SaddlePointProblem([PrimalBlock("dx", 1), PrimalBlock("dy", 1)], duals)
    step, _ = solve(problem, max_iterations=cfg.inner_iterations, tolerance=cfg.tolerance, log_every=0)
    return FlowField.from_arrays(v_tilde.vx.data + step["dx"][0], v_tilde.vy.data + step["dy"][0])


def linearized_flow_step(fixed: Image, moving: Image, v_tilde: FlowField, cfg: FlowConfig) -> FlowField:
    """One convex subproblem around v_tilde; returns the updated flow."""
    if not (fixed.shape == moving.shape == v_tilde.shape):
        raise DimensionError(f"shapes differ: fixed {fixed.shape}, moving {moving.shape}, flow {v_tilde.shape}")
    height, width = fixed.shape
    pixels = width * height
    warp = warp_matrix(v_tilde)

    mgx, mgy = central_gradients(moving.data)
    fgx, fgy = central_gradients(fixed.data)
    mgxx, mgxy = central_gradients(mgx)
    mgyx, mgyy = central_gradients(mgy)

    # (residual, d/dvx, d/dvy) per constancy channel; residuals at v_tilde.
    channels = [
        (_warp(moving.data, warp) - fixed.data, _warp(mgx, warp), _warp(mgy, warp)),
        (_warp(mgx, warp) - fgx, _warp(mgxx, warp), _warp(mgxy, warp)),
        (_warp(mgy, warp) - fgy, _warp(mgyx, warp), _warp(mgyy, warp)),
    ]
    if math.isinf(cfg.beta):
        return _global_flow_step(channels, v_tilde, cfg)
    vx0 = v_tilde.vx.vector()
    vy0 = v_tilde.vy.vector()

    duals = []
    for k, (rho, gx, gy) in enumerate(channels):
        gx, gy = gx.reshape(-1), gy.reshape(-1)
        target = gx * vx0 + gy * vy0 - rho.reshape(-1)
        duals.append(DualBlock(
            name=f"data{k}",
            dim=pixels,
            operators={"vx": LinearOperator(sp.diags(gx)), "vy": LinearOperator(sp.diags(gy))},
            prox=partial(prox_l1_translated, f=target),
            value=lambda r, t=target: l1_value(r - t),
        ))
    grad = gradient((width, height))
    huber = partial(prox_huber_dual, alpha=cfg.beta, epsilon=cfg.huber_epsilon, channels=2)
    for comp in ("vx", "vy"):
        duals.append(DualBlock(
            name=f"reg_{comp}",
            dim=grad.output_dim,
            operators={comp: grad},
            prox=huber,
            value=lambda z: huber_value(z, cfg.beta, cfg.huber_epsilon, 2),
        ))
    problem = SaddlePointProblem([PrimalBlock("vx", pixels), PrimalBlock("vy", pixels)], duals)
    solution, _ = solve(problem, max_iterations=cfg.inner_iterations, tolerance=cfg.tolerance,
                        x0={"vx": vx0, "vy": vy0}, log_every=0)
    return FlowField.from_arrays(solution["vx"].reshape(height, width), solution["vy"].reshape(height, width))


def median_filter_flow(flow: FlowField, radius: int) -> FlowField:
    if radius < 1:
        raise ValueError(f"median radius must be at least 1, got {radius}")
    size = 2 * radius + 1
    return FlowField.from_arrays(
        ndimage.median_filter(flow.vx.data, size=size, mode="nearest"),
        ndimage.median_filter(flow.vy.data, size=size, mode="nearest"),
    )


def resize_flow(flow: FlowField, shape: Tuple[int, int]) -> FlowField:
    """Bicubic resize to (height, width), displacements rescaled per axis."""
    height, width = shape
    sx = width / flow.width
    sy = height / flow.height
    vx = bicubic_resize(flow.vx.data, shape, antialias=False) * sx
    vy = bicubic_resize(flow.vy.data, shape, antialias=False) * sy
    return FlowField.from_arrays(vx, vy)


def upsample_flow(flow: FlowField, factor: float) -> FlowField:
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    shape = scaled_shape(flow.shape, factor)
    vx = bicubic_resize(flow.vx.data, shape, scale=factor, antialias=False) * factor
    vy = bicubic_resize(flow.vy.data, shape, scale=factor, antialias=False) * factor
    return FlowField.from_arrays(vx, vy)


def upsample_flows(flows: FlowSet, factor: float) -> FlowSet:
    return FlowSet(tuple(upsample_flow(f, factor) for f in flows.flows), flows.directions)


def estimate_pair_flow(fixed: Image, moving: Image, cfg: FlowConfig | None = None) -> FlowField:
    """Flow v with moving(x + v(x)) ~ fixed(x)."""
    cfg = cfg or FlowConfig()
    if fixed.shape != moving.shape:
        raise DimensionError(f"frames differ in shape: {fixed.shape} vs {moving.shape}")
    height, width = fixed.shape
    if np.ptp(fixed.data) == 0 and np.ptp(moving.data) == 0:
        return FlowField.zeros(width, height)

    pyramid = build_pyramid(fixed, moving, cfg)
    coarse_fixed, _ = pyramid.levels[-1]
    flow = FlowField.zeros(coarse_fixed.width, coarse_fixed.height)
    for level in range(len(pyramid.levels) - 1, -1, -1):
        lvl_fixed, lvl_moving = pyramid.levels[level]
        if flow.shape != lvl_fixed.shape:
            flow = resize_flow(flow, lvl_fixed.shape)
        for _ in range(cfg.warps_per_level):
            flow = linearized_flow_step(lvl_fixed, lvl_moving, flow, cfg)
        if cfg.median_radius >= 1:
            flow = median_filter_flow(flow, cfg.median_radius)
        logger.debug("flow level %d (%dx%d): mean magnitude %.4f",
                     level, lvl_fixed.width, lvl_fixed.height, float(np.mean(flow.magnitude())))
    return flow


def pair_images(frames: FrameSequence, k: int, direction: FlowDirection) -> Tuple[Image, Image]:
    """(fixed, moving) for pair (k, k+1) under the given direction."""
    if direction == FlowDirection.BACKWARD:
        return frames[k], frames[k + 1]
    return frames[k + 1], frames[k]


def estimate_sequence_flows(frames: FrameSequence, cfg: FlowConfig | None = None,
                            parity: str = "matrix", workers: int = 1) -> FlowSet:
    cfg = cfg or FlowConfig()
    n = len(frames)
    if n < 2:
        raise DimensionError(f"flow estimation needs at least 2 frames, got {n}")
    directions = [flow_direction(k, parity) for k in range(n - 1)]

    def one(k: int) -> FlowField:
        fixed, moving = pair_images(frames, k, directions[k])
        flow = estimate_pair_flow(fixed, moving, cfg)
        logger.info("flow %d/%d (%s) done", k + 1, n - 1, directions[k].value)
        return flow

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flows: List[FlowField] = list(pool.map(one, range(n - 1)))
    else:
        flows = [one(k) for k in range(n - 1)]
    return FlowSet(tuple(flows), tuple(directions))


def endpoint_error(flow: FlowField, vx, vy, border: int = 0) -> float:
    """Mean endpoint error against a reference flow, ignoring a border."""
    ex = flow.vx.data - np.broadcast_to(vx, flow.shape)
    ey = flow.vy.data - np.broadcast_to(vy, flow.shape)
    err = np.hypot(ex, ey)
    if border:
        err = err[border:-border, border:-border]
    return float(np.mean(err))
