"""Joint multi-frame super resolution with infimal-convolution regularisation.

All high-resolution frames are solved for at once:

    min_{u,w} ||A u - f||_1 + alpha ||(grad w; kappa Wt w)||_{2,1}
                            + alpha ||(kappa grad (u-w); Wt (u-w))||_{2,1}

where A = diag(D B, ..., D B) and Wt is the motion-corrected time derivative
built from alternating forward/backward flows. The (2,1) groups hold three
channels per pixel: x-derivative, y-derivative and warp residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial
from typing import Tuple

import numpy as np

from .core import (
    DimensionError,
    FlowConfig,
    FlowSet,
    FrameSequence,
    SuperResConfig,
    clip_sequence,
    sequences_from_ycbcr,
    sequences_to_ycbcr,
)
from .evaluate import bicubic_upsample
from .linops import (
    LinearOperator,
    block_diag_data_operator,
    block_gradient,
    decimate,
    gaussian_blur,
    motion_time_derivative,
    vstack,
)
from .optflow import estimate_sequence_flows, upsample_flows
from .pdsolve import (
    DualBlock,
    PrimalBlock,
    SaddlePointProblem,
    SolveReport,
    l1_value,
    l21_value,
    prox_l1_translated,
    prox_l21_dual,
    solve,
)
from .resample import scaled_shape

logger = logging.getLogger(__name__)

GROUP_CHANNELS = 3
_GUARD = 1e-12


@dataclass
class SuperResProblem:
    data_op: LinearOperator
    grad: LinearOperator
    time_deriv: LinearOperator
    lowres: FrameSequence
    config: SuperResConfig
    h: float
    hi_shape: Tuple[int, int]  # (height, width)

    @property
    def n(self) -> int:
        return len(self.lowres)

    @property
    def hi_pixels(self) -> int:
        return self.n * self.hi_shape[0] * self.hi_shape[1]

    def f(self) -> np.ndarray:
        return self.lowres.vector()

    def spatial_dominant(self) -> LinearOperator:
        """[grad; kappa Wt], the term carried by w."""
        return vstack([self.grad, self.time_deriv.scaled(self.config.kappa)])

    def temporal_dominant(self) -> LinearOperator:
        """[kappa grad; Wt], the term carried by u - w."""
        return vstack([self.grad.scaled(self.config.kappa), self.time_deriv])

    def sequence(self, vector: np.ndarray) -> FrameSequence:
        height, width = self.hi_shape
        return FrameSequence.from_vector(vector, self.n, width, height)


@dataclass
class SuperResSolution:
    u: FrameSequence
    w: FrameSequence
    report: SolveReport
    u_unclipped: FrameSequence | None = None
    h: float = 1.0
    flows: FlowSet | None = None

    @property
    def z(self) -> FrameSequence:
        u = self.u_unclipped if self.u_unclipped is not None else self.u
        return FrameSequence.from_array(u.stack() - self.w.stack())


def estimate_temporal_stepsize(u0: FrameSequence, flows: FlowSet) -> float:
    """h = ||Wt_1 u0||_1 / (||dx u0||_1 + ||dy u0||_1), guarded to 1."""
    dims = (u0.width, u0.height)
    n = len(u0)
    if n < 2:
        return 1.0
    x = u0.vector()
    numerator = l1_value(motion_time_derivative(flows, 1.0, dims, n).apply(x))
    denominator = l1_value(block_gradient(dims, n).apply(x))
    if numerator < _GUARD or denominator < _GUARD:
        return 1.0
    return numerator / denominator


def assemble(lowres: FrameSequence, flows: FlowSet, cfg: SuperResConfig, h: float | None = None) -> SuperResProblem:
    n = len(lowres)
    hi_shape = scaled_shape(lowres.shape, cfg.factor)
    hi_h, hi_w = hi_shape
    if len(flows) != n - 1:
        raise DimensionError(f"{len(flows)} flows for {n} frames")
    for k, flow in enumerate(flows.flows):
        if flow.shape != hi_shape:
            raise DimensionError(f"flow {k} is {flow.shape}, the high-resolution grid is {hi_shape}")
    dims = (hi_w, hi_h)
    blur = gaussian_blur(cfg.blur_sigma(), dims)
    dec = decimate(cfg.factor, dims, lo_dims=(lowres.width, lowres.height))
    data_op = block_diag_data_operator(blur, dec, n)

    if h is None:
        if cfg.h == "auto":
            h = estimate_temporal_stepsize(bicubic_upsample(lowres, cfg.factor, hi_shape), flows)
        else:
            h = float(cfg.h)
    logger.info("assembled %d frames %dx%d -> %dx%d, h=%.6g", n, lowres.width, lowres.height, hi_w, hi_h, h)
    return SuperResProblem(
        data_op=data_op,
        grad=block_gradient(dims, n),
        time_deriv=motion_time_derivative(flows, h, dims, n),
        lowres=lowres,
        config=cfg,
        h=h,
        hi_shape=hi_shape,
    )


def _group_prox(alpha: float):
    return lambda y, sigma: prox_l21_dual(y, alpha, GROUP_CHANNELS)


def _group_value(alpha: float):
    return lambda z: l21_value(z, alpha, GROUP_CHANNELS)


def _data_block(problem: SuperResProblem) -> DualBlock:
    f = problem.f()
    return DualBlock(
        name="data",
        dim=problem.data_op.output_dim,
        operators={"u": problem.data_op},
        prox=partial(prox_l1_translated, f=f),
        value=lambda r: l1_value(r - f),
    )


def infconv_saddle_problem(problem: SuperResProblem, swap_roles: bool = False) -> SaddlePointProblem:
    alpha = problem.config.alpha
    on_w = problem.spatial_dominant()
    on_rest = problem.temporal_dominant()
    if swap_roles:
        on_w, on_rest = on_rest, on_w
    pixels = problem.hi_pixels
    return SaddlePointProblem(
        primal_blocks=[
            PrimalBlock("u", pixels, segments=problem.n),
            PrimalBlock("w", pixels, segments=problem.n),
        ],
        dual_blocks=[
            _data_block(problem),
            DualBlock("infconv_a", on_w.output_dim, {"w": on_w}, _group_prox(alpha), _group_value(alpha)),
            DualBlock("infconv_b", on_rest.output_dim, {"u": on_rest, "w": on_rest.scaled(-1.0)},
                      _group_prox(alpha), _group_value(alpha)),
        ],
    )


def initial_guess(problem: SuperResProblem) -> Tuple[FrameSequence, FrameSequence]:
    """u0 = bicubic upsampling of f, w0 = u0 / 2."""
    u0 = bicubic_upsample(problem.lowres, problem.config.factor, problem.hi_shape)
    return u0, FrameSequence.from_array(u0.stack() / 2.0)


def solve_superres(problem: SuperResProblem, swap_roles: bool = False) -> SuperResSolution:
    cfg = problem.config
    saddle = infconv_saddle_problem(problem, swap_roles)
    u0, w0 = initial_guess(problem)
    parts, report = solve(
        saddle,
        max_iterations=cfg.max_iterations,
        tolerance=cfg.tolerance,
        x0={"u": u0.vector(), "w": w0.vector()},
        trace_every=cfg.trace_every,
    )
    u_raw = problem.sequence(parts["u"])
    return SuperResSolution(
        u=clip_sequence(u_raw),
        w=problem.sequence(parts["w"]),
        report=report,
        u_unclipped=u_raw,
        h=problem.h,
    )


def solve_single_term(problem: SuperResProblem) -> SuperResSolution:
    """||A u - f||_1 + alpha ||(grad u; Wt u)||_{2,1}, no infimal convolution."""
    cfg = problem.config
    joint = vstack([problem.grad, problem.time_deriv])
    saddle = SaddlePointProblem(
        primal_blocks=[PrimalBlock("u", problem.hi_pixels, segments=problem.n)],
        dual_blocks=[
            _data_block(problem),
            DualBlock("joint", joint.output_dim, {"u": joint}, _group_prox(cfg.alpha), _group_value(cfg.alpha)),
        ],
    )
    u0, _ = initial_guess(problem)
    parts, report = solve(saddle, max_iterations=cfg.max_iterations, tolerance=cfg.tolerance,
                          x0={"u": u0.vector()}, trace_every=cfg.trace_every)
    u_raw = problem.sequence(parts["u"])
    return SuperResSolution(u=clip_sequence(u_raw), w=u_raw, report=report, u_unclipped=u_raw, h=problem.h)


def energy_value(problem: SuperResProblem, u: FrameSequence, w: FrameSequence) -> float:
    """Objective of the joint energy evaluated directly."""
    uv, wv = u.vector(), w.vector()
    if uv.size != problem.hi_pixels or wv.size != problem.hi_pixels:
        raise DimensionError(f"expected {problem.hi_pixels} high-resolution values, got {uv.size} and {wv.size}")
    alpha = problem.config.alpha
    data = l1_value(problem.data_op.apply(uv) - problem.f())
    spatial = l21_value(problem.spatial_dominant().apply(wv), alpha, GROUP_CHANNELS)
    temporal = l21_value(problem.temporal_dominant().apply(uv - wv), alpha, GROUP_CHANNELS)
    return data + spatial + temporal


def superresolve_sequence(lowres: FrameSequence, cfg: SuperResConfig | None = None,
                          flow_cfg: FlowConfig | None = None, flows: FlowSet | None = None) -> SuperResSolution:
    """Flow on the low-resolution frames, upsample flows, assemble, solve."""
    cfg = cfg or SuperResConfig()
    flow_cfg = flow_cfg or FlowConfig(beta=cfg.beta)
    n = len(lowres)
    if flows is None:
        if n >= 2:
            low_flows = estimate_sequence_flows(lowres, flow_cfg, parity=cfg.parity, workers=cfg.workers)
            flows = upsample_flows(low_flows, cfg.factor)
        else:
            flows = FlowSet((), ())
    problem = assemble(lowres, flows, cfg)
    solution = solve_superres(problem)
    solution.flows = flows
    return solution


def superresolve_color(red: FrameSequence, green: FrameSequence, blue: FrameSequence,
                       cfg: SuperResConfig | None = None, flow_cfg: FlowConfig | None = None,
                       ) -> Tuple[Tuple[FrameSequence, FrameSequence, FrameSequence], SuperResSolution]:
    """Super resolve luminance; chroma is upsampled bicubically."""
    cfg = cfg or SuperResConfig()
    y, cb, cr = sequences_to_ycbcr(red, green, blue)
    solution = superresolve_sequence(y, cfg, flow_cfg)
    hi_shape = solution.u.shape
    cb_hi = bicubic_upsample(cb, cfg.factor, hi_shape)
    cr_hi = bicubic_upsample(cr, cfg.factor, hi_shape)
    rgb = sequences_from_ycbcr(solution.u, cb_hi, cr_hi)
    return tuple(clip_sequence(c) for c in rgb), solution  # type: ignore[return-value]


def split_for_display(seq: FrameSequence) -> FrameSequence:
    """Rescale a w or z part to [0, 1] over the whole sequence for viewing."""
    data = seq.stack()
    lo, hi = float(data.min()), float(data.max())
    if hi - lo < _GUARD:
        return FrameSequence.from_array(np.zeros_like(data))
    return FrameSequence.from_array((data - lo) / (hi - lo))
