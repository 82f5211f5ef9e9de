#!/usr/bin/env python3
"""
Multi-frame video super resolution

Commands:
  synth  Render a planar-motion clip from a base image (or a generated
         text-like page), optionally with its bicubic low-res version.
           main.py synth OUT --frames 5 --shift 0.6 0.3 [--base IMG] [--factor 4]

  run    Flow estimation + joint super resolution of a clip.
           main.py run INPUT OUT [--factor 4] [--config FILE] [--truth DIR]
         Parameters: --alpha --beta --kappa --h --iterations --workers
         Outputs:    --save-flows --save-split --save-energy --png16 --grayscale

  eval   PSNR/SSIM of the central frame after cropping the border.
           main.py eval RESULT TRUTH [--crop 20] [--out FILE]

Settings precedence: built-in defaults < --config file < flags.

Exit codes:
  0 success, 1 usage, 2 I/O, 3 numerical failure
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Dict, List, Sequence

from videosr.config_store import ConfigStore, RunManifest, build_manifest
from videosr.core import FlowDirection, FrameSequence, Image, NumericalError, clip_sequence, sequences_to_ycbcr
from videosr.evaluate import (
    CENTRAL_CROP,
    bicubic_upsample,
    central_index,
    evaluate_central,
    generate_lowres,
    max_window,
    synth_translation_sequence,
    text_like_base,
)
from videosr.frame_store import (
    MANIFEST_NAME,
    RUN_CONFIG_NAME,
    MetricsRow,
    frame_paths,
    load_channels,
    read_manifest,
    read_png,
    save_frames,
    write_energy_csv,
    write_flo,
    write_manifest,
    write_metrics_csv,
)
from videosr.optflow import endpoint_error
from videosr.resample import scaled_shape
from videosr.superres import (
    SuperResSolution,
    split_for_display,
    superresolve_color,
    superresolve_sequence,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    """Bad arguments or inputs that do not fit together."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _luminance(channels: Sequence[FrameSequence]) -> FrameSequence:
    if len(channels) == 1:
        return channels[0]
    y, _, _ = sequences_to_ycbcr(*channels)
    return y


# --- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.frames < 1:
        raise UsageError(f"--frames must be at least 1, got {args.frames}")
    if args.factor is not None and args.factor <= 1:
        raise UsageError(f"--factor must exceed 1, got {args.factor}")
    if args.base:
        data = read_png(args.base)
        planes = [data] if data.ndim == 2 else [data[..., c] for c in range(3)]
    else:
        width, height = args.size
        planes = [text_like_base(width, height, seed=args.seed).data]

    shift = (args.shift[0], args.shift[1])
    size = max_window(Image(planes[0]), args.frames, shift)
    if args.factor:
        # Ground truth that the low-res frames magnify back onto exactly.
        size = tuple(int(round(math.floor(s / args.factor) * args.factor)) for s in size)
    channels = [synth_translation_sequence(Image(p), args.frames, shift, size) for p in planes]
    lowres = [generate_lowres(c, args.factor) for c in channels] if args.factor else None

    save_frames(args.out, channels, png16=args.png16)
    info: Dict[str, object] = {
        "frames": args.frames,
        "shift_x": shift[0],
        "shift_y": shift[1],
        "width": channels[0].width,
        "height": channels[0].height,
        "base": args.base or f"text-like seed {args.seed}",
    }
    if lowres is not None:
        lowres_dir = os.path.join(args.out, "lowres")
        save_frames(lowres_dir, lowres, png16=args.png16)
        info.update({"factor": args.factor, "lowres_width": lowres[0].width, "lowres_height": lowres[0].height})
    write_manifest(os.path.join(args.out, MANIFEST_NAME), info)
    logger.info("wrote %d frames %dx%d to %s", args.frames, channels[0].width, channels[0].height, args.out)
    return EXIT_OK


# --- run -------------------------------------------------------------------

def _flag_values(args) -> Dict[str, object]:
    values = {
        "alpha": args.alpha,
        "beta": args.beta,
        "kappa": args.kappa,
        "h": args.h,
        "iterations": args.iterations,
        "tolerance": args.tolerance,
        "factor": args.factor,
        "parity": args.parity,
        "workers": args.workers,
    }
    for flag in ("grayscale", "save_flows", "save_split", "save_energy", "png16"):
        if getattr(args, flag):
            values[flag] = True
    return {k: v for k, v in values.items() if v is not None}


def _load_manifest(args) -> RunManifest:
    file_values: Dict[str, object] = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise OSError(f"config file {args.config} does not exist")
        store = ConfigStore(args.config)
        store.load()
        file_values = store.get_values()
    try:
        manifest = build_manifest(args.input, args.out, file_values, _flag_values(args), truth_pattern=args.truth)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if manifest.factor <= 1:
        raise UsageError(f"factor must exceed 1, got {manifest.factor}")
    return manifest


def _check_truth(truth: FrameSequence, n: int, hi_shape, crop: int) -> None:
    if len(truth) != n:
        raise UsageError(f"ground truth has {len(truth)} frames, input has {n}")
    if truth.shape != tuple(hi_shape):
        raise UsageError(f"ground truth frames are {truth.width}x{truth.height}, output will be {hi_shape[1]}x{hi_shape[0]}")
    if crop < 0 or 2 * crop >= min(hi_shape):
        raise UsageError(f"crop {crop} does not fit a {hi_shape[1]}x{hi_shape[0]} frame")


def _write_extras(manifest: RunManifest, solution: SuperResSolution) -> None:
    out = manifest.output_dir
    if manifest.save_split:
        save_frames(os.path.join(out, "w"), [split_for_display(solution.w)], png16=manifest.png16)
        save_frames(os.path.join(out, "z"), [split_for_display(solution.z)], png16=manifest.png16)
    if manifest.save_flows and solution.flows is not None:
        for k, (flow, direction) in enumerate(zip(solution.flows.flows, solution.flows.directions)):
            write_flo(os.path.join(out, "flows", f"flow_{k:04d}_{direction.value}.flo"), flow)
    if manifest.save_energy:
        report = solution.report
        write_energy_csv(os.path.join(out, "energy.csv"), report.trace_iterations, report.energy_trace)


def _report_flows(truth_pattern: str, solution: SuperResSolution, border: int) -> None:
    """Endpoint error of each upsampled flow when the truth clip records its shift."""
    path = os.path.join(truth_pattern, MANIFEST_NAME)
    if solution.flows is None or not len(solution.flows) or not os.path.isfile(path):
        return
    info = read_manifest(path)
    if "shift_x" not in info or "shift_y" not in info:
        return
    dx, dy = float(info["shift_x"]), float(info["shift_y"])
    for k, (flow, direction) in enumerate(zip(solution.flows.flows, solution.flows.directions)):
        sign = 1.0 if direction is FlowDirection.FORWARD else -1.0
        epe = endpoint_error(flow, sign * dx, sign * dy, border=border)
        logger.info("flow %d (%s): endpoint error %.4f px", k, direction.value, epe)


def cmd_run(args) -> int:
    manifest = _load_manifest(args)
    cfg = manifest.superres_config()
    flow_cfg = manifest.flow_config()

    channels = load_channels(manifest.input_pattern, grayscale=manifest.grayscale)
    lum = _luminance(channels)
    n = len(lum)
    hi_shape = scaled_shape(lum.shape, cfg.factor)
    if min(hi_shape) < 2:
        raise UsageError(f"factor {cfg.factor} on {lum.width}x{lum.height} frames leaves no room for a gradient")

    truth = None
    if manifest.truth_pattern:
        truth = _luminance(load_channels(manifest.truth_pattern, grayscale=manifest.grayscale))
        _check_truth(truth, n, hi_shape, args.crop)

    logger.info("super resolving %d frames %dx%d by %g", n, lum.width, lum.height, cfg.factor)
    if cfg.h != "auto":
        logger.info("h override %g: skipping estimation", float(cfg.h))
    if len(channels) == 3:
        rgb, solution = superresolve_color(*channels, cfg=cfg, flow_cfg=flow_cfg)
        outputs: List[FrameSequence] = list(rgb)
    else:
        solution = superresolve_sequence(lum, cfg, flow_cfg)
        outputs = [solution.u]
    if cfg.h == "auto":
        logger.info("estimated temporal step size h = %.6g", solution.h)

    save_frames(manifest.output_dir, outputs, png16=manifest.png16)
    _write_extras(manifest, solution)
    settings = ConfigStore(os.path.join(manifest.output_dir, RUN_CONFIG_NAME))
    settings.update(manifest.overrides)
    settings.save()

    if truth is not None:
        name = os.path.basename(os.path.normpath(manifest.input_pattern)) or "sequence"
        baseline = clip_sequence(bicubic_upsample(lum, cfg.factor, hi_shape))
        rows = []
        for method, result in (("bicubic", baseline), ("mmc", solution.u)):
            scores = evaluate_central(result, truth, args.crop)
            rows.append(MetricsRow(name, method, scores.frame_index, scores.psnr, scores.ssim))
            logger.info("%s: PSNR %.3f dB, SSIM %.4f on frame %d", method, scores.psnr, scores.ssim, scores.frame_index)
        write_metrics_csv(os.path.join(manifest.output_dir, "metrics.csv"), rows)
        _report_flows(manifest.truth_pattern, solution, args.crop)
    return EXIT_OK


# --- eval ------------------------------------------------------------------

def _mismatched_frames(result_paths: List[str], truth_paths: List[str]) -> List[str]:
    names_a = {os.path.basename(p) for p in result_paths}
    names_b = {os.path.basename(p) for p in truth_paths}
    return sorted(names_a ^ names_b)


def cmd_eval(args) -> int:
    result_paths = frame_paths(args.result)
    truth_paths = frame_paths(args.truth)
    if len(result_paths) != len(truth_paths):
        offending = _mismatched_frames(result_paths, truth_paths)
        raise UsageError(
            f"{len(result_paths)} result frames vs {len(truth_paths)} ground-truth frames; "
            f"unmatched: {', '.join(offending) or 'none by name'}"
        )
    result = load_channels(args.result, grayscale=True)[0]
    truth = load_channels(args.truth, grayscale=True)[0]
    if result.shape != truth.shape:
        raise UsageError(
            f"result frames are {result.width}x{result.height}, ground truth {truth.width}x{truth.height}: "
            f"{os.path.basename(result_paths[central_index(len(result))])}"
        )
    if args.crop < 0 or 2 * args.crop >= min(result.shape):
        raise UsageError(f"crop {args.crop} does not fit a {result.width}x{result.height} frame")

    scores = evaluate_central(result, truth, args.crop)
    out = args.out or os.path.join(args.result, "metrics.csv")
    name = os.path.basename(os.path.normpath(args.truth)) or "sequence"
    write_metrics_csv(out, [MetricsRow(name, args.method, scores.frame_index, scores.psnr, scores.ssim)])
    logger.info("frame %d: PSNR %s dB, SSIM %.4f", scores.frame_index, f"{scores.psnr:.3f}", scores.ssim)
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="main.py", description="Multi-frame video super resolution")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    synth = sub.add_parser("synth", help="render a planar-motion clip")
    synth.add_argument("out")
    synth.add_argument("--base", help="base image; a text-like page is generated when omitted")
    synth.add_argument("--size", type=int, nargs=2, default=(160, 120), metavar=("W", "H"))
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--frames", type=int, default=5)
    synth.add_argument("--shift", type=float, nargs=2, default=(0.6, 0.3), metavar=("DX", "DY"))
    synth.add_argument("--factor", type=float, help="also write bicubic low-res frames to OUT/lowres")
    synth.add_argument("--png16", action="store_true")
    synth.set_defaults(func=cmd_synth)

    run = sub.add_parser("run", help="super resolve a clip")
    run.add_argument("input", help="frame directory or glob")
    run.add_argument("out")
    run.add_argument("--config")
    run.add_argument("--factor", type=float)
    run.add_argument("--alpha", type=float)
    run.add_argument("--beta", type=float)
    run.add_argument("--kappa", type=float)
    run.add_argument("--h", type=float, help="temporal step size; estimated when omitted")
    run.add_argument("--iterations", type=int)
    run.add_argument("--tolerance", type=float)
    run.add_argument("--parity", choices=("matrix", "formula"))
    run.add_argument("--workers", type=int)
    run.add_argument("--truth", help="ground-truth frames for metrics.csv")
    run.add_argument("--crop", type=int, default=CENTRAL_CROP)
    run.add_argument("--grayscale", action="store_true")
    run.add_argument("--save-flows", action="store_true")
    run.add_argument("--save-split", action="store_true")
    run.add_argument("--save-energy", action="store_true")
    run.add_argument("--png16", action="store_true")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="central-frame PSNR/SSIM")
    ev.add_argument("result")
    ev.add_argument("truth")
    ev.add_argument("--crop", type=int, default=CENTRAL_CROP)
    ev.add_argument("--out", help="CSV path (default RESULT/metrics.csv)")
    ev.add_argument("--method", default="result")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        logger.error("usage error: %s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
