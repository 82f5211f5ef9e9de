"""Quality metrics, degradation and synthetic ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from .core import DimensionError, FrameSequence, Image, clip_image
from .resample import bicubic_resize, sample_bicubic, scaled_shape

CENTRAL_CROP = 20


@dataclass(frozen=True)
class EvalResult:
    psnr: float
    ssim: float
    frame_index: int
    crop_margin: int


def _check_pair(a: Image, b: Image) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}")


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB for peak 1.0; identical images give +inf."""
    _check_pair(a, b)
    if np.array_equal(a.data, b.data):
        return math.inf
    return float(peak_signal_noise_ratio(a.data, b.data, data_range=1.0))


def ssim(a: Image, b: Image) -> float:
    """Mean SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    _check_pair(a, b)
    return float(structural_similarity(
        a.data, b.data,
        data_range=1.0,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        K1=0.01,
        K2=0.03,
    ))


def central_index(n: int) -> int:
    return n // 2


def crop(img: Image, margin: int) -> Image:
    if margin < 0:
        raise ValueError(f"crop must be non-negative, got {margin}")
    if 2 * margin >= min(img.shape):
        raise ValueError(f"crop {margin} leaves nothing of a {img.width}x{img.height} image")
    if margin == 0:
        return img
    return Image(img.data[margin:-margin, margin:-margin])


def evaluate_central(result: FrameSequence, truth: FrameSequence, crop_margin: int = CENTRAL_CROP) -> EvalResult:
    if len(result) != len(truth):
        raise DimensionError(f"{len(result)} result frames vs {len(truth)} ground-truth frames")
    if result.shape != truth.shape:
        raise DimensionError(f"result frames {result.shape} vs ground truth {truth.shape}")
    k = central_index(len(result))
    a = crop(result[k], crop_margin)
    b = crop(truth[k], crop_margin)
    return EvalResult(psnr=psnr(a, b), ssim=ssim(a, b), frame_index=k, crop_margin=crop_margin)


def generate_lowres(truth: FrameSequence, factor: float) -> FrameSequence:
    """Bicubic downsampling followed by clipping to [0, 1]."""
    if factor <= 1:
        raise ValueError(f"factor must exceed 1, got {factor}")
    shape = (int(math.floor(truth.height / factor)), int(math.floor(truth.width / factor)))
    if min(shape) < 8:
        raise DimensionError(f"downsampling {truth.width}x{truth.height} by {factor} leaves {shape[1]}x{shape[0]}")
    frames = [clip_image(Image(bicubic_resize(f.data, shape, scale=1.0 / factor))) for f in truth]
    return FrameSequence(tuple(frames))


def bicubic_upsample(seq: FrameSequence, factor: float, shape: Tuple[int, int] | None = None) -> FrameSequence:
    """Plain bicubic magnification, the baseline and the solver's starting point."""
    shape = shape or scaled_shape(seq.shape, factor)
    return FrameSequence(tuple(Image(bicubic_resize(f.data, shape, scale=factor, antialias=False)) for f in seq))


def max_window(base: Image, n: int, shift_per_frame: Tuple[float, float]) -> Tuple[int, int]:
    """Largest (width, height) window that stays inside base for all n frames."""
    total_x = abs(float(shift_per_frame[0])) * max(0, n - 1)
    total_y = abs(float(shift_per_frame[1])) * max(0, n - 1)
    return int(math.floor(base.width - 2.0 - total_x)), int(math.floor(base.height - 2.0 - total_y))


def synth_translation_sequence(base: Image, n: int, shift_per_frame: Tuple[float, float],
                               size: Tuple[int, int] | None = None) -> FrameSequence:
    """Frames k = base sampled at offset k * shift, cropped to a common window.

    ``size`` is (width, height) of the window; by default the largest window
    that stays inside ``base`` for every frame with a 1 pixel margin.
    """
    if n < 1:
        raise ValueError(f"need at least one frame, got {n}")
    sx, sy = float(shift_per_frame[0]), float(shift_per_frame[1])
    total_x, total_y = sx * (n - 1), sy * (n - 1)
    x0 = 1.0 + max(0.0, -total_x)
    y0 = 1.0 + max(0.0, -total_y)
    max_w, max_h = max_window(base, n, shift_per_frame)
    width, height = size if size is not None else (max_w, max_h)
    if width < 1 or height < 1 or width > max_w or height > max_h:
        raise DimensionError(f"a {width}x{height} window shifted by {total_x:.3g},{total_y:.3g} exits the {base.width}x{base.height} base")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    frames = []
    for k in range(n):
        frames.append(Image(sample_bicubic(base.data, xs + x0 + k * sx, ys + y0 + k * sy)))
    return FrameSequence(tuple(frames))


def text_like_base(width: int, height: int, seed: int = 0, cell: int = 12, stroke: int = 2) -> Image:
    """Dark axis-aligned strokes in cells of a light page, like scanned text."""
    rng = np.random.default_rng(seed)
    img = np.full((height, width), 0.9)
    for cy in range(0, height - cell + 1, cell):
        for cx in range(0, width - cell + 1, cell):
            for _ in range(int(rng.integers(1, 4))):
                start = int(rng.integers(1, cell // 2))
                length = int(rng.integers(cell // 3, cell - start))
                offset = int(rng.integers(1, cell - stroke))
                if rng.random() < 0.5:
                    img[cy + offset:cy + offset + stroke, cx + start:cx + start + length] = 0.1
                else:
                    img[cy + start:cy + start + length, cx + offset:cx + offset + stroke] = 0.1
    return Image(img)


def textured_image(width: int, height: int, seed: int = 0, smooth: float = 1.5) -> Image:
    """Smooth random texture in [0, 1], suitable for flow tests."""
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.random((height, width)), smooth, mode="reflect")
    lo, hi = noise.min(), noise.max()
    return Image((noise - lo) / (hi - lo))
