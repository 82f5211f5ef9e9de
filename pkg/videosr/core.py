"""Domain types shared by every module.

Rasters are float64 numpy arrays of shape (height, width), nominal range
[0, 1]. Flattening is always row-major (pixel index = y * width + x) so the
sparse operators in linops index identically everywhere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np


class VideoSRError(Exception):
    """Base class for errors raised by the toolkit."""


class DimensionError(VideoSRError, ValueError):
    """Shapes or lengths that do not fit together."""


class NumericalError(VideoSRError, ArithmeticError):
    """Non-finite values where finite ones are required."""


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image data must be a non-empty 2-D array, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, array) -> "Image":
        return cls(np.asarray(array))

    @classmethod
    def from_vector(cls, vector, width: int, height: int) -> "Image":
        vec = np.asarray(vector, dtype=np.float64)
        if vec.size != width * height:
            raise DimensionError(f"vector of length {vec.size} does not fill {width}x{height}")
        return cls(vec.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def vector(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class FrameSequence:
    frames: Tuple[Image, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise DimensionError("a frame sequence needs at least one frame")
        shape = frames[0].shape
        for k, frame in enumerate(frames):
            if frame.shape != shape:
                raise DimensionError(f"frame {k} has shape {frame.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_array(cls, array) -> "FrameSequence":
        """Build from an (n, height, width) array."""
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise DimensionError(f"expected an (n, h, w) array, got shape {arr.shape}")
        return cls(tuple(Image(a) for a in arr))

    @classmethod
    def from_vector(cls, vector, n: int, width: int, height: int) -> "FrameSequence":
        vec = np.asarray(vector, dtype=np.float64)
        if vec.size != n * width * height:
            raise DimensionError(f"vector of length {vec.size} does not fill {n} frames of {width}x{height}")
        return cls.from_array(vec.reshape(n, height, width))

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, k: int) -> Image:
        return self.frames[k]

    def __iter__(self):
        return iter(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].shape

    @property
    def pixels_per_frame(self) -> int:
        return self.width * self.height

    def stack(self) -> np.ndarray:
        return np.stack([f.data for f in self.frames])

    def vector(self) -> np.ndarray:
        return self.stack().reshape(-1)


@dataclass(frozen=True)
class FlowField:
    vx: Image
    vy: Image

    def __post_init__(self):
        if self.vx.shape != self.vy.shape:
            raise DimensionError(f"flow components differ in shape: {self.vx.shape} vs {self.vy.shape}")
        if not (np.all(np.isfinite(self.vx.data)) and np.all(np.isfinite(self.vy.data))):
            raise NumericalError("flow field contains non-finite values")

    @classmethod
    def from_arrays(cls, vx, vy) -> "FlowField":
        return cls(Image(vx), Image(vy))

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls.from_arrays(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.vx.width

    @property
    def height(self) -> int:
        return self.vx.height

    @property
    def shape(self) -> Tuple[int, int]:
        return self.vx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vx.data, self.vy.data)


class FlowDirection(str, enum.Enum):
    # BACKWARD: flow lives on frame k and pulls frame k+1 back onto it.
    # FORWARD: flow lives on frame k+1 and pulls frame k forward onto it.
    BACKWARD = "backward"
    FORWARD = "forward"


PARITIES = ("matrix", "formula")


def flow_direction(k: int, parity: str = "matrix") -> FlowDirection:
    """Direction of the flow for pair (k, k+1), k zero-based."""
    if parity not in PARITIES:
        raise ValueError(f"parity must be one of {PARITIES}, got {parity!r}")
    backward = (k % 2 == 0) == (parity == "matrix")
    return FlowDirection.BACKWARD if backward else FlowDirection.FORWARD


@dataclass(frozen=True)
class FlowSet:
    flows: Tuple[FlowField, ...]
    directions: Tuple[FlowDirection, ...]

    def __post_init__(self):
        flows = tuple(self.flows)
        directions = tuple(FlowDirection(d) for d in self.directions)
        if len(flows) != len(directions):
            raise DimensionError(f"{len(flows)} flows but {len(directions)} directions")
        for k in range(1, len(directions)):
            if directions[k] == directions[k - 1]:
                raise ValueError(f"flow directions must alternate, indices {k - 1} and {k} are both {directions[k].value}")
        if flows:
            shape = flows[0].shape
            for k, flow in enumerate(flows):
                if flow.shape != shape:
                    raise DimensionError(f"flow {k} has shape {flow.shape}, expected {shape}")
        object.__setattr__(self, "flows", flows)
        object.__setattr__(self, "directions", directions)

    @classmethod
    def for_parity(cls, flows: Iterable[FlowField], parity: str = "matrix") -> "FlowSet":
        flows = tuple(flows)
        return cls(flows, tuple(flow_direction(k, parity) for k in range(len(flows))))

    @classmethod
    def zeros(cls, n: int, width: int, height: int, parity: str = "matrix") -> "FlowSet":
        return cls.for_parity([FlowField.zeros(width, height) for _ in range(max(0, n - 1))], parity)

    def __len__(self) -> int:
        return len(self.flows)

    def __getitem__(self, k: int) -> FlowField:
        return self.flows[k]

    def frame_count(self) -> int:
        return len(self.flows) + 1


@dataclass(frozen=True)
class SuperResConfig:
    alpha: float = 0.01
    beta: float = 0.1
    kappa: float = 0.5
    factor: float = 4.0
    sigma: float | None = None  # None: 1.2 * factor / 4
    h: float | str = "auto"
    max_iterations: int = 500
    tolerance: float = 1e-4
    parity: str = "matrix"
    trace_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.factor <= 0:
            raise ValueError(f"factor must be positive, got {self.factor}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.h != "auto" and (isinstance(self.h, str) or not self.h > 0):
            raise ValueError(f"h must be positive or 'auto', got {self.h!r}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be non-negative, got {self.tolerance}")
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be one of {PARITIES}, got {self.parity!r}")
        if self.trace_every < 1 or self.workers < 1:
            raise ValueError("trace_every and workers must be positive")

    def blur_sigma(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return 1.2 * float(self.factor) / 4.0


@dataclass(frozen=True)
class FlowConfig:
    beta: float = 0.1
    huber_epsilon: float = 0.01
    pyramid_scale: float = 0.5
    min_level_size: int = 16
    warps_per_level: int = 3
    inner_iterations: int = 50
    tolerance: float = 1e-4
    median_radius: int = 2
    presmooth_sigma: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError(f"pyramid_scale must lie in (0, 1), got {self.pyramid_scale}")
        if self.min_level_size < 8:
            raise ValueError(f"min_level_size must be at least 8, got {self.min_level_size}")
        if self.warps_per_level < 1 or self.inner_iterations < 1:
            raise ValueError("warps_per_level and inner_iterations must be positive")
        if self.median_radius < 0:
            raise ValueError(f"median_radius must be non-negative, got {self.median_radius}")
        if self.beta < 0 or self.huber_epsilon < 0:
            raise ValueError("beta and huber_epsilon must be non-negative")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be non-negative, got {self.tolerance}")


def clip_image(img: Image, lo: float = 0.0, hi: float = 1.0) -> Image:
    if not lo < hi:
        raise ValueError(f"clip range must satisfy lo < hi, got [{lo}, {hi}]")
    return Image(np.clip(img.data, lo, hi))


def clip_sequence(seq: FrameSequence, lo: float = 0.0, hi: float = 1.0) -> FrameSequence:
    return FrameSequence(tuple(clip_image(f, lo, hi) for f in seq))


# Full-range BT.601, chroma centred at 0.5.
# BT.601 luma weights, shared by the YCbCr transform and grey loading.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
_RGB_TO_YCBCR = np.array([
    LUMA_WEIGHTS,
    [-0.168735891647856, -0.331264108352144, 0.5],
    [0.5, -0.418687589158345, -0.081312410841655],
])
_YCBCR_TO_RGB = np.linalg.inv(_RGB_TO_YCBCR)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


def _check_same_shape(images: Sequence[Image]) -> None:
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DimensionError(f"channels differ in shape: {sorted(shapes)}")


def _convert(a: Image, b: Image, c: Image, matrix: np.ndarray, pre: np.ndarray, post: np.ndarray) -> Tuple[Image, Image, Image]:
    _check_same_shape([a, b, c])
    stacked = np.stack([a.data, b.data, c.data], axis=-1) - pre
    out = stacked @ matrix.T + post
    return Image(out[..., 0]), Image(out[..., 1]), Image(out[..., 2])


def to_ycbcr(r: Image, g: Image, b: Image) -> Tuple[Image, Image, Image]:
    return _convert(r, g, b, _RGB_TO_YCBCR, np.zeros(3), _CHROMA_OFFSET)


def from_ycbcr(y: Image, cb: Image, cr: Image) -> Tuple[Image, Image, Image]:
    return _convert(y, cb, cr, _YCBCR_TO_RGB, _CHROMA_OFFSET, np.zeros(3))


def sequences_to_ycbcr(r: FrameSequence, g: FrameSequence, b: FrameSequence) -> Tuple[FrameSequence, FrameSequence, FrameSequence]:
    channels: List[List[Image]] = [[], [], []]
    for frames in zip(r, g, b):
        for out, img in zip(channels, to_ycbcr(*frames)):
            out.append(img)
    return tuple(FrameSequence(tuple(c)) for c in channels)  # type: ignore[return-value]


def sequences_from_ycbcr(y: FrameSequence, cb: FrameSequence, cr: FrameSequence) -> Tuple[FrameSequence, FrameSequence, FrameSequence]:
    channels: List[List[Image]] = [[], [], []]
    for frames in zip(y, cb, cr):
        for out, img in zip(channels, from_ycbcr(*frames)):
            out.append(img)
    return tuple(FrameSequence(tuple(c)) for c in channels)  # type: ignore[return-value]
