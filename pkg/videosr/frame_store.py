"""File formats: PNG frames, Middlebury .flo flows, CSV reports, manifests.

PNG intensities map to [0, 1] as x / 255 (8 bit) or x / 65535 (16 bit) on
load, and round(max * clip(x)) on save. Colour frames are handled in RGB
order; cv2's BGR is confined to this module.
"""

from __future__ import annotations

import csv
import glob
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import cv2
import numpy as np

from .core import LUMA_WEIGHTS, FlowField, FrameSequence, Image

FRAME_NAME = "frame_{:04d}.png"
FLO_MAGIC = b"PIEH"  # 202021.25 as little-endian float32
MANIFEST_NAME = "manifest.txt"
RUN_CONFIG_NAME = "run.cfg"
METRICS_HEADER = ("sequence", "method", "frame", "psnr", "ssim")


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path or ".", exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create directory {path}: {exc.strerror or exc}") from exc


# --- PNG -------------------------------------------------------------------

def read_png(path: str) -> np.ndarray:
    """(h, w) or (h, w, 3) float64 array in [0, 1], RGB channel order."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"cannot read image {path}")
    if raw.dtype == np.uint16:
        data = raw.astype(np.float64) / 65535.0
    elif raw.dtype == np.uint8:
        data = raw.astype(np.float64) / 255.0
    else:
        raise OSError(f"unsupported pixel type {raw.dtype} in {path}")
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = data[..., :3]
        data = data[..., ::-1].copy()
    return data


def write_png(path: str, data: np.ndarray, png16: bool = False) -> None:
    arr = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    if png16:
        out = np.round(arr * 65535.0).astype(np.uint16)
    else:
        out = np.round(arr * 255.0).astype(np.uint8)
    if out.ndim == 3:
        out = np.ascontiguousarray(out[..., ::-1])
    _ensure_dir(os.path.dirname(path))
    try:
        ok = cv2.imwrite(path, out)
    except cv2.error as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc
    if not ok:
        raise OSError(f"cannot write image {path}")


def frame_paths(pattern: str) -> List[str]:
    """A directory (all *.png inside) or a glob, in lexicographic order."""
    if os.path.isdir(pattern):
        pattern = os.path.join(pattern, "*.png")
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise OSError(f"no frames match {pattern}")
    return paths


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., :3] @ LUMA_WEIGHTS


def load_channels(pattern: str, grayscale: bool = False) -> Tuple[FrameSequence, ...]:
    """One sequence for grey input (or when grayscale is forced), else R, G, B."""
    arrays = [read_png(p) for p in frame_paths(pattern)]
    colour = any(a.ndim == 3 for a in arrays)
    if grayscale or not colour:
        return (FrameSequence(tuple(Image(luminance(a) if a.ndim == 3 else a) for a in arrays)),)
    rgb = [a if a.ndim == 3 else np.repeat(a[..., np.newaxis], 3, axis=2) for a in arrays]
    return tuple(FrameSequence(tuple(Image(a[..., c]) for a in rgb)) for c in range(3))


def save_frames(out_dir: str, channels: Sequence[FrameSequence], png16: bool = False,
                name: str = FRAME_NAME) -> List[str]:
    """Write one PNG per frame; three channel sequences are stored as RGB."""
    if len(channels) not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {len(channels)}")
    _ensure_dir(out_dir)
    paths = []
    for k in range(len(channels[0])):
        if len(channels) == 1:
            data = channels[0][k].data
        else:
            data = np.stack([c[k].data for c in channels], axis=-1)
        path = os.path.join(out_dir, name.format(k))
        write_png(path, data, png16)
        paths.append(path)
    return paths


# --- Middlebury .flo -------------------------------------------------------

def write_flo(path: str, flow: FlowField) -> None:
    height, width = flow.shape
    interleaved = np.stack([flow.vx.data, flow.vy.data], axis=-1).astype("<f4")
    _ensure_dir(os.path.dirname(path))
    try:
        with open(path, "wb") as f:
            f.write(FLO_MAGIC)
            f.write(np.array([width, height], dtype="<i4").tobytes())
            f.write(interleaved.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write flow {path}: {exc.strerror or exc}") from exc


def read_flo(path: str) -> FlowField:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise OSError(f"cannot read flow {path}: {exc.strerror or exc}") from exc
    if raw[:4] != FLO_MAGIC:
        raise ValueError(f"{path} is not a .flo file (bad magic {raw[:4]!r})")
    if len(raw) < 12:
        raise ValueError(f"{path} is truncated")
    width, height = (int(v) for v in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise ValueError(f"{path} declares an empty {width}x{height} flow")
    expected = 12 + 8 * width * height
    if len(raw) != expected:
        raise ValueError(f"{path} holds {len(raw)} bytes, {width}x{height} needs {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width, 2).astype(np.float64)
    return FlowField.from_arrays(data[..., 0], data[..., 1])


# --- CSV reports -----------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    sequence: str
    method: str
    frame: int
    psnr: float
    ssim: float


def _format_metric(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def write_metrics_csv(path: str, rows: Iterable[MetricsRow]) -> None:
    _ensure_dir(os.path.dirname(path))
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_HEADER)
            for row in rows:
                writer.writerow([row.sequence, row.method, row.frame, _format_metric(row.psnr), _format_metric(row.ssim)])
    except OSError as exc:
        raise OSError(f"cannot write metrics {path}: {exc.strerror or exc}") from exc


def read_metrics_csv(path: str) -> List[MetricsRow]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            return [
                MetricsRow(r["sequence"], r["method"], int(r["frame"]), float(r["psnr"]), float(r["ssim"]))
                for r in reader
            ]
    except OSError as exc:
        raise OSError(f"cannot read metrics {path}: {exc.strerror or exc}") from exc


def write_energy_csv(path: str, iterations: Sequence[int], energies: Sequence[float]) -> None:
    if len(iterations) != len(energies):
        raise ValueError(f"{len(iterations)} iterations but {len(energies)} energies")
    _ensure_dir(os.path.dirname(path))
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("iter", "energy"))
            for it, energy in zip(iterations, energies):
                writer.writerow([int(it), repr(float(energy))])
    except OSError as exc:
        raise OSError(f"cannot write energy trace {path}: {exc.strerror or exc}") from exc


# --- manifests -------------------------------------------------------------

def write_manifest(path: str, values: Mapping[str, object]) -> None:
    _ensure_dir(os.path.dirname(path))
    try:
        with open(path, "w", encoding="utf-8") as f:
            for key, value in values.items():
                f.write(f"{key} = {value}\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc.strerror or exc}") from exc


def read_manifest(path: str) -> Dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    values = {}
    for line in lines:
        text = line.split("#", 1)[0].strip()
        if "=" in text:
            key, value = text.split("=", 1)
            values[key.strip()] = value.strip()
    return values
