"""Key=value configuration store for pipeline runs.

Persistence format (plain text):
  # comment
  alpha = 0.01
  kappa = 0.5
  h = auto
  save_flows = true

Unknown keys are kept (so a file round-trips) but ignored when building the
solver configs. Values that do not parse are dropped with a warning; the
built-in defaults then apply.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Mapping

from .core import PARITIES, FlowConfig, SuperResConfig

logger = logging.getLogger(__name__)

Values = Dict[str, object]


def _coerce_bool(raw) -> bool:
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _coerce_h(raw):
    text = str(raw).strip().lower()
    if text == "auto":
        return "auto"
    value = float(text)
    if value <= 0:
        raise ValueError(f"h must be positive, got {value}")
    return value


def _coerce_parity(raw) -> str:
    text = str(raw).strip().lower()
    if text not in PARITIES:
        raise ValueError(f"parity must be one of {PARITIES}")
    return text


def _coerce_positive_int(raw) -> int:
    value = int(str(raw).strip())
    if value < 1:
        raise ValueError(f"expected a positive integer, got {value}")
    return value


COERCERS: Dict[str, Callable[[object], object]] = {
    "alpha": float,
    "beta": float,
    "kappa": float,
    "h": _coerce_h,
    "iterations": _coerce_positive_int,
    "tolerance": float,
    "flow_tolerance": float,
    "sigma": float,
    "factor": float,
    "parity": _coerce_parity,
    "flow_warps": _coerce_positive_int,
    "flow_iterations": _coerce_positive_int,
    "flow_levels_min": _coerce_positive_int,
    "flow_scale": float,
    "median_radius": int,
    "huber_epsilon": float,
    "workers": _coerce_positive_int,
    "grayscale": _coerce_bool,
    "save_flows": _coerce_bool,
    "save_split": _coerce_bool,
    "save_energy": _coerce_bool,
    "png16": _coerce_bool,
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_lines(lines) -> Values:
    values: Values = {}
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            logger.warning("config line %d ignored (no '='): %r", number, line.rstrip())
            continue
        key, raw = (part.strip() for part in text.split("=", 1))
        key = key.lower()
        coerce = COERCERS.get(key)
        if coerce is None:
            values[key] = raw
            continue
        try:
            values[key] = coerce(raw)
        except (TypeError, ValueError) as exc:
            logger.warning("config line %d ignored (%s): %r", number, exc, line.rstrip())
    return values


class ConfigStore:
    def __init__(self, path: str = "videosr.cfg"):
        self.path = path
        self._values: Values = {}

    def load(self) -> None:
        if not os.path.exists(self.path):
            self._values = {}
            return
        with open(self.path, "r", encoding="utf-8") as f:
            self._values = parse_lines(f)

    def save(self) -> None:
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            for key in sorted(self._values):
                f.write(f"{key} = {_format(self._values[key])}\n")

    def get_values(self) -> Values:
        return dict(self._values)

    def set(self, key: str, value) -> None:
        key = key.lower()
        coerce = COERCERS.get(key)
        self._values[key] = coerce(value) if coerce is not None else value

    def update(self, overrides: Mapping[str, object]) -> None:
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)


@dataclass
class RunManifest:
    input_pattern: str
    output_dir: str
    factor: float = 4.0
    overrides: Values = field(default_factory=dict)
    truth_pattern: str | None = None
    grayscale: bool = False
    save_flows: bool = False
    save_split: bool = False
    save_energy: bool = False
    png16: bool = False

    def superres_config(self) -> SuperResConfig:
        v = self.overrides
        cfg = SuperResConfig(factor=self.factor)
        mapping = {
            "alpha": "alpha", "beta": "beta", "kappa": "kappa", "h": "h", "sigma": "sigma",
            "iterations": "max_iterations", "tolerance": "tolerance", "parity": "parity", "workers": "workers",
        }
        changes = {attr: v[key] for key, attr in mapping.items() if key in v}
        return replace(cfg, **changes)

    def flow_config(self) -> FlowConfig:
        v = self.overrides
        mapping = {
            "beta": "beta", "huber_epsilon": "huber_epsilon", "flow_scale": "pyramid_scale",
            "flow_levels_min": "min_level_size", "flow_warps": "warps_per_level",
            "flow_iterations": "inner_iterations", "median_radius": "median_radius", "flow_tolerance": "tolerance",
        }
        changes = {attr: v[key] for key, attr in mapping.items() if key in v}
        return replace(FlowConfig(), **changes)


def build_manifest(input_pattern: str, output_dir: str, file_values: Mapping[str, object],
                   flag_values: Mapping[str, object], truth_pattern: str | None = None) -> RunManifest:
    """Defaults < config file < command-line flags."""
    store = ConfigStore(path="")
    store.update(file_values)
    store.update(flag_values)
    merged = store.get_values()
    return RunManifest(
        input_pattern=input_pattern,
        output_dir=output_dir,
        factor=float(merged.get("factor", 4.0)),
        overrides=merged,
        truth_pattern=truth_pattern,
        grayscale=bool(merged.get("grayscale", False)),
        save_flows=bool(merged.get("save_flows", False)),
        save_split=bool(merged.get("save_split", False)),
        save_energy=bool(merged.get("save_energy", False)),
        png16=bool(merged.get("png16", False)),
    )
