"""Experiment configuration files and unit-bearing quantities.

Every physical quantity in a config is a string with an explicit unit,
e.g. ``"10.6 MHz"`` or ``"2 us"``; bare numbers are rejected. Counts,
seeds and dimensionless ratios are plain numbers.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

# unit -> (scale to SI, dimension exponents over (s, F, H, V))
_UNITS = {
    "s": (1.0, (1, 0, 0, 0)),
    "ms": (1e-3, (1, 0, 0, 0)),
    "us": (1e-6, (1, 0, 0, 0)),
    "µs": (1e-6, (1, 0, 0, 0)),
    "μs": (1e-6, (1, 0, 0, 0)),
    "ns": (1e-9, (1, 0, 0, 0)),
    "Hz": (1.0, (-1, 0, 0, 0)),
    "kHz": (1e3, (-1, 0, 0, 0)),
    "MHz": (1e6, (-1, 0, 0, 0)),
    "GHz": (1e9, (-1, 0, 0, 0)),
    "F": (1.0, (0, 1, 0, 0)),
    "pF": (1e-12, (0, 1, 0, 0)),
    "fF": (1e-15, (0, 1, 0, 0)),
    "aF": (1e-18, (0, 1, 0, 0)),
    "H": (1.0, (0, 0, 1, 0)),
    "nH": (1e-9, (0, 0, 1, 0)),
    "V": (1.0, (0, 0, 0, 1)),
    "mV": (1e-3, (0, 0, 0, 1)),
    "uV": (1e-6, (0, 0, 0, 1)),
    "µV": (1e-6, (0, 0, 0, 1)),
    "μV": (1e-6, (0, 0, 0, 1)),
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s\d].*?)\s*$")

KINDS = ("spectroscopy", "t1", "rabi", "ramsey", "echo", "sweep")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _unit(text: str):
    if "/" in text:
        num, den = text.split("/", 1)
        (a, da), (b, db) = _unit(num.strip()), _unit(den.strip())
        return a / b, tuple(x - y for x, y in zip(da, db))
    try:
        return _UNITS[text]
    except KeyError:
        raise ConfigError(f"unknown unit {text!r}") from None


def parse_quantity(value, unit: str) -> float:
    """Convert ``"<number> <unit>"`` into a float expressed in ``unit``.

    >>> parse_quantity("2 us", "ns")
    2000.0
    """
    if isinstance(value, bool) or not isinstance(value, str):
        raise ConfigError(f"quantity {value!r} needs an explicit unit (expected {unit})")
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}")
    number, given = float(m.group(1)), m.group(2)
    scale_given, dim_given = _unit(given)
    scale_target, dim_target = _unit(unit)
    if dim_given != dim_target:
        raise ConfigError(f"{value!r} is not convertible to {unit}")
    return number * scale_given / scale_target


def format_quantity(value: float, unit: str) -> str:
    return f"{value:.12g} {unit}"


def parse_grid(spec, unit: str):
    """A list of quantities or a ``{start, stop, num}`` mapping, as floats in ``unit``."""
    import numpy as np
    if isinstance(spec, dict):
        try:
            start = parse_quantity(spec["start"], unit)
            stop = parse_quantity(spec["stop"], unit)
            num = int(spec["num"])
        except KeyError as exc:
            raise ConfigError(f"grid is missing {exc.args[0]!r}") from None
        if num < 1:
            raise ConfigError("grid num must be at least 1")
        return np.linspace(start, stop, num)
    if isinstance(spec, (list, tuple)):
        return np.array([parse_quantity(v, unit) for v in spec])
    raise ConfigError(f"cannot interpret grid {spec!r}")


@dataclass
class ExperimentConfig:
    """One experiment: kind, device, explicit seed, parameters and output directory."""

    kind: str
    device: str
    seed: int
    params: dict = field(default_factory=dict)
    output: str = "results"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be an explicit non-negative integer")

    def canonical(self) -> dict:
        """Content that determines the result (the output path does not)."""
        return {"kind": self.kind, "device": self.device, "seed": self.seed,
                "params": self.params}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        missing = [k for k in ("experiment", "device", "seed") if k not in data]
        if missing:
            raise ConfigError(f"config is missing {', '.join(missing)}")
        return cls(data["experiment"], data["device"], data["seed"], dict(data.get("params") or {}),
                   data.get("output", "results"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} is not a mapping")
        return cls.from_mapping(data)

    def dump(self) -> str:
        return yaml.safe_dump({"experiment": self.kind, "device": self.device, "seed": self.seed,
                               "params": self.params, "output": self.output}, sort_keys=True)
