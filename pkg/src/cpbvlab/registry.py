"""Device registry: shipped parameter sets plus optional user additions.

A registry file is JSON mapping device names to ``{"label", "table",
"model"}``. ``table`` holds the summary values as printed for humans;
``model`` holds the unit-bearing inputs the simulator uses. Set
``CPBVLAB_REGISTRY`` to the path of an extra file to add or override
devices.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

from . import qubit
from .config import ConfigError, parse_quantity

ENV_VAR = "CPBVLAB_REGISTRY"


@dataclass(frozen=True)
class CouplingModel:
    """Drive-line coupling versus qubit frequency and the T1 it implies.

    ``c(f) = c_ref (f / f_ref)^exponent (1 + step * (1 + tanh((f - f_r) / w)) / 2)``
    in MHz/uV, and ``T1 = t1_ref (c_ref / c)^2``: a qubit that couples
    more strongly to the drive line also relaxes faster through it.
    """

    reference_coupling: float  # MHz/uV
    reference_frequency: float  # GHz
    reference_t1: float  # s
    exponent: float = 0.5
    step_above_resonator: float = 0.0
    step_width: float = 0.1  # GHz

    def coupling(self, f_q: float, f_r: float) -> float:
        step = 0.5 * (1 + math.tanh((f_q - f_r) / self.step_width))
        return (self.reference_coupling * (f_q / self.reference_frequency) ** self.exponent
                * (1 + self.step_above_resonator * step))

    def t1(self, f_q: float, f_r: float) -> float:
        return self.reference_t1 * (self.reference_coupling / self.coupling(f_q, f_r)) ** 2


@dataclass(frozen=True)
class Device:
    name: str
    label: str
    cpb: qubit.CpbParams
    resonator: qubit.ResonatorParams
    t1: float  # s
    drive_coupling: float  # MHz/uV
    psd_preset: str
    n_g: float = 1.0
    coupling_model: Optional[CouplingModel] = None
    visibility_mask: Optional[tuple] = None  # GHz
    defects: tuple = ()
    table: dict = field(default_factory=dict, compare=False)

    @property
    def f_q(self) -> float:
        return qubit.transition_frequency(self.cpb, self.n_g)

    @property
    def g(self) -> float:
        """Qubit-resonator coupling in MHz."""
        return qubit.coupling_g(self.cpb, self.resonator)

    @property
    def chi(self) -> float:
        """Dispersive shift in MHz at the operating point."""
        return qubit.dispersive_shift(self.g, (self.f_q - self.resonator.f_r) * 1e3)

    def visible(self, f_q: float) -> bool:
        if self.visibility_mask is None:
            return True
        lo, hi = self.visibility_mask
        return not lo <= f_q <= hi

    def at_ej(self, e_j: float) -> "Device":
        """Same device re-biased to ``e_j``, with T1 and coupling from the coupling model."""
        cpb = self.cpb.with_ej(e_j)
        dev = replace(self, cpb=cpb)
        if self.coupling_model is not None:
            f_q = dev.f_q
            dev = replace(dev, t1=self.coupling_model.t1(f_q, self.resonator.f_r),
                          drive_coupling=self.coupling_model.coupling(f_q, self.resonator.f_r))
        return dev

    def defect_model(self) -> Optional[qubit.DefectSpectrumModel]:
        if not self.defects:
            return None
        return qubit.DefectSpectrumModel.from_defects(self.cpb.e_c, self.cpb.e_j, self.defects)

    def summary(self) -> dict:
        return {"name": self.name, "label": self.label, **self.table}


def _device_from_entry(name: str, entry: dict) -> Device:
    try:
        m = entry["model"]
        t = entry.get("table", {})
        cpb = qubit.CpbParams(parse_quantity(m["e_c"], "GHz"), parse_quantity(m["e_j_max"], "GHz"),
                              parse_quantity(m["c_g"], "aF"), parse_quantity(m["c_c"], "aF"))
        cpb = cpb.with_ej(parse_quantity(m["operating_e_j"], "GHz"))
        res = qubit.ResonatorParams(parse_quantity(t["resonator_frequency"], "GHz"),
                                    float(t["q_loaded"]), float(t["q_external"]),
                                    float(t["q_internal"]),
                                    parse_quantity(m["resonator_capacitance"], "fF"),
                                    parse_quantity(m["resonator_inductance"], "nH"))
        cm = m.get("coupling_model")
        coupling_model = None
        if cm:
            coupling_model = CouplingModel(parse_quantity(cm["reference_coupling"], "MHz/uV"),
                                           parse_quantity(cm["reference_frequency"], "GHz"),
                                           parse_quantity(cm["reference_t1"], "s"),
                                           float(cm.get("exponent", 0.5)),
                                           float(cm.get("step_above_resonator", 0.0)),
                                           parse_quantity(cm.get("step_width", "0.1 GHz"), "GHz"))
        mask = m.get("visibility_mask")
        if mask is not None:
            mask = tuple(parse_quantity(v, "GHz") for v in mask)
        defects = tuple({"d_ej": parse_quantity(d["d_ej"], "GHz"), "d_ng": float(d["d_ng"]),
                         "weights": tuple(d.get("weights", (1.0, 1.0)))}
                        for d in m.get("defects", []))
        return Device(name, entry.get("label", name), cpb, res, parse_quantity(m["t1"], "s"),
                      parse_quantity(m["drive_coupling"], "MHz/uV"), m["psd_preset"],
                      float(m.get("operating_n_g", 1.0)), coupling_model, mask, defects, dict(t))
    except KeyError as exc:
        raise ConfigError(f"device {name!r} is missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"device {name!r}: {exc}") from None


def _builtin_entries() -> dict:
    text = resources.files("cpbvlab").joinpath("data/devices.json").read_text()
    return json.loads(text)


def load_registry(path: Optional[str] = None) -> dict:
    """Built-in devices, updated with entries from ``path`` or ``$CPBVLAB_REGISTRY``."""
    entries = _builtin_entries()
    path = path or os.environ.get(ENV_VAR)
    if path:
        try:
            text = open(path).read()
        except OSError as exc:
            raise ConfigError(f"cannot read registry {path}: {exc}") from None
        if text.strip():
            try:
                extra = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"registry {path} is not valid JSON: {exc}") from None
            if not isinstance(extra, dict):
                raise ConfigError(f"registry {path} must map names to devices")
            entries.update(extra)
    return {name: _device_from_entry(name, e) for name, e in entries.items()}


def get_device(name: str, path: Optional[str] = None) -> Device:
    reg = load_registry(path)
    try:
        return reg[name]
    except KeyError:
        raise ConfigError(f"unknown device {name!r}; known: {sorted(reg)}") from None


def registry_list(path: Optional[str] = None) -> list:
    return [dev.summary() for dev in load_registry(path).values()]
