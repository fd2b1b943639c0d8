"""Static Cooper-pair box and resonator physics.

Energies are stored as frequencies (E/h in GHz) throughout, capacitances in
aF (qubit) or fF (resonator). Functions are pure and accept the frozen
parameter records defined here.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.constants import e as E_CHARGE, h as PLANCK, hbar as HBAR

# two-level charge-regime model degrades below this Josephson energy
EJ_FLOOR_GHZ = 0.1


@dataclass(frozen=True)
class CpbParams:
    """Cooper-pair box parameters.

    Parameters
    ----------
    e_c : float
        Charging energy E_c/h in GHz.
    e_j_max : float
        Zero-flux Josephson energy E_J,max/h in GHz.
    c_g : float
        Gate capacitance in aF.
    c_c : float
        Qubit-resonator coupling capacitance in aF.
    flux : float
        Loop flux bias in units of the flux quantum.
    """

    e_c: float
    e_j_max: float
    c_g: float
    c_c: float = 0.0
    flux: float = 0.0

    def __post_init__(self):
        if not self.e_c > 0:
            raise ValueError(f"e_c must be positive, got {self.e_c}")
        if not self.e_j_max > 0:
            raise ValueError(f"e_j_max must be positive, got {self.e_j_max}")
        if not self.c_g > 0:
            raise ValueError(f"c_g must be positive, got {self.c_g}")
        if self.c_c < 0:
            raise ValueError(f"c_c must be non-negative, got {self.c_c}")
        if self.c_sigma_af < self.c_g:
            raise ValueError("total island capacitance is smaller than c_g")

    @property
    def c_sigma_af(self) -> float:
        """Total island capacitance e^2 / (2 h E_c) in aF."""
        return E_CHARGE**2 / (2 * PLANCK * self.e_c * 1e9) * 1e18

    @property
    def e_j(self) -> float:
        return ej_from_flux(self)

    def with_flux(self, flux: float) -> "CpbParams":
        return CpbParams(self.e_c, self.e_j_max, self.c_g, self.c_c, flux)

    def with_ej(self, e_j: float) -> "CpbParams":
        """Same device biased to the flux that yields ``e_j``."""
        return self.with_flux(flux_for_ej(self.e_j_max, e_j))


@dataclass(frozen=True)
class ResonatorParams:
    """Lumped-element readout resonator.

    ``f_r`` in GHz, ``capacitance`` in fF, ``inductance`` in nH.
    """

    f_r: float
    q_loaded: float
    q_external: float
    q_internal: float
    capacitance: float = 400.0
    inductance: float = 2.0

    def __post_init__(self):
        if not self.f_r > 0:
            raise ValueError(f"f_r must be positive, got {self.f_r}")
        for name in ("q_loaded", "q_external", "q_internal"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        implied = 1.0 / (1.0 / self.q_external + 1.0 / self.q_internal)
        if abs(implied - self.q_loaded) / self.q_loaded > 0.05:
            raise ValueError(
                f"inconsistent Q factors: 1/(1/Qe + 1/Qi) = {implied:.0f} "
                f"vs Q_L = {self.q_loaded:.0f}"
            )


@dataclass(frozen=True)
class DefectBranch:
    e_j: float
    charge_offset: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"visibility weight must lie in [0, 1], got {self.weight}")
        if not self.e_j > 0:
            raise ValueError("branch e_j must be positive")


@dataclass(frozen=True)
class DefectSpectrumModel:
    """Phenomenological multi-parabola spectrum of a defect-dressed CPB.

    Each branch is an independent two-level parabola sharing ``e_c`` but with
    its own Josephson energy and gate-charge offset.
    """

    e_c: float
    branches: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(
            b if isinstance(b, DefectBranch) else DefectBranch(*b) for b in self.branches))
        if not 1 <= len(self.branches) <= 8:
            raise ValueError("a defect model needs between 1 and 8 branches")
        if not self.e_c > 0:
            raise ValueError("e_c must be positive")

    @classmethod
    def from_defects(cls, e_c: float, e_j: float, defects: Sequence[dict]) -> "DefectSpectrumModel":
        """Compose two-state defects into ``2**len(defects)`` branches.

        Each defect dict holds ``d_ej`` (GHz), ``d_ng`` and ``weights`` (one
        visibility per defect state). A defect in state s = +/-1 shifts the
        branch Josephson energy by ``s * d_ej`` and the charge offset by
        ``s * d_ng``; the branch weight is the product of state weights.
        """
        branches = [(e_j, 0.0, 1.0)]
        for d in defects:
            w_lo, w_hi = d.get("weights", (1.0, 1.0))
            nxt = []
            for ej, off, w in branches:
                nxt.append((ej - d["d_ej"], off - d["d_ng"], w * w_lo))
                nxt.append((ej + d["d_ej"], off + d["d_ng"], w * w_hi))
            branches = nxt
        return cls(e_c, tuple(DefectBranch(*b) for b in branches))


def flux_for_ej(e_j_max: float, e_j: float) -> float:
    """Flux bias (in flux quanta, first lobe) that tunes E_J,max down to ``e_j``."""
    if not 0 <= e_j <= e_j_max:
        raise ValueError(f"e_j={e_j} outside [0, {e_j_max}]")
    return math.acos(e_j / e_j_max) / math.pi


def ej_from_flux(cpb: CpbParams) -> float:
    """Effective Josephson energy of a symmetric SQUID loop, GHz."""
    e_j = cpb.e_j_max * abs(math.cos(math.pi * cpb.flux))
    if e_j < EJ_FLOOR_GHZ:
        warnings.warn(
            f"E_J = {e_j:.3g} GHz is below {EJ_FLOOR_GHZ} GHz; the two-level "
            "charge-regime model is unreliable here",
            RuntimeWarning, stacklevel=2)
    return e_j


def parabola(n_g, e_c, e_j):
    """Ground-to-excited transition frequency sqrt([4 E_c (1-n_g)]^2 + E_J^2)."""
    n_g = np.asarray(n_g, dtype=float)
    return np.hypot(4.0 * e_c * (1.0 - n_g), e_j)


def transition_frequency(cpb: CpbParams, n_g):
    """Qubit transition frequency in GHz at reduced gate charge ``n_g``."""
    e_j = ej_from_flux(cpb)
    if not e_j > 0:
        raise ValueError("effective E_J must be positive")
    out = parabola(n_g, cpb.e_c, e_j)
    return float(out) if out.ndim == 0 else out


def cpb_diagonalize(cpb: CpbParams, n_g: float, n_charge_states: int = 11) -> np.ndarray:
    """Eigenfrequencies (GHz) of the truncated charge-basis CPB Hamiltonian.

    The basis counts Cooper pairs on the island, centred on the sweet-spot
    pair {0, 1}. Diagonal entries are 4 E_c (n - n_g/2)^2 and nearest
    neighbours couple through -E_J/2.
    """
    if n_charge_states < 5 or n_charge_states % 2 == 0:
        raise ValueError("n_charge_states must be an odd integer >= 5")
    e_j = cpb.e_j_max * abs(math.cos(math.pi * cpb.flux))
    half = n_charge_states // 2
    n = np.arange(-half + 1, half + 2, dtype=float)
    ham = np.diag(4.0 * cpb.e_c * (n - n_g / 2.0) ** 2)
    off = np.full(n_charge_states - 1, -e_j / 2.0)
    ham += np.diag(off, 1) + np.diag(off, -1)
    return np.linalg.eigvalsh(ham)


def exact_splitting(cpb: CpbParams, n_g: float, n_charge_states: int = 11) -> float:
    levels = cpb_diagonalize(cpb, n_g, n_charge_states)
    return float(levels[1] - levels[0])


def coupling_g(cpb: CpbParams, res: ResonatorParams) -> float:
    """Qubit-resonator coupling g/2pi in MHz.

    hbar g = (2 E_c C_c / e) sqrt(hbar w_r / 2C).
    """
    if not res.capacitance > 0:
        raise ValueError("resonator capacitance must be positive")
    e_c_joule = PLANCK * cpb.e_c * 1e9
    c_c = cpb.c_c * 1e-18
    hbar_wr = HBAR * 2 * math.pi * res.f_r * 1e9
    hbar_g = (2 * e_c_joule * c_c / E_CHARGE) * math.sqrt(hbar_wr / (2 * res.capacitance * 1e-15))
    return hbar_g / PLANCK / 1e6


def coupling_capacitance_for_g(cpb: CpbParams, res: ResonatorParams, g_mhz: float) -> float:
    """Back-solve C_c (aF) that produces the coupling ``g_mhz``."""
    unit = coupling_g(CpbParams(cpb.e_c, cpb.e_j_max, cpb.c_g, 1.0, cpb.flux), res)
    return g_mhz / unit


def dispersive_shift(g, detuning):
    """Dispersive pull chi = g^2 / Delta (same units as inputs, MHz).

    Warns when |Delta| < 10 g, outside the dispersive regime.
    """
    g = float(g)
    detuning = float(detuning)
    if detuning == 0:
        raise ZeroDivisionError("dispersive shift diverges at zero detuning")
    if abs(detuning) < 10 * abs(g):
        warnings.warn(f"|detuning| = {abs(detuning):.3g} < 10 g; dispersive "
                      "approximation is poor", RuntimeWarning, stacklevel=2)
    return g * g / detuning


def charge_matrix_element(cpb: CpbParams) -> float:
    """Sweet-spot transition matrix element 2 C_g E_c / e, in units of e."""
    return 2 * cpb.c_g * 1e-18 * PLANCK * cpb.e_c * 1e9 / E_CHARGE**2


def sensitivity_first(cpb: CpbParams, n_g):
    """d f_q / d n_g in GHz per unit gate charge."""
    f_q = transition_frequency(cpb, n_g)
    return (4 * cpb.e_c) ** 2 * (np.asarray(n_g, dtype=float) - 1.0) / f_q


def sensitivity_second(cpb: CpbParams) -> float:
    """d^2 f_q / d n_g^2 at the sweet spot, GHz per unit n_g^2."""
    return (4 * cpb.e_c) ** 2 / transition_frequency(cpb, 1.0)


def defect_spectrum(model: DefectSpectrumModel, n_g) -> list:
    """(frequency, weight) per branch at gate charge ``n_g``."""
    return [(parabola(np.asarray(n_g, dtype=float) + b.charge_offset, model.e_c, b.e_j)
             if np.ndim(n_g) else float(parabola(n_g + b.charge_offset, model.e_c, b.e_j)),
             b.weight) for b in model.branches]


def branch_minima(model: DefectSpectrumModel) -> list:
    """(n_g, frequency) at the bottom of each branch parabola."""
    return [(1.0 - b.charge_offset, b.e_j) for b in model.branches]
