"""Dispersive resonator transmission and the heterodyne signal chain.

The qubit pulls the resonator by ``chi * <sigma_z>`` with sigma_z = +1 in
the excited state. Transmission past a side-coupled resonator is a notch,
and a partially excited qubit transmits the P_e-weighted mixture of the two
pure-state responses.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qubit import ResonatorParams


def linewidth(res: ResonatorParams) -> float:
    """Resonator linewidth kappa/2pi = f_r / Q_L in MHz."""
    return res.f_r * 1e3 / res.q_loaded


def _notch(res, f_res, f):
    return 1.0 - (res.q_loaded / res.q_external) / (1.0 + 2j * res.q_loaded * (f - f_res) / f_res)


def s21(res: ResonatorParams, chi: float, p_excited, f):
    """Complex transmission at probe frequency ``f`` (GHz).

    Parameters
    ----------
    chi : float
        Dispersive shift in MHz.
    p_excited : float or array
        Excited-state population; 0 and 1 give the pure-state responses.
    """
    p = np.asarray(p_excited, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p_excited must lie in [0, 1]")
    f = np.asarray(f, dtype=float)
    ground = _notch(res, res.f_r - chi * 1e-3, f)
    excited = _notch(res, res.f_r + chi * 1e-3, f)
    return (1.0 - p) * ground + p * excited


def state_points(res: ResonatorParams, chi: float, f: float):
    """Transmission for the ground and excited states at ``f``."""
    return complex(s21(res, chi, 0.0, f)), complex(s21(res, chi, 1.0, f))


@dataclass(frozen=True)
class ReadoutConfig:
    """Heterodyne digitizer settings.

    ``probe_freq`` in GHz, ``if_freq`` in MHz, ``sample_rate`` in MSa/s,
    ``bin`` in ns. ``noise_sigma`` is the per-sample standard deviation of
    each quadrature of the additive white noise (same units as |S21|).
    """

    probe_freq: float
    if_freq: float = 2.0
    sample_rate: float = 20.0
    bin: float = 500.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.if_freq > 0 and self.sample_rate > 0 and self.bin > 0):
            raise ValueError("if_freq, sample_rate and bin must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not _is_integer(self.samples_per_bin_exact):
            raise ValueError(f"bin {self.bin} ns holds a non-integer number of samples")
        if not _is_integer(self.if_freq * self.bin * 1e-3):
            raise ValueError(f"bin {self.bin} ns holds a non-integer number of IF cycles")
        if self.if_freq * 2 >= self.sample_rate:
            raise ValueError("IF above the Nyquist frequency of the digitizer")

    @property
    def samples_per_bin_exact(self) -> float:
        return self.bin * 1e-3 * self.sample_rate

    @property
    def samples_per_bin(self) -> int:
        return int(round(self.samples_per_bin_exact))

    @property
    def sample_dt(self) -> float:
        """Sample spacing in s."""
        return 1e-6 / self.sample_rate


def _is_integer(x, tol=1e-9):
    return abs(x - round(x)) < tol and round(x) >= 1


@dataclass(frozen=True)
class IqTrace:
    """Digitized complex baseband records of the signal and reference arms."""

    signal: np.ndarray
    reference: np.ndarray
    sample_rate: float  # MSa/s
    t0: float = 0.0  # s

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=complex)
        ref = np.asarray(self.reference, dtype=complex)
        if sig.shape != ref.shape or sig.ndim != 1:
            raise ValueError("signal and reference must be 1-D and of equal length")
        if not (np.all(np.isfinite(sig)) and np.all(np.isfinite(ref))):
            raise ValueError("trace contains non-finite samples")
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "reference", ref)

    def __len__(self):
        return len(self.signal)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / (self.sample_rate * 1e6)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "i_sig", "q_sig", "i_ref", "q_ref"])
            for row in zip(self.t, self.signal.real, self.signal.imag,
                           self.reference.real, self.reference.imag):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "IqTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        rate = 1e-6 / (t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(data[:, 1] + 1j * data[:, 2], data[:, 3] + 1j * data[:, 4], rate, float(t[0]))

    def save_npz(self, path):
        np.savez(path, signal=self.signal, reference=self.reference,
                 sample_rate=self.sample_rate, t0=self.t0)

    @classmethod
    def load_npz(cls, path) -> "IqTrace":
        with np.load(path) as z:
            return cls(z["signal"], z["reference"], float(z["sample_rate"]), float(z["t0"]))


def synth_heterodyne(pe_timeline, res: ResonatorParams, chi: float, cfg: ReadoutConfig,
                     duration: float | None = None, common_phase: float = 0.0,
                     signal_phase: float = 0.0) -> IqTrace:
    """Digitized IF records for a qubit population history.

    Parameters
    ----------
    pe_timeline : callable or array
        P_e as a function of time in s, or already sampled at the digitizer
        rate starting at t = 0.
    duration : float, optional
        Record length in s; required when ``pe_timeline`` is callable.
    common_phase : float
        Phase (rad) added to both arms, e.g. source drift.
    signal_phase : float
        Extra phase (rad) on the signal arm only.
    """
    if callable(pe_timeline):
        if duration is None:
            raise ValueError("duration is required for a callable P_e timeline")
        n = int(round(duration / cfg.sample_dt))
        t = np.arange(n) * cfg.sample_dt
        pe = np.asarray(pe_timeline(t), dtype=float) * np.ones(n)
    else:
        pe = np.asarray(pe_timeline, dtype=float)
        t = np.arange(len(pe)) * cfg.sample_dt
    carrier = np.exp(1j * (2 * math.pi * cfg.if_freq * 1e6 * t + common_phase))
    signal = s21(res, chi, np.clip(pe, 0.0, 1.0), cfg.probe_freq) * carrier * np.exp(1j * signal_phase)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed)
        signal = signal + cfg.noise_sigma * (rng.standard_normal(len(t))
                                             + 1j * rng.standard_normal(len(t)))
    return IqTrace(signal, carrier, cfg.sample_rate)


@dataclass(frozen=True)
class Demodulated:
    """Per-bin demodulated transmission; ``t`` is the bin centre in s."""

    t: np.ndarray
    iq: np.ndarray

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.iq)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.iq)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_bin", "amplitude", "phase"])
            for row in zip(self.t, self.amplitude, self.phase):
                w.writerow([repr(float(v)) for v in row])


def demodulate(trace: IqTrace, cfg: ReadoutConfig) -> Demodulated:
    """Average signal x conj(reference phasor) over each time bin.

    The reference is normalized to a unit phasor, so any phase common to
    both arms cancels. A trailing partial bin is dropped with a warning.
    """
    m = cfg.samples_per_bin
    n_bins, rest = divmod(len(trace), m)
    if rest:
        warnings.warn(f"discarding {rest} samples of a trailing partial bin", RuntimeWarning,
                      stacklevel=2)
    if n_bins == 0:
        raise ValueError("trace is shorter than one bin")
    ref = trace.reference[:n_bins * m]
    mixed = trace.signal[:n_bins * m] * np.conj(ref / np.abs(ref))
    iq = mixed.reshape(n_bins, m).mean(axis=1)
    t = trace.t0 + (np.arange(n_bins) + 0.5) * m / (trace.sample_rate * 1e6)
    return Demodulated(t, iq)


def load_demodulated_csv(path) -> Demodulated:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Demodulated(data[:, 0], data[:, 1] * np.exp(1j * data[:, 2]))
