"""Rotating-frame Bloch dynamics of the charge qubit under shaped pulses.

State convention: z = +1 is the ground state, so P_e = (1 - z) / 2. Times
are in ns, Rabi amplitudes and detunings in MHz (cycles per microsecond),
so an angular rate is ``2 pi 1e-3 * value`` rad/ns.

Pulse edges are error-function ramps. A segment of length D with edge e
rises as ``(1 + erf((t - e) / (sqrt(2) sigma))) / 2`` and falls
symmetrically, with ``sigma = e / 2.563`` so that the 10-90 % rise time
equals ``e``. The envelope area is D - 2e, so a rotation by theta at Rabi
amplitude Omega takes ``theta / (2 pi Omega) + 2 e``.

Charge noise enters as a detuning ``sens1 dn + sens2 dn^2 / 2`` (GHz),
with dn linearly interpolated between trace samples so the integrand stays
continuous and fixed-step RK4 keeps its order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from . import noise as _noise

# 10-90 % rise of an erf ramp spans 2 * 1.2816 sigma
EDGE_TO_SIGMA = 2.563
DEFAULT_DT = 0.25
DEFAULT_NOISE_DT = 4.0
TWO_PI_MHZ = 2e-3 * math.pi  # MHz -> rad/ns


@dataclass(frozen=True)
class PulseSegment:
    """One piece of a pulse sequence; a delay is a zero-amplitude segment.

    Parameters
    ----------
    duration : float
        Length in ns.
    rabi_amplitude : float
        Rabi frequency at full envelope, MHz.
    phase : float
        Drive phase in rad; 0 rotates about x, pi/2 about y.
    detuning : float
        Pump minus qubit frequency, MHz.
    edge : float
        10-90 % rise/fall time of the erf ramps, ns.
    """

    duration: float
    rabi_amplitude: float = 0.0
    phase: float = 0.0
    detuning: float = 0.0
    edge: float = 3.0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        if self.edge < 0:
            raise ValueError(f"edge must be >= 0, got {self.edge}")
        if self.edge > self.duration / 2 + 1e-12:
            raise ValueError(f"edge {self.edge} ns exceeds half the duration {self.duration} ns")

    @property
    def area(self) -> float:
        """Envelope integral in ns."""
        return self.duration - 2 * self.edge


def delay(duration: float, detuning: float = 0.0) -> PulseSegment:
    return PulseSegment(duration, 0.0, 0.0, detuning, 0.0)


def pulse_duration_for_angle(angle: float, rabi_amplitude: float, edge: float = 3.0) -> float:
    """Segment length (ns) that rotates by ``angle`` rad at ``rabi_amplitude`` MHz."""
    if not rabi_amplitude > 0:
        raise ValueError("rabi_amplitude must be positive")
    return abs(angle) / (TWO_PI_MHZ * rabi_amplitude) + 2 * edge


def rotation(angle: float, rabi_amplitude: float, phase: float = 0.0, detuning: float = 0.0,
             edge: float = 3.0) -> PulseSegment:
    """Pulse rotating by ``angle`` about the axis at ``phase``; negative angles flip the axis."""
    if angle < 0:
        phase += math.pi
    return PulseSegment(pulse_duration_for_angle(angle, rabi_amplitude, edge),
                        rabi_amplitude, phase, detuning, edge)


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple = field(default_factory=tuple)
    repetition_delay: float = 1.0  # ms

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.repetition_delay < 0:
            raise ValueError("repetition_delay must be non-negative")

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def check_repetition(self, t1: float):
        """Raise unless the repetition delay (ms) covers five lifetimes ``t1`` (s)."""
        if self.repetition_delay * 1e-3 < 5 * t1:
            raise ValueError(f"repetition delay {self.repetition_delay} ms is shorter than "
                             f"5 T1 = {5e3 * t1:.3g} ms")

    def as_arrays(self) -> np.ndarray:
        """(n_segments, 5) array of duration, amplitude, phase, detuning, edge."""
        if not self.segments:
            return np.zeros((0, 5))
        return np.array([[s.duration, s.rabi_amplitude, s.phase, s.detuning, s.edge]
                         for s in self.segments], dtype=float)


@dataclass(frozen=True)
class BlochState:
    x: float = 0.0
    y: float = 0.0
    z: float = 1.0

    def __post_init__(self):
        if self.x * self.x + self.y * self.y + self.z * self.z > 1 + 1e-9:
            raise ValueError("Bloch vector longer than 1")

    @property
    def p_excited(self) -> float:
        return 0.5 * (1.0 - self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


GROUND = BlochState(0.0, 0.0, 1.0)
EXCITED = BlochState(0.0, 0.0, -1.0)
SATURATED = BlochState(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Trajectory:
    """Sampled Bloch vector; ``t`` in ns, ``r`` of shape (n, 3)."""

    t: np.ndarray
    r: np.ndarray

    @property
    def p_excited(self) -> np.ndarray:
        return 0.5 * (1.0 - self.r[:, 2])

    @property
    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.r, axis=1)

    @property
    def final(self) -> BlochState:
        return BlochState(*self.r[-1])


# --- integrator ---------------------------------------------------------------

@numba.njit(cache=True, nogil=True, error_model="numpy", inline="always")
def _envelope(s, dur, edge):
    if edge <= 0.0:
        return 1.0
    width = math.sqrt(2.0) * edge / EDGE_TO_SIGMA
    up = 0.5 * (1.0 + math.erf((s - edge) / width))
    down = 0.5 * (1.0 + math.erf((dur - edge - s) / width))
    return up * down


@numba.njit(cache=True, nogil=True, error_model="numpy", inline="always")
def _noise_at(trace, t, noise_dt):
    u = t / noise_dt
    k = int(u)
    if k >= trace.shape[0] - 1:
        return trace[trace.shape[0] - 1]
    f = u - k
    return trace[k] * (1.0 - f) + trace[k + 1] * f


@numba.njit(cache=True, nogil=True, error_model="numpy", inline="always")
def _field(s, t_abs, dur, rate, cph, sph, det, edge, trace, noise_dt, sens1, sens2, has_noise):
    """Precession vector (rad/ns) at segment time s and absolute time t_abs."""
    drive = rate
    if rate != 0.0:
        drive *= _envelope(s, dur, edge)
    shift = -det
    if has_noise:
        dn = _noise_at(trace, t_abs, noise_dt)
        shift += (sens1 * dn + 0.5 * sens2 * dn * dn) * 1e3
    return drive * cph, drive * sph, TWO_PI_MHZ * shift


@numba.njit(cache=True, nogil=True, error_model="numpy", inline="always")
def _deriv(x, y, z, wx, wy, wz, g1):
    g2 = 0.5 * g1
    return (wy * z - wz * y - g2 * x,
            wz * x - wx * z - g2 * y,
            wx * y - wy * x - g1 * (z - 1.0))


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _integrate(segs, steps, r0, traces, noise_dt, sens1, sens2, has_noise, g1, record):
    """RK4 over every segment for each trace row; returns final states (B, 3).

    When ``record`` is true the single trajectory (B must be 1) is stored at
    every step and returned instead, shape (sum(steps) + 1, 3).
    """
    n_traj = traces.shape[0]
    n_rec = 1
    if record:
        for k in range(steps.shape[0]):
            n_rec += steps[k]
    out = np.empty((n_rec if record else n_traj, 3))
    for b in range(n_traj):
        trace = traces[b]
        x, y, z = r0[0], r0[1], r0[2]
        if record:
            out[0, 0], out[0, 1], out[0, 2] = x, y, z
        idx = 1
        t0 = 0.0
        for k in range(segs.shape[0]):
            dur, amp, phase, det, edge = segs[k, 0], segs[k, 1], segs[k, 2], segs[k, 3], segs[k, 4]
            rate = TWO_PI_MHZ * amp
            cph, sph = math.cos(phase), math.sin(phase)
            n = steps[k]
            h = dur / n if n > 0 else 0.0
            for j in range(n):
                s = j * h
                wx, wy, wz = _field(s, t0 + s, dur, rate, cph, sph, det, edge, trace,
                                    noise_dt, sens1, sens2, has_noise)
                ax, ay, az = _deriv(x, y, z, wx, wy, wz, g1)
                wx, wy, wz = _field(s + 0.5 * h, t0 + s + 0.5 * h, dur, rate, cph, sph, det,
                                    edge, trace, noise_dt, sens1, sens2, has_noise)
                bx, by, bz = _deriv(x + 0.5 * h * ax, y + 0.5 * h * ay, z + 0.5 * h * az,
                                    wx, wy, wz, g1)
                cx, cy, cz = _deriv(x + 0.5 * h * bx, y + 0.5 * h * by, z + 0.5 * h * bz,
                                    wx, wy, wz, g1)
                wx, wy, wz = _field(s + h, t0 + s + h, dur, rate, cph, sph, det, edge, trace,
                                    noise_dt, sens1, sens2, has_noise)
                dx, dy, dz = _deriv(x + h * cx, y + h * cy, z + h * cz, wx, wy, wz, g1)
                x += h / 6.0 * (ax + 2.0 * bx + 2.0 * cx + dx)
                y += h / 6.0 * (ay + 2.0 * by + 2.0 * cy + dy)
                z += h / 6.0 * (az + 2.0 * bz + 2.0 * cz + dz)
                if record:
                    out[idx, 0], out[idx, 1], out[idx, 2] = x, y, z
                    idx += 1
            t0 += dur
        if not record:
            out[b, 0], out[b, 1], out[b, 2] = x, y, z
    return out


def _check_dt(seq: PulseSequence, dt: float):
    if not 0 < dt <= 1.0:
        raise ValueError(f"dt must lie in (0, 1] ns, got {dt}")
    for s in seq.segments:
        if s.rabi_amplitude and s.edge > 0 and dt > s.edge / 3:
            raise ValueError(f"dt={dt} ns does not resolve a {s.edge} ns pulse edge (need dt <= edge/3)")


def _steps(segs: np.ndarray, dt: float) -> np.ndarray:
    # each segment gets an integer number of equal steps no longer than dt
    return np.ceil(segs[:, 0] / dt - 1e-9).astype(np.int64)


def _g1(t1) -> float:
    if t1 is None or math.isinf(t1):
        return 0.0
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    return 1.0 / (t1 * 1e9)


def _as_noise(noise, seq):
    if noise is None:
        return np.zeros((1, 1)), DEFAULT_NOISE_DT, False
    samples = np.atleast_2d(np.asarray(noise.samples, dtype=float))
    noise_dt = noise.dt * 1e9
    if samples.shape[1] * noise_dt < seq.duration * (1 - 1e-9):
        raise ValueError("noise trace is shorter than the pulse sequence")
    return samples, noise_dt, True


def evolve(seq: PulseSequence, t1: Optional[float] = None, noise=None, sens1: float = 0.0,
           sens2: float = 0.0, dt: float = DEFAULT_DT, initial: BlochState = GROUND) -> Trajectory:
    """Integrate the Bloch equations through ``seq`` with fixed-step RK4.

    Parameters
    ----------
    seq : PulseSequence
    t1 : float or None
        Energy relaxation time in s; None or inf disables relaxation.
    noise : NoiseTrace or None
        Gate-charge fluctuation dn_g, sampled with ``noise.dt`` in s.
    sens1, sens2 : float
        First- and second-order charge sensitivities (GHz per n_g, n_g^2).
    dt : float
        Maximum step in ns; must satisfy dt <= 1 and dt <= edge / 3.

    Returns
    -------
    Trajectory
        The state at every integration step, starting at ``initial``.
    """
    _check_dt(seq, dt)
    segs = seq.as_arrays()
    steps = _steps(segs, dt)
    traces, noise_dt, has_noise = _as_noise(noise, seq)
    r = _integrate(segs, steps, initial.as_array(), traces[:1], noise_dt, sens1, sens2,
                   has_noise, _g1(t1), True)
    t = [0.0]
    t0 = 0.0
    for (dur, *_), n in zip(segs, steps):
        if n:
            t.extend(t0 + dur * np.arange(1, n + 1) / n)
        t0 += dur
    return Trajectory(np.asarray(t), r)


def evolve_final(seq: PulseSequence, t1=None, traces=None, noise_dt: float = DEFAULT_NOISE_DT,
                 sens1: float = 0.0, sens2: float = 0.0, dt: float = DEFAULT_DT,
                 initial: BlochState = GROUND) -> np.ndarray:
    """Final Bloch vectors (B, 3) for a batch of noise traces (B, M) in one sequence.

    ``noise_dt`` is the trace sample spacing in ns. Without traces a single
    noiseless trajectory is returned.
    """
    _check_dt(seq, dt)
    segs = seq.as_arrays()
    if traces is None:
        traces, has_noise = np.zeros((1, 1)), False
    else:
        traces, has_noise = np.ascontiguousarray(np.atleast_2d(traces), dtype=float), True
        if traces.shape[1] * noise_dt < seq.duration * (1 - 1e-9):
            raise ValueError("noise traces are shorter than the pulse sequence")
    return _integrate(segs, _steps(segs, dt), initial.as_array(), traces, noise_dt,
                      sens1, sens2, has_noise, _g1(t1), False)


# --- experiments ----------------------------------------------------------------

@dataclass(frozen=True)
class PeCurve:
    """Excited-state population versus a swept variable."""

    x: np.ndarray
    pe: np.ndarray
    x_label: str = "tau_ns"

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "pe", np.asarray(self.pe, dtype=float))
        if self.x.shape != self.pe.shape:
            raise ValueError("x and pe must have equal shapes")


@dataclass(frozen=True)
class NoiseConfig:
    """Charge noise seen by the qubit during an experiment.

    ``sens1``/``sens2`` are the charge sensitivities at the operating point
    (GHz per n_g, GHz per n_g^2); ``noise_dt`` is the trace spacing in ns.
    """

    psd: _noise.NoisePsd
    sens1: float = 0.0
    sens2: float = 0.0
    n_shots: int = 1000
    noise_dt: float = DEFAULT_NOISE_DT

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be at least 1")
        if self.psd.soft_cutoff is not None and self.noise_dt * 1e-9 > 0.05 / self.psd.soft_cutoff:
            raise ValueError("noise_dt does not resolve the PSD cutoff")

    @classmethod
    def for_device(cls, psd, cpb, n_g: float = 1.0, **kw) -> "NoiseConfig":
        from .qubit import sensitivity_first, sensitivity_second
        s2 = (4 * cpb.e_c) ** 2 * cpb.e_j ** 2 / float(
            np.hypot(4 * cpb.e_c * (1 - n_g), cpb.e_j)) ** 3
        if n_g == 1.0:
            s2 = sensitivity_second(cpb)
        return cls(psd, float(sensitivity_first(cpb, n_g)), s2, **kw)


def _mean_pe(states: np.ndarray) -> float:
    # fixed-order pairwise sum keeps the average reproducible
    return float(0.5 * (1.0 - np.sum(states[:, 2]) / states.shape[0]))


def run_sequences(sequences: Sequence[PulseSequence], t1=None, noise: Optional[NoiseConfig] = None,
                  seed: int = 0, dt: float = DEFAULT_DT, initial: BlochState = GROUND) -> np.ndarray:
    """Shot-averaged P_e after each sequence.

    Sequence k draws its noise traces from the seed entropy ``[seed, k]``,
    so every point is reproducible on its own.
    """
    out = np.empty(len(sequences))
    for k, seq in enumerate(sequences):
        if noise is None or noise.psd.is_zero:
            out[k] = _mean_pe(evolve_final(seq, t1, dt=dt, initial=initial))
            continue
        n_samples = int(math.ceil(seq.duration / noise.noise_dt)) + 2
        traces = _noise.realizations(noise.psd, noise.n_shots, n_samples,
                                     noise.noise_dt * 1e-9, [seed, k])
        states = evolve_final(seq, t1, traces, noise.noise_dt, noise.sens1, noise.sens2, dt,
                              initial)
        out[k] = _mean_pe(states)
    return out


def rabi_experiment(coupling: float, drive_amplitude: float, durations, t1=None,
                    noise: Optional[NoiseConfig] = None, seed: int = 0, edge: float = 3.0,
                    detuning: float = 0.0, dt: float = DEFAULT_DT) -> PeCurve:
    """Driven Rabi oscillation versus effective pulse length.

    ``coupling`` converts the drive amplitude (uV) to a Rabi frequency
    (MHz/uV). Each entry of ``durations`` is the envelope area in ns; the
    realized segment is that plus the two edge ramps.
    """
    rabi = coupling * drive_amplitude
    durations = np.asarray(durations, dtype=float)
    seqs = [PulseSequence([PulseSegment(d + 2 * edge, rabi, 0.0, detuning, edge)])
            for d in durations]
    return PeCurve(durations, run_sequences(seqs, t1, noise, seed, dt), "duration_ns")


def ramsey_sequence(tau: float, delta_omega: float, rabi: float, edge: float = 3.0) -> PulseSequence:
    half = rotation(math.pi / 2, rabi, 0.0, delta_omega, edge)
    return PulseSequence([half, delay(tau, delta_omega), half])


def ramsey_experiment(delta_omega: float, taus, rabi: float = 9.6, t1=None,
                      noise: Optional[NoiseConfig] = None, seed: int = 0, edge: float = 3.0,
                      dt: float = DEFAULT_DT) -> PeCurve:
    """Two pi/2 pulses detuned by ``delta_omega`` MHz, separated by each tau (ns)."""
    taus = np.asarray(taus, dtype=float)
    seqs = [ramsey_sequence(t, delta_omega, rabi, edge) for t in taus]
    return PeCurve(taus, run_sequences(seqs, t1, noise, seed, dt))


def echo_sequence(tau: float, rabi: float, edge: float = 3.0) -> PulseSequence:
    """pi/2 - tau/2 - pi (90 deg phase) - tau/2 - (-pi/2); ends in ground when refocused."""
    return PulseSequence([rotation(math.pi / 2, rabi, 0.0, 0.0, edge), delay(tau / 2),
                          rotation(math.pi, rabi, math.pi / 2, 0.0, edge), delay(tau / 2),
                          rotation(-math.pi / 2, rabi, 0.0, 0.0, edge)])


def echo_experiment(taus, rabi: float = 9.6, t1=None, noise: Optional[NoiseConfig] = None,
                    seed: int = 0, edge: float = 3.0, dt: float = DEFAULT_DT) -> PeCurve:
    """Hahn echo; P_e = (1 - C(tau)) / 2 rises towards 1/2 as coherence C is lost."""
    taus = np.asarray(taus, dtype=float)
    seqs = [echo_sequence(t, rabi, edge) for t in taus]
    return PeCurve(taus, run_sequences(seqs, t1, noise, seed, dt))


def t1_experiment(t1: float, times, dt: float = 1.0) -> PeCurve:
    """Free decay after saturation (P_e(0) = 1/2), sampled at ``times`` in ns."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and increasing")
    edges = np.concatenate([[0.0], times])
    seq = PulseSequence([delay(d) for d in np.diff(edges)])
    segs = seq.as_arrays()
    traj = evolve(seq, t1, dt=dt, initial=SATURATED)
    ends = np.cumsum(_steps(segs, dt))
    return PeCurve(times, traj.p_excited[ends], "t_ns")


def saturation_pe(detuning_hz, rabi_mhz: float, t1: float, t2: float):
    """Steady-state P_e of a continuously driven two-level system.

    P_e = s / 2 / (1 + (2 pi delta T2)^2 + s) with s = (2 pi Omega)^2 T1 T2.
    """
    sat = (2 * math.pi * rabi_mhz * 1e6) ** 2 * t1 * t2
    lor = (2 * math.pi * np.asarray(detuning_hz) * t2) ** 2
    return 0.5 * sat / (1.0 + lor + sat)


def cw_spectroscopy(spectrum, n_g, f_pump, rabi_mhz: float, t1: float, t2: float) -> np.ndarray:
    """Steady-state P_e map of shape (len(f_pump), len(n_g)).

    ``spectrum`` is a CpbParams (single parabola) or a DefectSpectrumModel
    whose branches are mixed with their visibility weights. Frequencies in
    GHz, times in s.
    """
    from .qubit import CpbParams, DefectSpectrumModel, defect_spectrum, transition_frequency
    n_g = np.atleast_1d(np.asarray(n_g, dtype=float))
    f_pump = np.atleast_1d(np.asarray(f_pump, dtype=float))
    if n_g.size == 0 or f_pump.size == 0:
        raise ValueError("n_g and f_pump grids must be non-empty")
    if isinstance(spectrum, CpbParams):
        branches = [(np.atleast_1d(transition_frequency(spectrum, n_g)), 1.0)]
    elif isinstance(spectrum, DefectSpectrumModel):
        branches = defect_spectrum(spectrum, n_g)
    else:
        raise TypeError("spectrum must be CpbParams or DefectSpectrumModel")
    total_w = sum(w for _, w in branches)
    pe = np.zeros((f_pump.size, n_g.size))
    for f_q, w in branches:
        pe += w * saturation_pe((f_pump[:, None] - f_q[None, :]) * 1e9, rabi_mhz, t1, t2)
    return pe / total_w
