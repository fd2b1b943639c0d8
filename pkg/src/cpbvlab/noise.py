"""Charge-noise spectral densities, time-domain synthesis and dephasing.

Conventions
-----------
PSDs are one-sided, in e^2/Hz, of the gate-charge fluctuation dn_g. A
qubit with first-order sensitivity ``sens1`` (GHz per unit n_g) then
accumulates the phase ``2 pi * sens1 * integral(dn_g dt)`` and

    var(phi) = (2 pi sens1)^2 tau^2 * integral(S(f) W(f, tau) df)

with ``W = sinc^2(pi f tau)`` for free induction decay and
``W = sinc^2(pi f tau / 2) sin^2(pi f tau / 2)`` for a Hahn echo of total
length tau.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np
from scipy import integrate, optimize

# chunk size for Monte Carlo generation; results do not depend on how chunks
# are scheduled because each chunk owns a spawned seed
MC_CHUNK = 256


@dataclass(frozen=True)
class NoisePsd:
    """Parametric 1/f^alpha charge-noise PSD.

    Below ``soft_cutoff`` the spectrum is ``amplitude_1hz / f**exponent``;
    above it rolls off as 1/f^2, joined continuously at the knee. An
    optional white floor is added everywhere.
    """

    amplitude_1hz: float
    exponent: float = 1.0
    soft_cutoff: Optional[float] = None
    white_floor: Optional[float] = None
    infrared_cutoff: float = 1.0

    def __post_init__(self):
        if self.amplitude_1hz < 0:
            raise ValueError("amplitude_1hz must be non-negative")
        if self.white_floor is not None and self.white_floor < 0:
            raise ValueError("white_floor must be non-negative")
        if self.infrared_cutoff < 0:
            raise ValueError("infrared_cutoff must be non-negative")
        if self.soft_cutoff is not None and not self.soft_cutoff > self.infrared_cutoff:
            raise ValueError("soft_cutoff must exceed infrared_cutoff")

    def scaled(self, factor: float) -> "NoisePsd":
        """Every spectral component multiplied by ``factor``."""
        white = None if self.white_floor is None else self.white_floor * factor
        return replace(self, amplitude_1hz=self.amplitude_1hz * factor, white_floor=white)

    def with_cutoff(self, f_c: Optional[float]) -> "NoisePsd":
        return replace(self, soft_cutoff=f_c)

    @property
    def is_zero(self) -> bool:
        return self.amplitude_1hz == 0 and not self.white_floor


@dataclass(frozen=True)
class NoiseTrace:
    """Sampled dn_g(t); sample k holds the value on [k dt, (k+1) dt)."""

    samples: np.ndarray
    dt: float
    seed: Optional[int] = None

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt


PSD_PRESETS = {
    "device1-1f": NoisePsd(amplitude_1hz=(3e-3) ** 2),
    "device1-1f-cutoff200k": NoisePsd(amplitude_1hz=(3e-3) ** 2, soft_cutoff=2e5),
    "device2-1f": NoisePsd(amplitude_1hz=(1e-2) ** 2),
    # Markovian reference spectrum; level is normally rescaled by calibration
    "white": NoisePsd(amplitude_1hz=0.0, white_floor=1e-12),
}


def get_preset(name: str) -> NoisePsd:
    try:
        return PSD_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown PSD preset {name!r}; known: {sorted(PSD_PRESETS)}") from None


def psd_eval(psd: NoisePsd, f):
    """Spectral density in e^2/Hz at frequency ``f`` (Hz)."""
    f = np.asarray(f, dtype=float)
    if np.any(f < psd.infrared_cutoff) or np.any(f <= 0):
        raise ValueError(f"PSD requested below the infrared cutoff {psd.infrared_cutoff} Hz")
    out = _colored(psd, f)
    if psd.white_floor:
        out = out + psd.white_floor
    return float(out) if out.ndim == 0 else out


def _colored(psd, f):
    a, alpha, fc = psd.amplitude_1hz, psd.exponent, psd.soft_cutoff
    with np.errstate(divide="ignore"):
        low = a * f ** (-alpha)
        if fc is None:
            return low
        high = a * fc ** (-alpha) * (fc / f) ** 2
    return np.where(f <= fc, low, high)


def _powerlaw_integral(a, alpha, lo, hi):
    # integral of a * f^-alpha over [lo, hi]; empty intervals give 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if alpha == 1.0:
            val = a * np.log(hi / lo)
        else:
            val = a * (hi ** (1 - alpha) - lo ** (1 - alpha)) / (1 - alpha)
    return np.where(hi > lo, val, 0.0)


def band_power(psd: NoisePsd, lo, hi):
    """Exact integral of the PSD over [lo, hi] (clipped to the infrared cutoff)."""
    lo = np.maximum(np.asarray(lo, dtype=float), psd.infrared_cutoff)
    hi = np.maximum(np.asarray(hi, dtype=float), lo)
    total = np.zeros(np.broadcast(lo, hi).shape)
    if psd.amplitude_1hz > 0:
        fc = np.inf if psd.soft_cutoff is None else psd.soft_cutoff
        total = total + _powerlaw_integral(psd.amplitude_1hz, psd.exponent,
                                           np.minimum(lo, fc), np.minimum(hi, fc))
        if psd.soft_cutoff is not None:
            k = psd.amplitude_1hz * fc ** (2 - psd.exponent)
            total = total + k * (1.0 / np.maximum(lo, fc) - 1.0 / np.maximum(hi, fc))
    if psd.white_floor:
        total = total + psd.white_floor * (hi - lo)
    return float(total) if total.ndim == 0 else total


def _next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def _fft_bin_powers(psd, n_fft, dt):
    df = 1.0 / (n_fft * dt)
    k = np.arange(1, n_fft // 2 + 1)
    lo = (k - 0.5) * df
    hi = np.minimum((k + 0.5) * df, 0.5 / dt)
    return band_power(psd, lo, hi), df


def _synth_block(rng, powers, n_fft, count):
    """``count`` real Gaussian traces of length n_fft with given bin powers."""
    nb = len(powers)
    a = rng.standard_normal((count, nb))
    b = rng.standard_normal((count, nb))
    amp = np.sqrt(powers)
    spec = np.zeros((count, nb + 1), dtype=complex)
    spec[:, 1:] = 0.5 * n_fft * amp * (a - 1j * b)
    spec[:, -1] = n_fft * amp[-1] * a[:, -1]
    return np.fft.irfft(spec, n=n_fft, axis=1)


def synth_trace(psd: NoisePsd, duration: float, dt: float, seed: int,
                f_max: Optional[float] = None) -> NoiseTrace:
    """Gaussian noise realization by random-phase Fourier synthesis.

    The record is padded to a power of two; frequency bin k (spacing
    ``1/(N dt)``) carries the exact PSD power of the band it represents, so
    the expected sample variance equals the PSD integrated from half a bin
    above zero (or the infrared cutoff) up to Nyquist.
    """
    if not (dt > 0 and duration > 0):
        raise ValueError("duration and dt must be positive")
    n = int(round(duration / dt))
    if n < 2 or abs(n * dt - duration) > 1e-9 * duration:
        raise ValueError(f"duration {duration} is not an integer multiple of dt {dt}")
    if f_max is not None and dt >= 0.5 / f_max:
        raise ValueError(f"dt={dt} does not resolve the modeled band up to {f_max} Hz")
    n_fft = _next_pow2(n)
    powers, _ = _fft_bin_powers(psd, n_fft, dt)
    rng = np.random.default_rng(seed)
    x = _synth_block(rng, powers, n_fft, 1)[0, :n]
    return NoiseTrace(np.ascontiguousarray(x), dt, seed)


def synthesized_band_power(psd: NoisePsd, duration: float, dt: float) -> float:
    """Expected variance of :func:`synth_trace` output."""
    n_fft = _next_pow2(int(round(duration / dt)))
    powers, _ = _fft_bin_powers(psd, n_fft, dt)
    return float(np.sum(powers))


def _infrared_harmonics(psd, f_top, per_decade):
    """Log-spaced bins covering [infrared_cutoff, f_top): centres and powers."""
    f_ir = psd.infrared_cutoff
    if f_ir <= 0 or f_top <= f_ir:
        return np.empty(0), np.empty(0)
    n_bins = max(1, int(math.ceil(per_decade * math.log10(f_top / f_ir))))
    edges = np.geomspace(f_ir, f_top, n_bins + 1)
    return np.sqrt(edges[:-1] * edges[1:]), band_power(psd, edges[:-1], edges[1:])


def iter_realizations(psd: NoisePsd, n_traces: int, n_samples: int, dt: float, seed,
                      pad: int = 4, per_decade: int = 10) -> Iterator[np.ndarray]:
    """Yield chunks of independent noise traces of shape (m, n_samples).

    Frequencies from 1/(2 T_fft) to Nyquist come from a padded FFT grid
    (``T_fft = pad * next_pow2(n_samples) * dt``); the band between the
    infrared cutoff and that grid is added as log-spaced harmonics with
    Gaussian quadratures, so slow shot-to-shot drifts are represented
    without simulating seconds-long records.
    """
    n_fft = pad * _next_pow2(n_samples)
    powers, df = _fft_bin_powers(psd, n_fft, dt)
    f_low, p_low = _infrared_harmonics(psd, 0.5 * df, per_decade)
    t = np.arange(n_samples) * dt
    if len(f_low):
        basis = np.vstack([np.cos(2 * np.pi * np.outer(f_low, t)),
                           np.sin(2 * np.pi * np.outer(f_low, t))])
        amp_low = np.sqrt(np.concatenate([p_low, p_low]))
    n_chunks = -(-n_traces // MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    for i, child in enumerate(children):
        m = min(MC_CHUNK, n_traces - i * MC_CHUNK)
        rng = np.random.default_rng(child)
        x = _synth_block(rng, powers, n_fft, m)[:, :n_samples]
        if len(f_low):
            q = rng.standard_normal((m, 2 * len(f_low))) * amp_low
            x = x + q @ basis
        yield x


def realizations(psd, n_traces, n_samples, dt, seed, **kw) -> np.ndarray:
    return np.vstack(list(iter_realizations(psd, n_traces, n_samples, dt, seed, **kw)))


def t1_to_sq(e_c: float, t1: float) -> float:
    """Charge-noise PSD (e^2/Hz) at f_q implied by a relaxation time ``t1`` (s).

    S_Q = (e hbar / 2 E_c)^2 / T1 = (1 / (4 pi E_c/h))^2 / T1.
    """
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    return (1.0 / (4 * math.pi * e_c * 1e9)) ** 2 / t1


def sq_to_t1(e_c: float, s_q: float) -> float:
    if not s_q > 0:
        raise ValueError("s_q must be positive")
    return (1.0 / (4 * math.pi * e_c * 1e9)) ** 2 / s_q


# --- filter functions -------------------------------------------------------

_LOBES_RESOLVED = 200
_PTS_PER_LOBE = 32


def _weight(kind, f, tau):
    if kind == "fid":
        return np.sinc(f * tau) ** 2
    x = 0.5 * np.pi * f * tau
    return np.sin(x) ** 4 / x**2


def _weight_tail(kind, f, tau):
    # weight with the oscillating numerator replaced by its mean
    if kind == "fid":
        return 0.5 / (np.pi * f * tau) ** 2
    return 0.375 / (0.5 * np.pi * f * tau) ** 2


def _check_convergence(psd, kind):
    if psd.infrared_cutoff == 0 and psd.amplitude_1hz > 0:
        limit = 1.0 if kind == "fid" else 3.0
        if psd.exponent >= limit:
            raise ValueError(
                f"{kind} filter integral diverges for exponent {psd.exponent} "
                "without an infrared cutoff")


def filter_integral(psd: NoisePsd, tau: float, kind: str = "fid", f_max: float = 1e9) -> float:
    """integral S(f) W(f, tau) df from the infrared cutoff to ``f_max``."""
    _check_convergence(psd, kind)
    if psd.is_zero or tau <= 0:
        return 0.0
    lo = psd.infrared_cutoff if psd.infrared_cutoff > 0 else 1e-6 / tau
    knots = {lo, f_max, min(max(1.0 / tau, lo), f_max),
             min(max(_LOBES_RESOLVED / tau, lo), f_max)}
    if psd.soft_cutoff is not None and lo < psd.soft_cutoff < f_max:
        knots.add(psd.soft_cutoff)
    knots = sorted(knots)
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if b <= a:
            continue
        if a >= _LOBES_RESOLVED / tau * (1 - 1e-12):
            f = np.geomspace(a, b, 801)
            y = psd_eval(psd, f) * _weight_tail(kind, f, tau) * f
            total += integrate.simpson(y, x=np.log(f))
        elif b <= 1.0 / tau * (1 + 1e-12):
            f = np.geomspace(a, b, 1001)
            y = psd_eval(psd, f) * _weight(kind, f, tau) * f
            total += integrate.simpson(y, x=np.log(f))
        else:
            n = max(int(_PTS_PER_LOBE * (b - a) * tau), 16) | 1
            f = np.linspace(a, b, n)
            total += integrate.simpson(psd_eval(psd, f) * _weight(kind, f, tau), x=f)
    return float(total)


def phase_variance(psd, sens1, tau, kind="fid", f_max=1e9):
    """Gaussian accumulated-phase variance (rad^2); sens1 in GHz per n_g."""
    w = 2 * np.pi * sens1 * 1e9
    return w * w * tau * tau * filter_integral(psd, tau, kind, f_max)


def _envelope(psd, sens1, tau, kind, f_max):
    if not np.isfinite(sens1):
        raise ValueError("sens1 must be finite")
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(taus < 0):
        raise ValueError("tau must be non-negative")
    out = np.array([math.exp(-0.5 * phase_variance(psd, sens1, t, kind, f_max)) for t in taus])
    return float(out[0]) if np.ndim(tau) == 0 else out


def fid_envelope(psd: NoisePsd, sens1: float, tau, f_max: float = 1e9):
    """Ramsey (free induction) coherence under Gaussian first-order noise."""
    return _envelope(psd, sens1, tau, "fid", f_max)


def echo_envelope(psd: NoisePsd, sens1: float, tau, f_max: float = 1e9):
    """Hahn-echo coherence at total sequence length ``tau``."""
    return _envelope(psd, sens1, tau, "echo", f_max)


def decay_time(psd: NoisePsd, sens1: float, kind: str = "fid", t1: Optional[float] = None,
               f_max: float = 1e9, bracket=(1e-10, 1.0)) -> float:
    """1/e time of the filter-function envelope, optionally times exp(-tau/2T1)."""
    gamma2 = 0.0 if t1 is None or np.isinf(t1) else 0.5 / t1

    def excess(log_tau):
        tau = math.exp(log_tau)
        return 0.5 * phase_variance(psd, sens1, tau, kind, f_max) + gamma2 * tau - 1.0

    lo, hi = map(math.log, bracket)
    if excess(hi) < 0:
        raise ValueError("coherence does not fall to 1/e inside the search bracket")
    return math.exp(optimize.brentq(excess, lo, hi, xtol=1e-12, rtol=1e-12))


def calibrate_psd(psd: NoisePsd, sens1: float, target: float, kind: str = "fid",
                  t1: Optional[float] = None, f_max: float = 1e9) -> NoisePsd:
    """Rescale ``psd`` so the envelope 1/e time equals ``target`` seconds."""
    gamma2 = 0.0 if t1 is None or np.isinf(t1) else 0.5 / t1
    budget = 1.0 - gamma2 * target
    if budget <= 0:
        raise ValueError("relaxation alone already decays faster than the target")
    unit = 0.5 * phase_variance(psd, sens1, target, kind, f_max)
    if unit <= 0:
        raise ValueError("template PSD is identically zero")
    return psd.scaled(budget / unit)


def echo_fid_ratio(psd: NoisePsd, t2_star: float, f_max: float = 1e9) -> float:
    """T_echo / T2* with the PSD level calibrated to the given T2*."""
    cal = calibrate_psd(psd, 1.0, t2_star, "fid", f_max=f_max)
    return decay_time(cal, 1.0, "echo", f_max=f_max) / t2_star


def cutoff_from_ratio(ratio: float, t2_star: float, template: Optional[NoisePsd] = None,
                      bracket=(1e3, 1e8), f_max: float = 1e9) -> float:
    """Soft-cutoff frequency whose echo/FID 1/e-time ratio equals ``ratio``."""
    if not ratio > 1:
        raise ValueError("ratio must exceed 1")
    template = template or PSD_PRESETS["device1-1f"]
    lo, hi = bracket

    def r(log_fc):
        return echo_fid_ratio(template.with_cutoff(math.exp(log_fc)), t2_star, f_max)

    r_hi, r_lo = r(math.log(hi)), r(math.log(lo))
    if abs(ratio - r_hi) <= 1e-3 * ratio:
        return hi
    if not r_hi < ratio < r_lo:
        raise ValueError(
            f"ratio {ratio} not reachable with a cutoff in [{lo:g}, {hi:g}] Hz "
            f"(achievable {r_hi:.3f} .. {r_lo:.3f})")
    return math.exp(optimize.brentq(lambda x: r(x) - ratio, math.log(lo), math.log(hi),
                                    xtol=1e-6))


# --- Monte Carlo ------------------------------------------------------------

def _interp_cumulative(cum, idx):
    i = np.floor(idx).astype(int)
    i = np.minimum(i, cum.shape[1] - 2)
    frac = idx - i
    return cum[:, i] * (1 - frac) + cum[:, i + 1] * frac


def mc_phase_integrals(psd: NoisePsd, tau_grid, n_realizations: int, seed, dt=None,
                       sequence: str = "fid"):
    """Per-realization integrals of dn and dn^2 (units of e*s, e^2*s).

    Echo sequences flip the sign of the integrand at tau/2. Returns two
    arrays of shape (n_realizations, len(tau_grid)).
    """
    taus = np.asarray(tau_grid, dtype=float)
    if np.any(taus < 0):
        raise ValueError("tau_grid must be non-negative")
    tau_max = float(taus.max())
    if dt is None:
        dt = tau_max / 1024
        if psd.soft_cutoff is not None:
            dt = min(dt, 1.0 / (20 * psd.soft_cutoff))
    if psd.soft_cutoff is not None and dt > 1.0 / (20 * psd.soft_cutoff):
        raise ValueError(f"dt={dt} too coarse for cutoff {psd.soft_cutoff} Hz")
    n = int(math.ceil(tau_max / dt)) + 1
    i1, i2 = [], []
    for x in iter_realizations(psd, n_realizations, n, dt, seed):
        c1 = np.zeros((x.shape[0], n + 1))
        c2 = np.zeros((x.shape[0], n + 1))
        np.cumsum(x * dt, axis=1, out=c1[:, 1:])
        np.cumsum(x * x * dt, axis=1, out=c2[:, 1:])
        idx = taus / dt
        if sequence == "fid":
            i1.append(_interp_cumulative(c1, idx))
            i2.append(_interp_cumulative(c2, idx))
        elif sequence == "echo":
            i1.append(2 * _interp_cumulative(c1, idx / 2) - _interp_cumulative(c1, idx))
            i2.append(2 * _interp_cumulative(c2, idx / 2) - _interp_cumulative(c2, idx))
        else:
            raise ValueError(f"unknown sequence {sequence!r}")
    return np.vstack(i1), np.vstack(i2)


def coherence_from_integrals(i1, i2, sens1, sens2, scale=1.0):
    """|<exp(i phi)>| for noise amplitude scaled by ``sqrt(scale)``."""
    phi = 2 * np.pi * 1e9 * (sens1 * math.sqrt(scale) * i1 + 0.5 * sens2 * scale * i2)
    return np.hypot(np.cos(phi).sum(axis=0), np.sin(phi).sum(axis=0)) / phi.shape[0]


def mc_dephasing(psd: NoisePsd, sens1: float, sens2: float, tau_grid, n_realizations: int,
                 seed, dt=None, sequence: str = "fid") -> np.ndarray:
    """Monte Carlo coherence |<exp(i phi(tau))>| with first- and second-order coupling.

    phi(tau) = 2 pi integral [sens1 dn(t) + sens2 dn(t)^2 / 2] dt, with the
    sensitivities in GHz per n_g and GHz per n_g^2.
    """
    i1, i2 = mc_phase_integrals(psd, tau_grid, n_realizations, seed, dt, sequence)
    return coherence_from_integrals(i1, i2, sens1, sens2)


def one_over_e_time(taus, coherence) -> float:
    """First 1/e crossing of a sampled coherence curve (linear interpolation)."""
    taus = np.asarray(taus, dtype=float)
    c = np.asarray(coherence, dtype=float)
    below = np.nonzero(c < math.exp(-1))[0]
    if len(below) == 0 or below[0] == 0:
        raise ValueError("coherence curve does not cross 1/e inside the grid")
    j = below[0]
    y0, y1 = c[j - 1], c[j]
    return float(taus[j - 1] + (y0 - math.exp(-1)) / (y0 - y1) * (taus[j] - taus[j - 1]))
