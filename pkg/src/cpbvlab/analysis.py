"""Curve fitting and derived quantities for the qubit experiments.

All fitters run Levenberg-Marquardt with analytic Jacobians from a fixed
initialization rule, so identical data give bit-identical results. The
independent variable is rescaled to [0, 1] internally; reported parameters
are in the caller's units.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, stats

from . import noise as _noise

MAX_ITERATIONS = 200
_TOL = 1e-13


@dataclass(frozen=True)
class FitResult:
    """Outcome of a least-squares fit.

    ``flags`` collects diagnostics such as ``"tau_unidentifiable"``; a flagged
    parameter is reported as nan.
    """

    params: dict
    std_errors: dict
    residual_rms: float
    converged: bool
    iterations: int
    flags: tuple = field(default_factory=tuple)
    gradient_norm: float = 0.0

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _lm(residual: Callable, jac: Callable, p0, n_data: int):
    sol = optimize.least_squares(residual, np.asarray(p0, dtype=float), jac=jac, method="lm",
                                 xtol=_TOL, ftol=_TOL, gtol=_TOL,
                                 max_nfev=MAX_ITERATIONS * (len(p0) + 1))
    r = sol.fun
    dof = max(n_data - len(p0), 1)
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * (r @ r) / dof
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        err = np.full(len(p0), np.inf)
    grad = float(np.linalg.norm(sol.jac.T @ r))
    return sol, err, grad


def _prepare(x, y, min_points):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if len(x) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite data")
    order = np.argsort(x, kind="stable")
    return x[order], y[order]


def _flat(y) -> bool:
    scale = max(float(np.max(np.abs(y))), 1e-300)
    return float(np.ptp(y)) <= 1e-12 * scale


# --- exponential decay ----------------------------------------------------------

def _exp_init(u, y):
    """Offset and rate from the integral equation y - y0 = -k S + k c u."""
    s = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(u))])
    design = np.column_stack([-s, u - u[0]])
    coef, *_ = np.linalg.lstsq(design, y - y[0], rcond=None)
    k = coef[0]
    if not k > 0:
        k = 3.0
    c = coef[1] / k
    # log-linear pre-fit of the amplitude at that offset
    shifted = y - c
    sign = 1.0 if np.mean(shifted) >= 0 else -1.0
    good = sign * shifted > 0
    if good.sum() >= 2:
        slope, icpt = np.polyfit(u[good], np.log(sign * shifted[good]), 1)
        if slope < 0:
            k = -slope
        amp = sign * math.exp(icpt)
    else:
        amp = y[0] - c
    return amp, k, c


def fit_exp_decay(t, y) -> FitResult:
    """Fit ``amplitude * exp(-t / tau) + offset``."""
    t, y = _prepare(t, y, 8)
    if _flat(y):
        return FitResult({"amplitude": 0.0, "tau": math.nan, "offset": float(y[0])},
                         {"amplitude": 0.0, "tau": math.nan, "offset": 0.0},
                         0.0, True, 0, ("tau_unidentifiable",))
    t0, span = t[0], t[-1] - t[0]
    u = (t - t0) / span

    def model(p):
        return p[0] * np.exp(-p[1] * u) + p[2]

    def jac(p):
        e = np.exp(-p[1] * u)
        return np.column_stack([e, -p[0] * u * e, np.ones_like(u)])

    amp, k, c = _exp_init(u, y)
    sol, err, grad = _lm(lambda p: model(p) - y, jac, [amp, k, c], len(y))
    a, k, c = sol.x
    ea, ek, ec = err
    flags = []
    tau = span / k if k > 0 else math.nan
    tau_err = span * ek / k ** 2 if k > 0 else math.nan
    if not k > 0 or abs(a) < 3 * ea or not math.isfinite(tau_err):
        flags.append("tau_unidentifiable")
    # report the amplitude at the caller's t = 0
    scale = math.exp(k * t0 / span) if k > 0 else 1.0
    return FitResult({"amplitude": float(a * scale), "tau": float(tau), "offset": float(c)},
                     {"amplitude": float(ea * scale), "tau": float(tau_err), "offset": float(ec)},
                     float(np.sqrt(np.mean(sol.fun ** 2))), bool(sol.status > 0), int(sol.nfev),
                     tuple(flags), grad)


# --- damped sinusoid ------------------------------------------------------------

def _periodogram_peak(u, y):
    """Dominant frequency (cycles per unit u) and peak-to-median power ratio."""
    n = len(u)
    du = np.median(np.diff(u))
    if np.allclose(np.diff(u), du, rtol=1e-6, atol=0):
        n_fft = 8 * 2 ** int(math.ceil(math.log2(n)))
        power = np.abs(np.fft.rfft(y - y.mean(), n_fft)) ** 2
        freqs = np.fft.rfftfreq(n_fft, du)
    else:
        freqs = np.linspace(1.0 / (u[-1] - u[0]), 0.5 / du, 8 * n)
        from scipy.signal import lombscargle
        power = lombscargle(u, y - y.mean(), 2 * np.pi * freqs)
    k = int(np.argmax(power[1:])) + 1
    if 0 < k < len(power) - 1:
        a, b, c = np.log(power[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
        f = freqs[k] + shift * (freqs[1] - freqs[0])
    else:
        f = freqs[k]
    floor = float(np.median(power[1:])) + 1e-300
    return float(f), float(power[k] / floor)


def fit_damped_sinusoid(t, y, min_peak_ratio: float = 10.0) -> FitResult:
    """Fit ``amplitude * exp(-t/tau) * cos(2 pi freq t + phase) + offset``.

    The frequency starts at the periodogram peak; amplitude, phase and
    offset for each of a few trial decay times come from linear least
    squares, and the best trial seeds the nonlinear fit.
    """
    t, y = _prepare(t, y, 8)
    keys = ("amplitude", "tau", "freq", "phase", "offset")
    nan = {k: math.nan for k in keys}
    if _flat(y):
        return FitResult(dict(nan, amplitude=0.0, offset=float(y[0])), dict(nan), 0.0,
                         True, 0, ("unidentifiable",))
    t0, span = t[0], t[-1] - t[0]
    u = (t - t0) / span
    f0, ratio = _periodogram_peak(u, y)
    # a peak below one cycle per record is the decay envelope, not an oscillation
    if ratio < min_peak_ratio or f0 < 1.0:
        return FitResult(nan, dict(nan), math.nan, False, 0, ("no_spectral_peak",))

    def model(p):
        a, k, f, ph, c = p
        return a * np.exp(-k * u) * np.cos(2 * np.pi * f * u + ph) + c

    def jac(p):
        a, k, f, ph, c = p
        e = np.exp(-k * u)
        arg = 2 * np.pi * f * u + ph
        cs, sn = np.cos(arg), np.sin(arg)
        return np.column_stack([e * cs, -a * u * e * cs, -a * e * sn * 2 * np.pi * u,
                                -a * e * sn, np.ones_like(u)])

    best = None
    for k in (0.1, 0.5, 1.0, 2.0, 5.0):
        e = np.exp(-k * u)
        design = np.column_stack([e * np.cos(2 * np.pi * f0 * u), e * np.sin(2 * np.pi * f0 * u),
                                  np.ones_like(u)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        cost = float(np.sum((design @ coef - y) ** 2))
        if best is None or cost < best[0]:
            best = (cost, k, coef)
    _, k, (ac, asn, c) = best
    p0 = [math.hypot(ac, asn), k, f0, math.atan2(-asn, ac), c]
    sol, err, grad = _lm(lambda p: model(p) - y, jac, p0, len(y))
    a, k, f, ph, c = sol.x
    if a < 0:
        a, ph = -a, ph + math.pi
    # express phase at the caller's t = 0 and amplitude likewise
    ph_t0 = math.remainder(ph - 2 * math.pi * f * t0 / span, 2 * math.pi)
    scale = math.exp(k * t0 / span)
    flags = []
    if not k > 0:
        flags.append("tau_unidentifiable")
    params = {"amplitude": float(a * scale), "tau": float(span / k) if k > 0 else math.nan,
              "freq": float(f / span), "phase": float(ph_t0), "offset": float(c)}
    errors = {"amplitude": float(err[0] * scale),
              "tau": float(span * err[1] / k ** 2) if k > 0 else math.nan,
              "freq": float(err[2] / span), "phase": float(err[3]), "offset": float(err[4])}
    return FitResult(params, errors, float(np.sqrt(np.mean(sol.fun ** 2))), bool(sol.status > 0),
                     int(sol.nfev), tuple(flags), grad)


# --- spectroscopy -------------------------------------------------------------------

def fit_parabola_spectrum(n_g, f, fit_offset: bool = False) -> FitResult:
    """Fit ``f = sqrt((4 e_c (1 - n_g - offset))^2 + e_j^2)`` to peak positions.

    ``offset`` follows the branch convention: the curve is the symmetric
    parabola evaluated at ``n_g + offset``.

    Energies in GHz. The initial guess is the linear least-squares solution
    for f^2, which is linear in (16 e_c^2, e_j^2).
    """
    n_g, f = _prepare(n_g, f, 5)
    dn = 1.0 - n_g
    if np.ptp(n_g) < 1e-9:
        return FitResult({"e_c": math.nan, "e_j": float(np.mean(f))},
                         {"e_c": math.nan, "e_j": float(np.std(f))}, math.nan, False, 0,
                         ("e_c_unidentifiable",))
    if fit_offset:
        # f^2 = a dn^2 - 2 a o dn + (a o^2 + e_j^2)
        q = np.polyfit(dn, f ** 2, 2)
        a = max(q[0], 1e-12)
        off = -q[1] / (2 * a)
        p0 = [math.sqrt(a) / 4, math.sqrt(max(q[2] - a * off ** 2, 1e-12)), off]
    else:
        design = np.column_stack([dn ** 2, np.ones_like(dn)])
        (a, b), *_ = np.linalg.lstsq(design, f ** 2, rcond=None)
        p0 = [math.sqrt(max(a, 1e-12)) / 4, math.sqrt(max(b, 1e-12))]

    def model(p):
        d = dn - (p[2] if fit_offset else 0.0)
        return np.hypot(4 * p[0] * d, p[1])

    def jac(p):
        d = dn - (p[2] if fit_offset else 0.0)
        m = np.hypot(4 * p[0] * d, p[1])
        cols = [16 * p[0] * d ** 2 / m, p[1] / m]
        if fit_offset:
            cols.append(-16 * p[0] ** 2 * d / m)
        return np.column_stack(cols)

    sol, err, grad = _lm(lambda p: model(p) - f, jac, p0, len(f))
    names = ("e_c", "e_j", "offset")[:len(p0)]
    params = {k: float(abs(v)) if k != "offset" else float(v) for k, v in zip(names, sol.x)}
    return FitResult(params, {k: float(v) for k, v in zip(names, err)},
                     float(np.sqrt(np.mean(sol.fun ** 2))), bool(sol.status > 0), int(sol.nfev),
                     (), grad)


def parabola_jacobian(n_g, e_c, e_j) -> np.ndarray:
    """Model Jacobian columns d f / d(e_c, e_j) for optimality checks."""
    dn = 1.0 - np.asarray(n_g, dtype=float)
    m = np.hypot(4 * e_c * dn, e_j)
    return np.column_stack([16 * e_c * dn ** 2 / m, e_j / m])


def peak_positions(n_g, f, pe_map, min_height: float = 0.0):
    """Per gate-charge column, the pump frequency of maximum P_e.

    The maximum is refined by a three-point parabola; columns whose peak is
    not above ``min_height`` are skipped. Returns arrays (n_g, f_peak).
    """
    n_g = np.asarray(n_g, dtype=float)
    f = np.asarray(f, dtype=float)
    pe_map = np.asarray(pe_map, dtype=float)
    if pe_map.shape != (len(f), len(n_g)):
        raise ValueError("pe_map must have shape (len(f), len(n_g))")
    xs, ys = [], []
    df = f[1] - f[0]
    for j in range(len(n_g)):
        col = pe_map[:, j]
        k = int(np.argmax(col))
        if col[k] <= min_height:
            continue
        peak = f[k]
        if 0 < k < len(f) - 1:
            a, b, c = col[k - 1:k + 2]
            denom = a - 2 * b + c
            if denom < 0:
                peak += 0.5 * (a - c) / denom * df
        xs.append(n_g[j])
        ys.append(peak)
    return np.asarray(xs), np.asarray(ys)


def spectral_ridge(f, pe_map, threshold: float) -> np.ndarray:
    """Boolean mask of pixels that are local maxima along f and above ``threshold``."""
    pe_map = np.asarray(pe_map, dtype=float)
    ridge = np.zeros(pe_map.shape, dtype=bool)
    mid = pe_map[1:-1]
    ridge[1:-1] = (mid >= pe_map[:-2]) & (mid > pe_map[2:]) & (mid > threshold)
    return ridge


def count_spectral_minima(n_g, f, pe_map, threshold: float, max_jump: float = 0.01) -> int:
    """Number of distinct parabola minima in a spectroscopy map.

    A ridge pixel is a minimum candidate when both neighbouring gate-charge
    columns carry ridge pixels within ``max_jump`` (GHz) and none of them
    lies lower in frequency. Steep arms fail the first test and crossings
    the second; connected candidates (flat bottoms) count once.
    """
    from scipy import ndimage
    f = np.asarray(f, dtype=float)
    pe_map = np.asarray(pe_map, dtype=float)
    if pe_map.shape != (len(f), len(n_g)):
        raise ValueError("pe_map must have shape (len(f), len(n_g))")
    if np.any(np.diff(f) <= 0):
        raise ValueError("f must be strictly increasing")
    ridge = spectral_ridge(f, pe_map, threshold)
    rows = [np.flatnonzero(ridge[:, j]) for j in range(ridge.shape[1])]
    cand = np.zeros_like(ridge)
    for j in range(1, ridge.shape[1] - 1):
        for i in rows[j]:
            ok = True
            for c in (j - 1, j + 1):
                near = rows[c][np.abs(f[rows[c]] - f[i]) <= max_jump]
                if len(near) == 0 or f[near].min() < f[i]:
                    ok = False
                    break
            cand[i, j] = ok
    _, n = ndimage.label(cand, structure=np.ones((3, 3)))
    return int(n)


def fit_lorentzian(f, y) -> FitResult:
    """Fit ``amplitude / (1 + ((f - center) / hwhm)^2) + offset``."""
    f, y = _prepare(f, y, 5)
    f0, span = f[0], f[-1] - f[0]
    u = (f - f0) / span
    k = int(np.argmax(y))
    c0 = float(np.min(y))
    half = c0 + 0.5 * (y[k] - c0)
    width = float(np.sum(y > half)) * np.median(np.diff(u)) / 2
    p0 = [y[k] - c0, u[k], max(width, 1e-3), c0]

    def model(p):
        return p[0] / (1 + ((u - p[1]) / p[2]) ** 2) + p[3]

    def jac(p):
        x = (u - p[1]) / p[2]
        d = 1 + x * x
        return np.column_stack([1 / d, 2 * p[0] * x / (p[2] * d * d),
                                2 * p[0] * x * x / (p[2] * d * d), np.ones_like(u)])

    sol, err, grad = _lm(lambda p: model(p) - y, jac, p0, len(y))
    a, c, w, off = sol.x
    params = {"amplitude": float(a), "center": float(f0 + c * span), "hwhm": float(abs(w) * span),
              "offset": float(off)}
    errors = {"amplitude": float(err[0]), "center": float(err[1] * span),
              "hwhm": float(err[2] * span), "offset": float(err[3])}
    return FitResult(params, errors, float(np.sqrt(np.mean(sol.fun ** 2))), bool(sol.status > 0),
                     int(sol.nfev), (), grad)


def linewidth_t2(f, pe, max_saturation: float = 0.1) -> FitResult:
    """Dephasing time from a weak-drive spectral line, T2 = 1 / (2 pi HWHM).

    ``f`` in Hz. The steady-state peak P_e = s / (2 (1 + s)) gives the
    saturation parameter s; above ``max_saturation`` the line is power
    broadened by sqrt(1 + s) and the result is flagged.
    """
    fit = fit_lorentzian(f, pe)
    peak = fit["amplitude"]
    sat = 2 * peak / (1 - 2 * peak) if peak < 0.5 else math.inf
    t2 = 1.0 / (2 * math.pi * fit["hwhm"])
    flags = []
    params = {"t2_star": t2, "hwhm": fit["hwhm"], "saturation": sat,
              "broadening": math.sqrt(1 + sat)}
    if sat > max_saturation:
        flags.append("saturation_broadened")
    errors = {"t2_star": t2 * fit.std_errors["hwhm"] / fit["hwhm"], "hwhm": fit.std_errors["hwhm"]}
    return FitResult(params, errors, fit.residual_rms, fit.converged, fit.iterations,
                     tuple(flags), fit.gradient_norm)


# --- Rabi ---------------------------------------------------------------------------

def rabi_coupling(amplitudes, f_rabi) -> dict:
    """Zero-intercept slope of Rabi frequency (MHz) against drive amplitude (uV).

    Returns coupling in MHz/uV and its reciprocal, the decoupling in uV/MHz.
    """
    x = np.asarray(amplitudes, dtype=float)
    y = np.asarray(f_rabi, dtype=float)
    if len(x) < 3 or x.shape != y.shape:
        raise ValueError("need at least 3 (amplitude, f_rabi) pairs")
    order = np.argsort(x, kind="stable")
    slope = float(x @ y / (x @ x))
    resid = y - slope * x
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) @ (y - y.mean())) or math.inf)
    flags = []
    if np.any(np.diff(y[order]) <= 0):
        flags.append("non_monotone")
    return {"coupling": slope, "decoupling": 1.0 / slope if slope else math.inf,
            "r_squared": r2, "flags": tuple(flags)}


def pi_half_time(f_rabi: float) -> float:
    """Quarter Rabi period in ns for ``f_rabi`` in MHz."""
    return 1e3 / (4 * f_rabi)


# --- readout maps -------------------------------------------------------------

def phase_to_pe(phase, phase_ground: float, phase_excited: float):
    """Linear map from demodulated phase to P_e using the two state phases."""
    return (np.asarray(phase) - phase_ground) / (phase_excited - phase_ground)


def quadrature_to_pe(iq, s_ground: complex, s_excited: complex):
    """Project complex transmission onto the ground-excited axis."""
    axis = s_excited - s_ground
    return np.real((np.asarray(iq) - s_ground) * np.conj(axis)) / abs(axis) ** 2


# --- noise bounds -------------------------------------------------------------

def noise_bounds(t1: float, t2_star: float, e_c: float, sens2: float,
                 n_realizations: int = 2000, seed: int = 0,
                 bracket=(1e-12, 1e-1), template: Optional[_noise.NoisePsd] = None) -> dict:
    """Charge-noise bounds implied by T1 and a sweet-spot T2*.

    ``sq_high`` (e^2/Hz at the qubit frequency) follows from T1. ``sq_1hz``
    is the 1/f amplitude whose Monte Carlo free-induction decay, coupled
    only through ``sens2`` (GHz per n_g^2), reaches 1/e at ``t2_star``.
    Bisection runs in log amplitude over ``bracket``.
    """
    if not (t1 > 0 and t2_star > 0 and e_c > 0 and sens2 > 0):
        raise ValueError("inputs must be positive")
    template = template or _noise.NoisePsd(1.0)
    taus = np.linspace(0.0, 4 * t2_star, 161)
    i1, i2 = _noise.mc_phase_integrals(template, taus, n_realizations, seed)

    def excess(log_amp):
        coh = _noise.coherence_from_integrals(i1, i2, 0.0, sens2, 10 ** log_amp / template.amplitude_1hz)
        below = np.nonzero(coh < math.exp(-1))[0]
        if len(below) == 0:
            return 1.0
        return math.log(_noise.one_over_e_time(taus, coh) / t2_star)

    lo, hi = (math.log10(b) for b in bracket)
    if not (excess(lo) > 0 > excess(hi)):
        raise RuntimeError("sq_1hz bisection bracket does not straddle the target T2*")
    log_amp = optimize.bisect(excess, lo, hi, xtol=1e-6)
    return {"sq_high": _noise.t1_to_sq(e_c, t1), "sq_1hz": 10 ** log_amp}


# --- correlation --------------------------------------------------------------

def correlate(freq_a, values_a, freq_b, values_b, max_gap: float = 0.1) -> float:
    """Spearman rank correlation after a nearest-frequency join.

    Each point of series a is paired with the closest frequency of series b
    if it lies within ``max_gap`` (same units as the frequencies).
    """
    fa, va = np.asarray(freq_a, dtype=float), np.asarray(values_a, dtype=float)
    fb, vb = np.asarray(freq_b, dtype=float), np.asarray(values_b, dtype=float)
    if len(fb) == 0:
        raise ValueError("series b is empty")
    j = np.abs(fa[:, None] - fb[None, :]).argmin(axis=1)
    keep = np.abs(fa - fb[j]) <= max_gap
    if keep.sum() < 4:
        raise ValueError(f"only {int(keep.sum())} points joined; need at least 4")
    return float(stats.spearmanr(va[keep], vb[j[keep]]).statistic)
