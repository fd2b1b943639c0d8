"""Experiment pipelines: simulate, read out, demodulate, fit, persist.

Each runner turns an :class:`ExperimentConfig` into a data table (a dict of
equal-length columns), a fit summary and a :class:`ResultRecord` written
next to the CSV. Qubit populations always pass through the heterodyne
chain before fitting, as they would in the laboratory.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, analysis, dynamics, noise, qubit, readout
from .config import ConfigError, ExperimentConfig, parse_grid, parse_quantity
from .registry import Device, get_device


class NumericalError(RuntimeError):
    """A simulation or fit failed to produce a usable result."""


@dataclass
class ResultRecord:
    config_hash: str
    kind: str
    device: str
    seed: int
    data_path: str
    data_hash: str
    fit: dict
    code_version: str = __version__
    figures: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x)}")


@dataclass
class RunOutput:
    """In-memory result of a pipeline before persistence."""

    table: dict
    fit: dict
    extra_tables: dict = field(default_factory=dict)


def table_csv(table: dict) -> str:
    cols = list(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*(np.asarray(table[c]) for c in cols)):
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# --- readout chain --------------------------------------------------------------

def readout_config(device: Device, params: dict) -> readout.ReadoutConfig:
    sigma = float(params.get("readout_noise", 0.002))
    return readout.ReadoutConfig(device.resonator.f_r, noise_sigma=sigma,
                                 seed=int(params.get("readout_seed", 0)))


def readout_map(device: Device, cfg: readout.ReadoutConfig) -> str:
    """Phase readout when chi << kappa, in-phase projection otherwise."""
    return "phase" if abs(device.chi) < readout.linewidth(device.resonator) / 4 else "quadrature"


def measure_timeline(pe_samples, device: Device, cfg: readout.ReadoutConfig, seed: int):
    """Send a sampled P_e history through the heterodyne chain.

    Returns the bin centre times (s) and the P_e estimate per bin, using
    ground and excited calibration records demodulated the same way.
    """
    chi = device.chi
    res = device.resonator
    cfg = replace(cfg, seed=seed)
    demod = readout.demodulate(readout.synth_heterodyne(pe_samples, res, chi, cfg), cfg)
    n_cal = cfg.samples_per_bin * 20
    quiet = replace(cfg, noise_sigma=0.0)
    cal = [readout.demodulate(readout.synth_heterodyne(np.full(n_cal, p), res, chi, quiet), quiet)
           for p in (0.0, 1.0)]
    if readout_map(device, cfg) == "phase":
        pe = analysis.phase_to_pe(demod.phase, cal[0].phase.mean(), cal[1].phase.mean())
    else:
        pe = analysis.quadrature_to_pe(demod.iq, cal[0].iq.mean(), cal[1].iq.mean())
    return demod.t, pe


def measure_points(pe_values, device: Device, cfg: readout.ReadoutConfig, seed: int,
                   t1: Optional[float] = None):
    """Read out one bin per experiment repetition.

    Each value is probed right after its pulse sequence and relaxes with
    ``t1`` during the bin; all bins share one demodulation pass.
    """
    m = cfg.samples_per_bin
    t = np.arange(m) * cfg.sample_dt
    decay = np.exp(-t / t1) if t1 else np.ones(m)
    samples = np.concatenate([p * decay for p in np.asarray(pe_values, dtype=float)])
    return measure_timeline(samples, device, cfg, seed)[1]


# --- experiments ----------------------------------------------------------------

def _q(params, key, unit, default=None):
    if key not in params:
        if default is None:
            raise ConfigError(f"missing parameter {key!r}")
        return parse_quantity(default, unit)
    return parse_quantity(params[key], unit)


def _int(params, key, default):
    v = params.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer")
    return v


def _fit_dict(fit: analysis.FitResult) -> dict:
    return fit.to_dict()


def _require(fit: analysis.FitResult, what: str):
    if not fit.converged or any(f in fit.flags for f in ("no_spectral_peak", "unidentifiable")):
        raise NumericalError(f"{what} fit failed: flags={fit.flags}")


def _noise_for(device: Device, params: dict, t1: Optional[float],
               default_psd: str) -> Optional[dynamics.NoiseConfig]:
    """Noise configuration; with a target decay time the PSD level is calibrated."""
    name = params.get("psd", default_psd)
    if name in (None, "none"):
        return None
    try:
        psd = noise.get_preset(name)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    n_g = float(params.get("n_g", device.n_g))
    cpb = device.cpb
    nc = dynamics.NoiseConfig.for_device(psd, cpb, n_g, n_shots=_int(params, "n_shots", 400),
                                         noise_dt=_q(params, "noise_dt", "ns", "4 ns"))
    if "t2_star" in params:
        if nc.sens1 == 0:
            raise ConfigError("calibrating to t2_star needs first-order coupling; set n_g != 1")
        target = _q(params, "t2_star", "s")
        f_max = 0.5 / (nc.noise_dt * 1e-9)
        psd = noise.calibrate_psd(psd, nc.sens1, target, "fid", t1=t1, f_max=f_max)
        nc = replace(nc, psd=psd)
    return nc


def run_t1(device: Device, params: dict, seed: int) -> RunOutput:
    t1 = _q(params, "t1", "s", f"{device.t1} s")
    cfg = readout_config(device, params)
    window = _q(params, "window", "s", f"{5 * t1} s")
    m = cfg.samples_per_bin
    n = -(-int(round(window / cfg.sample_dt)) // m) * m
    times_ns = np.arange(1, n + 1) * cfg.sample_dt * 1e9
    curve = dynamics.t1_experiment(t1, times_ns, dt=1.0)
    pe_samples = np.concatenate([[0.5], curve.pe[:-1]])
    t_bin, pe = measure_timeline(pe_samples, device, cfg, seed)
    fit = analysis.fit_exp_decay(t_bin, pe)
    _require(fit, "T1")
    return RunOutput({"t_s": t_bin, "pe": pe}, {"t1": fit["tau"], **_fit_dict(fit)})


def run_ramsey(device: Device, params: dict, seed: int) -> RunOutput:
    taus = parse_grid(params.get("taus", {"start": "0 ns", "stop": "2 us", "num": 161}), "ns")
    delta = _q(params, "detuning", "MHz", "10.6 MHz")
    rabi = _q(params, "rabi", "MHz", "9.6 MHz")
    t1 = _q(params, "t1", "s", f"{device.t1} s")
    params = dict(params)
    params.setdefault("n_g", 0.9)
    params.setdefault("t2_star", "500 ns")
    nc = _noise_for(device, params, t1, "white")
    curve = dynamics.ramsey_experiment(delta, taus, rabi, t1, nc, seed,
                                       dt=_q(params, "dt", "ns", "0.5 ns"))
    cfg = readout_config(device, params)
    pe = measure_points(curve.pe, device, cfg, seed, t1)
    fit = analysis.fit_damped_sinusoid(taus * 1e-9, pe)
    _require(fit, "Ramsey")
    return RunOutput({"tau_s": taus * 1e-9, "pe": pe, "pe_true": curve.pe},
                     {"t2_star": fit["tau"], "detuning_hz": fit["freq"], **_fit_dict(fit)})


def run_echo(device: Device, params: dict, seed: int) -> RunOutput:
    taus = parse_grid(params.get("taus", {"start": "0 us", "stop": "8 us", "num": 41}), "ns")
    rabi = _q(params, "rabi", "MHz", "9.6 MHz")
    t1 = _q(params, "t1", "s", f"{device.t1} s")
    params = dict(params)
    params.setdefault("n_g", 0.9)
    params.setdefault("t2_star", "500 ns")
    nc = _noise_for(device, params, t1, device.psd_preset)
    curve = dynamics.echo_experiment(taus, rabi, t1, nc, seed, dt=_q(params, "dt", "ns", "0.5 ns"))
    cfg = readout_config(device, params)
    pe = measure_points(curve.pe, device, cfg, seed, t1)
    fit = analysis.fit_exp_decay(taus * 1e-9, pe)
    _require(fit, "echo")
    # coherence is 1 - 2 P_e after the refocusing sequence
    try:
        t_echo = noise.one_over_e_time(taus * 1e-9, 1.0 - 2.0 * pe)
    except ValueError as exc:
        raise NumericalError(f"echo decay: {exc}") from None
    return RunOutput({"tau_s": taus * 1e-9, "pe": pe, "pe_true": curve.pe},
                     {"t_echo": t_echo, "t_echo_exp_fit": fit["tau"], **_fit_dict(fit)})


def run_rabi(device: Device, params: dict, seed: int) -> RunOutput:
    coupling = _q(params, "coupling", "MHz/uV", f"{device.drive_coupling} MHz/uV")
    # default drive levels give Rabi frequencies of 2 to 8 MHz
    default_amps = [f"{f / coupling:.6g} uV" for f in (2.0, 4.0, 6.0, 8.0)]
    amps = parse_grid(params.get("amplitudes", default_amps), "uV")
    durations = parse_grid(params.get("durations", {"start": "0 ns", "stop": "1 us", "num": 201}),
                           "ns")
    t1 = _q(params, "t1", "s", f"{device.t1} s")
    cfg = readout_config(device, params)
    cols = {"amplitude_uv": [], "duration_s": [], "pe": []}
    rates, fits = [], []
    for i, a in enumerate(amps):
        curve = dynamics.rabi_experiment(coupling, a, durations, t1, None, seed,
                                         dt=_q(params, "dt", "ns", "0.5 ns"))
        pe = measure_points(curve.pe, device, cfg, seed + i, t1)
        fit = analysis.fit_damped_sinusoid(durations * 1e-9, pe)
        _require(fit, f"Rabi at {a} uV")
        rates.append(fit["freq"] * 1e-6)
        fits.append(_fit_dict(fit))
        cols["amplitude_uv"].extend([a] * len(durations))
        cols["duration_s"].extend(durations * 1e-9)
        cols["pe"].extend(pe)
    if len(amps) >= 3:
        rc = analysis.rabi_coupling(amps, rates)
    else:
        rc = {"coupling": rates[0] / amps[0], "decoupling": amps[0] / rates[0], "flags": ()}
    return RunOutput({k: np.asarray(v) for k, v in cols.items()},
                     {"coupling_mhz_per_uv": rc["coupling"], "decoupling_uv_per_mhz": rc["decoupling"],
                      "f_rabi_mhz": rates, "pi_half_ns": [analysis.pi_half_time(r) for r in rates],
                      "flags": list(rc["flags"]), "fits": fits})


def run_spectroscopy(device: Device, params: dict, seed: int) -> RunOutput:
    ng_spec = params.get("n_g_range", [0.85, 1.15])
    n_ng = _int(params, "n_g_points", 151)
    n_g = np.linspace(float(ng_spec[0]), float(ng_spec[1]), n_ng)
    rabi = _q(params, "rabi", "MHz", "0.05 MHz")
    t1 = _q(params, "t1", "s", f"{device.t1} s")
    t2 = _q(params, "t2", "s", "60 ns")
    step = _q(params, "f_step", "GHz", "0.5 MHz")
    cpb = device.cpb
    f_top = float(np.max(qubit.transition_frequency(cpb, n_g)))
    f = np.arange(cpb.e_j - 0.02, f_top + 0.02, step)
    pe_map = dynamics.cw_spectroscopy(cpb, n_g, f, rabi, t1, t2)
    ng_pk, f_pk = analysis.peak_positions(n_g, f, pe_map, 0.1 * pe_map.max())
    fit = analysis.fit_parabola_spectrum(ng_pk, f_pk)
    out = {"e_c": fit["e_c"], "e_j": fit["e_j"], **_fit_dict(fit)}
    extra = {"map": {"n_g": np.repeat(n_g[None, :], len(f), 0).ravel(),
                     "f_ghz": np.repeat(f[:, None], len(n_g), 1).ravel(),
                     "pe": pe_map.ravel()}}
    model = device.defect_model()
    if model is not None:
        lo = min(b.e_j for b in model.branches) - 0.05
        hi = max(float(np.max(qubit.parabola(n_g + b.charge_offset, model.e_c, b.e_j)))
                 for b in model.branches)
        fd = np.arange(lo, min(hi, lo + 3.0), step)
        dmap = dynamics.cw_spectroscopy(model, n_g, fd, rabi, t1, t2)
        out["n_minima"] = analysis.count_spectral_minima(n_g, fd, dmap, 0.1 * dmap.max())
        out["branch_minima"] = [list(m) for m in qubit.branch_minima(model)]
        extra["defect_map"] = {"n_g": np.repeat(n_g[None, :], len(fd), 0).ravel(),
                               "f_ghz": np.repeat(fd[:, None], len(n_g), 1).ravel(),
                               "pe": dmap.ravel()}
    return RunOutput({"n_g": ng_pk, "f_ghz": f_pk}, out, extra)


RUNNERS = {"t1": run_t1, "ramsey": run_ramsey, "echo": run_echo, "rabi": run_rabi,
           "spectroscopy": run_spectroscopy}


# --- sweep ----------------------------------------------------------------------

def point_seed(master: int, coordinate: float) -> int:
    """Seed for one sweep point, a pure function of (master seed, coordinate)."""
    key = int(round(coordinate * 1e9))
    return int(np.random.SeedSequence([master, key & 0xFFFFFFFF, (key >> 32) & 0xFFFFFFFF])
               .generate_state(1)[0])


def sweep_point(device: Device, e_j: float, params: dict, seed: int) -> dict:
    """T1 and Rabi decoupling at one Josephson energy."""
    dev = device.at_ej(e_j)
    row = {"e_j_ghz": e_j, "f_q_ghz": dev.f_q, "t1_s": math.nan,
           "decoupling_uv_per_mhz": math.nan, "status": "ok"}
    if not dev.visible(dev.f_q):
        row["status"] = "masked"
        return row
    try:
        t1_out = run_t1(dev, {k: v for k, v in params.items() if k in ("readout_noise",)}, seed)
        rabi_params = {"durations": params.get("durations",
                                               {"start": "0 ns", "stop": "1 us", "num": 101})}
        if "amplitudes" in params:
            rabi_params["amplitudes"] = params["amplitudes"]
        rabi_out = run_rabi(dev, rabi_params, seed)
        row["t1_s"] = t1_out.fit["t1"]
        row["decoupling_uv_per_mhz"] = rabi_out.fit["decoupling_uv_per_mhz"]
    except (NumericalError, ValueError, RuntimeError) as exc:
        row["status"] = f"failed: {exc}"
    return row


def run_sweep(device: Device, params: dict, seed: int, workers: int = 1) -> RunOutput:
    axis = params.get("axis", "e_j")
    if axis != "e_j":
        raise ConfigError(f"unsupported sweep axis {axis!r}")
    points = parse_grid(params.get("values", {"start": "4 GHz", "stop": "8 GHz", "num": 9}), "GHz")
    if len(points) < 1:
        raise ConfigError("sweep needs at least one point")
    if np.any(points <= 0) or np.any(points > device.cpb.e_j_max):
        raise ConfigError(f"sweep values must lie in (0, {device.cpb.e_j_max:g}] GHz "
                          f"for {device.name}")
    if params.get("mask", True) is False:
        device = replace(device, visibility_mask=None)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {float(p): pool.submit(sweep_point, device, float(p), params,
                                         point_seed(seed, float(p))) for p in points}
        rows = {p: fut.result() for p, fut in futures.items()}
    ordered = [rows[p] for p in sorted(rows)]
    table = {k: np.asarray([r[k] for r in ordered]) for k in ordered[0]}
    good = [r for r in ordered if r["status"] == "ok"]
    fit = {"n_points": len(ordered), "n_ok": len(good),
           "n_masked": sum(r["status"] == "masked" for r in ordered)}
    if len(good) >= 4:
        fit["t1_decoupling_spearman"] = analysis.correlate(
            [r["f_q_ghz"] for r in good], [r["t1_s"] for r in good],
            [r["f_q_ghz"] for r in good], [r["decoupling_uv_per_mhz"] for r in good])
    return RunOutput(table, fit)


# --- entry points ---------------------------------------------------------------

def execute(config: ExperimentConfig, registry_path: Optional[str] = None,
            workers: int = 1) -> RunOutput:
    """Run the configured experiment without touching the file system."""
    device = get_device(config.device, registry_path)
    if config.kind == "sweep":
        return run_sweep(device, config.params, config.seed, workers)
    if "e_j" in config.params:
        # re-bias exactly as a sweep point does
        e_j = _q(config.params, "e_j", "GHz")
        if not 0 < e_j <= device.cpb.e_j_max:
            raise ConfigError(f"e_j must lie in (0, {device.cpb.e_j_max:g}] GHz")
        device = device.at_ej(e_j)
    return RUNNERS[config.kind](device, config.params, config.seed)


def run(config: ExperimentConfig, registry_path: Optional[str] = None, workers: int = 1,
        plot: bool = False) -> ResultRecord:
    """Execute ``config`` and write ``<kind>.csv``, ``<kind>.json`` into its output dir."""
    out_dir = Path(config.output)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from None
    result = execute(config, registry_path, workers)
    text = table_csv(result.table)
    data_path = out_dir / f"{config.kind}.csv"
    data_path.write_text(text)
    for name, tab in result.extra_tables.items():
        (out_dir / f"{config.kind}_{name}.csv").write_text(table_csv(tab))
    record = ResultRecord(config.hash(), config.kind, config.device, config.seed, data_path.name,
                          hashlib.sha256(text.encode()).hexdigest(), result.fit)
    if plot:
        from . import plotting
        record.figures = plotting.render(config.kind, result, out_dir)
    (out_dir / f"{config.kind}.json").write_text(record.to_json())
    (out_dir / "config.yaml").write_text(config.dump())
    return record
