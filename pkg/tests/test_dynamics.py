import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpbvlab import analysis, dynamics, noise, qubit
from cpbvlab.dynamics import (EXCITED, GROUND, BlochState, NoiseConfig, PulseSegment,
                              PulseSequence)


# --- pulse records -----------------------------------------------------------------

def test_segment_validation():
    with pytest.raises(ValueError):
        PulseSegment(-1.0)
    with pytest.raises(ValueError):
        PulseSegment(10.0, 5.0, edge=-1)
    with pytest.raises(ValueError, match="half"):
        PulseSegment(5.0, 5.0, edge=3.0)


def test_pulse_duration_for_angle():
    # pi/2 at 9.6 MHz: 1e3 / (4 * 9.6) ns of envelope area plus two 3 ns edges
    assert dynamics.pulse_duration_for_angle(math.pi / 2, 9.6) == pytest.approx(1e3 / 38.4 + 6)
    seg = dynamics.rotation(-math.pi / 2, 9.6, phase=0.2)
    assert seg.phase == pytest.approx(0.2 + math.pi)
    assert seg.area == pytest.approx(1e3 / 38.4)


def test_repetition_delay_check():
    seq = PulseSequence([dynamics.delay(10)], repetition_delay=0.2)
    seq.check_repetition(16e-6)
    with pytest.raises(ValueError, match="5 T1"):
        seq.check_repetition(61e-6)


def test_bloch_state_length():
    with pytest.raises(ValueError):
        BlochState(1.0, 0.0, 0.5)
    assert EXCITED.p_excited == 1.0
    assert GROUND.p_excited == 0.0


@pytest.mark.parametrize("dt", [0.0, 1.5, 1.01])
def test_step_size_bounds(dt):
    with pytest.raises(ValueError):
        dynamics.evolve(PulseSequence([dynamics.delay(10)]), dt=dt)


def test_step_must_resolve_edges():
    seq = PulseSequence([PulseSegment(20.0, 5.0, edge=1.5)])
    with pytest.raises(ValueError, match="edge"):
        dynamics.evolve(seq, dt=0.75)
    dynamics.evolve(seq, dt=0.5)


# --- basic evolution ---------------------------------------------------------------

@pytest.mark.parametrize("rabi", [1.0, 5.0, 9.6])
def test_square_pi_pulse_flips(rabi):
    seq = PulseSequence([PulseSegment(1e3 / (2 * rabi), rabi, 0.0, 0.0, 0.0)])
    assert dynamics.evolve(seq).final.z == pytest.approx(-1.0, abs=1e-3)


def test_shaped_pi_pulse_flips():
    seq = PulseSequence([dynamics.rotation(math.pi, 9.6)])
    assert dynamics.evolve(seq).final.z == pytest.approx(-1.0, abs=1e-3)


def test_pi_half_pulse_about_y_points_along_x():
    seq = PulseSequence([dynamics.rotation(math.pi / 2, 9.6, phase=math.pi / 2)])
    fin = dynamics.evolve(seq).final
    assert abs(fin.z) < 1e-3 and abs(abs(fin.x) - 1) < 1e-3


def test_free_relaxation():
    t1 = 2e-6
    traj = dynamics.evolve(PulseSequence([dynamics.delay(5000.0)]), t1=t1, dt=1.0, initial=EXCITED)
    expected = 1 - 2 * np.exp(-traj.t * 1e-9 / t1)
    np.testing.assert_allclose(traj.r[:, 2], expected, atol=1e-4)


def test_norm_conserved_without_dissipation():
    seq = PulseSequence([PulseSegment(10_000.0, 5.0, 0.3, 1.7, 3.0)])
    traj = dynamics.evolve(seq)
    assert np.max(np.abs(traj.norm - 1.0)) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 20.0), st.floats(-10.0, 10.0), st.floats(1e-7, 1e-4))
def test_norm_never_grows(rabi, det, t1):
    seq = PulseSequence([PulseSegment(400.0, rabi, 0.0, det, 3.0), dynamics.delay(200.0, det)])
    traj = dynamics.evolve(seq, t1=t1, initial=BlochState(0.6, 0.0, 0.8))
    assert np.max(traj.norm) <= 1 + 1e-9


def _calibrated(name, t2_star=500e-9, n_shots=200):
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    nc = NoiseConfig.for_device(noise.get_preset(name), cpb, 0.9, n_shots=n_shots)
    psd = noise.calibrate_psd(nc.psd, nc.sens1, t2_star, "fid", t1=61e-6, f_max=1.25e8)
    return NoiseConfig(psd, nc.sens1, nc.sens2, n_shots)


@pytest.mark.parametrize("name", ["white", "device1-1f", "device1-1f-cutoff200k"])
@pytest.mark.parametrize("make", [lambda t: dynamics.ramsey_sequence(t, 10.6, 9.6),
                                  lambda t: dynamics.echo_sequence(t, 9.6)],
                         ids=["ramsey", "echo"])
def test_halving_dt_converges(name, make):
    nc = _calibrated(name)
    for k, tau in enumerate((100.0, 700.0, 1500.0)):
        seq = make(tau)
        traces = noise.realizations(nc.psd, 100, int(seq.duration / 4) + 2, 4e-9, [9, k])
        pe = [0.5 * (1 - dynamics.evolve_final(seq, 61e-6, traces, 4.0, nc.sens1, nc.sens2,
                                                dt)[:, 2].mean()) for dt in (0.25, 0.125)]
        assert abs(pe[0] - pe[1]) < 1e-4


def test_noise_trace_must_cover_sequence():
    trace = noise.synth_trace(noise.NoisePsd(1e-4), 64e-9, 4e-9, 1)
    with pytest.raises(ValueError, match="shorter"):
        dynamics.evolve(PulseSequence([dynamics.delay(100.0)]), noise=trace, sens1=1.0)


def test_evolve_final_matches_evolve():
    seq = dynamics.echo_sequence(400.0, 9.6)
    traces = noise.realizations(noise.NoisePsd(1e-5), 3, 160, 4e-9, 2)
    batch = dynamics.evolve_final(seq, 61e-6, traces, 4.0, 1.0, 50.0)
    for row, x in zip(batch, traces):
        one = dynamics.evolve(seq, 61e-6, noise.NoiseTrace(x, 4e-9), 1.0, 50.0).final
        np.testing.assert_allclose(row, one.as_array(), rtol=0, atol=1e-14)


# --- Rabi -----------------------------------------------------------------------------

def _rabi_freq(coupling, amp, stop=2000.0, n=401):
    durations = np.linspace(0, stop, n)
    curve = dynamics.rabi_experiment(coupling, amp, durations, dt=0.5)
    return analysis.fit_damped_sinusoid(durations * 1e-9, curve.pe)["freq"] * 1e-6


def test_rabi_frequency_from_coupling():
    assert _rabi_freq(0.13, 10.0) == pytest.approx(1.3, rel=0.02)


def test_rabi_zero_amplitude_flat():
    curve = dynamics.rabi_experiment(0.13, 0.0, np.linspace(0, 500, 26))
    assert np.max(np.abs(curve.pe)) < 1e-12


def test_rabi_linear_in_amplitude():
    amps = np.array([1.0, 2.5, 5.0, 7.5, 10.0])
    rates = np.array([_rabi_freq(0.53, a, stop=4000.0 / a, n=401) for a in amps])
    rc = analysis.rabi_coupling(amps, rates)
    assert rc["r_squared"] > 0.9999
    assert rc["coupling"] == pytest.approx(0.53, rel=1e-3)


def test_pi_half_calibration():
    # Rabi oscillation at 9.6 MHz reaches P_e = 1/2 after a quarter period
    f = _rabi_freq(1.0, 9.6, stop=500.0, n=501)
    assert analysis.pi_half_time(f) == pytest.approx(26.0, abs=0.5)
    curve = dynamics.rabi_experiment(1.0, 9.6, [analysis.pi_half_time(f)], dt=0.125)
    assert curve.pe[0] == pytest.approx(0.5, abs=1e-3)


# --- Ramsey ----------------------------------------------------------------------------

@settings(max_examples=8, deadline=None)
@given(st.floats(1.0, 20.0))
def test_ramsey_frequency_matches_detuning(delta):
    period = 1e3 / delta
    taus = np.linspace(0, 4 * period, 129)
    curve = dynamics.ramsey_experiment(delta, taus, dt=0.5)
    fit = analysis.fit_damped_sinusoid(taus * 1e-9, curve.pe)
    assert fit["freq"] * 1e-6 == pytest.approx(delta, rel=5e-3)


def test_ramsey_noiseless_is_undamped():
    taus = np.linspace(0, 2000, 201)
    curve = dynamics.ramsey_experiment(10.6, taus, dt=0.5)
    fit = analysis.fit_damped_sinusoid(taus * 1e-9, curve.pe)
    # detuned pulses cost some contrast, but the envelope stays flat
    assert fit["tau"] > 1.0 or "tau_unidentifiable" in fit.flags


def test_ramsey_relaxation_envelope_is_2t1():
    t1 = 1e-6
    taus = np.linspace(0, 4000, 321)
    curve = dynamics.ramsey_experiment(5.0, taus, t1=t1, dt=0.5)
    fit = analysis.fit_damped_sinusoid(taus * 1e-9, curve.pe)
    assert fit["tau"] == pytest.approx(2 * t1, rel=0.01)


def test_ramsey_deterministic_with_noise():
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    nc = NoiseConfig.for_device(noise.NoisePsd(1e-4), cpb, 0.9, n_shots=50)
    taus = np.linspace(0, 400, 5)
    a = dynamics.ramsey_experiment(10.6, taus, noise=nc, seed=4, dt=0.5)
    b = dynamics.ramsey_experiment(10.6, taus, noise=nc, seed=4, dt=0.5)
    c = dynamics.ramsey_experiment(10.6, taus, noise=nc, seed=5, dt=0.5)
    np.testing.assert_array_equal(a.pe, b.pe)
    assert not np.array_equal(a.pe, c.pe)


def test_noise_config_sensitivities():
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    nc = NoiseConfig.for_device(noise.NoisePsd(1e-6), cpb, 0.9)
    h = 1e-4
    f = lambda x: qubit.transition_frequency(cpb, x)
    assert nc.sens1 == pytest.approx((f(0.9 + h) - f(0.9 - h)) / (2 * h), rel=1e-6)
    assert nc.sens2 == pytest.approx((f(0.9 + h) - 2 * f(0.9) + f(0.9 - h)) / h**2, rel=1e-4)
    sweet = NoiseConfig.for_device(noise.NoisePsd(1e-6), cpb, 1.0)
    assert sweet.sens1 == 0.0 and sweet.sens2 == pytest.approx(138.4, abs=0.05)


def test_noise_config_rejects_coarse_sampling():
    with pytest.raises(ValueError, match="cutoff"):
        NoiseConfig(noise.NoisePsd(1e-6, soft_cutoff=1e7), noise_dt=10.0)


# --- echo ------------------------------------------------------------------------------

def test_echo_noiseless_returns_to_ground():
    curve = dynamics.echo_experiment(np.linspace(0, 4000, 9), dt=0.5)
    assert np.max(curve.pe) < 1e-6


def _one_over_e(taus_ns, pe):
    return noise.one_over_e_time(taus_ns * 1e-9, 1 - 2 * pe)


def test_echo_filter_function_in_target_band():
    nc = _calibrated("device1-1f-cutoff200k")
    t_echo = noise.decay_time(nc.psd, nc.sens1, "echo", t1=61e-6, f_max=1.25e8)
    assert 2.4e-6 <= t_echo <= 3.3e-6


@pytest.mark.slow
def test_echo_dynamics_match_filter_function():
    # short hard pulses, so the sequence is close to the ideal-pulse filter
    nc = _calibrated("device1-1f-cutoff200k", n_shots=600)
    t_echo = noise.decay_time(nc.psd, nc.sens1, "echo", t1=61e-6, f_max=1.25e8)
    taus = np.linspace(1600, 3200, 9)
    curve = dynamics.echo_experiment(taus, 50.0, 61e-6, nc, seed=1, edge=0.75, dt=0.25)
    t_dyn = _one_over_e(np.concatenate([[0.0], taus]), np.concatenate([[0.0], curve.pe]))
    assert t_dyn == pytest.approx(t_echo, rel=0.05)


@pytest.mark.slow
def test_echo_to_ramsey_ratio_wideband():
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    nc = NoiseConfig.for_device(noise.get_preset("device1-1f"), cpb, 0.9, n_shots=300)
    psd = noise.calibrate_psd(nc.psd, nc.sens1, 500e-9, "fid", f_max=1.25e8)
    nc = NoiseConfig(psd, nc.sens1, 0.0, 300)
    taus_r = np.linspace(0, 1500, 31)
    ramsey = dynamics.ramsey_experiment(0.0, taus_r, 9.6, None, nc, seed=2, dt=0.5)
    # zero detuning: P_e = (1 - C) / 2 after two x pulses is (1 + C) / 2
    t2 = noise.one_over_e_time(taus_r * 1e-9, 2 * ramsey.pe - 1)
    taus_e = np.linspace(0, 4000, 41)
    echo = dynamics.echo_experiment(taus_e, 9.6, None, nc, seed=3, dt=0.5)
    assert _one_over_e(taus_e, echo.pe) / t2 == pytest.approx(4.5, rel=0.15)


# --- T1 and spectroscopy ----------------------------------------------------------------

def test_t1_experiment_saturated_decay():
    times = np.linspace(0, 300e3, 61)
    curve = dynamics.t1_experiment(61e-6, times)
    assert curve.pe[0] == pytest.approx(0.5)
    np.testing.assert_allclose(curve.pe, 0.5 * np.exp(-times * 1e-9 / 61e-6), atol=1e-9)


def test_t1_experiment_rejects_unsorted_times():
    with pytest.raises(ValueError):
        dynamics.t1_experiment(61e-6, [10.0, 5.0])


def test_saturation_limit():
    assert dynamics.saturation_pe(0.0, 50.0, 61e-6, 60e-9) == pytest.approx(0.5, abs=1e-5)


def test_weak_drive_half_width():
    t2 = 60e-9
    peak = dynamics.saturation_pe(0.0, 0.001, 61e-6, t2)
    hwhm = 1 / (2 * math.pi * t2)
    assert hwhm == pytest.approx(2.653e6, rel=1e-3)
    half = dynamics.saturation_pe(hwhm, 0.001, 61e-6, t2)
    assert half / peak == pytest.approx(0.5, rel=1e-3)


def test_cw_map_peaks_on_parabola():
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    n_g = np.linspace(0.95, 1.05, 11)
    f = np.arange(4.48, 5.3, 0.0005)
    pe = dynamics.cw_spectroscopy(cpb, n_g, f, 0.05, 61e-6, 60e-9)
    assert pe.shape == (len(f), len(n_g))
    peaks = f[np.argmax(pe, axis=0)]
    np.testing.assert_allclose(peaks, qubit.transition_frequency(cpb, n_g), atol=0.00026)


def test_cw_defect_branches_weighted():
    model = qubit.DefectSpectrumModel(4.3, ((4.0, 0.0, 1.0), (5.0, 0.0, 0.5)))
    pe = dynamics.cw_spectroscopy(model, [1.0], [4.0, 5.0], 0.01, 16e-6, 60e-9)
    assert pe[1, 0] / pe[0, 0] == pytest.approx(0.5, rel=1e-4)
    assert pe.max() <= 0.5


def test_cw_rejects_empty_grid():
    with pytest.raises(ValueError):
        dynamics.cw_spectroscopy(qubit.CpbParams(6.24, 19.0, 4.5), [], [4.5], 1.0, 1e-5, 6e-8)
