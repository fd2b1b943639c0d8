import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpbvlab import analysis, dynamics, qubit
from cpbvlab.registry import get_device

T = np.linspace(0, 15e-6, 301)


# --- exponential decay --------------------------------------------------------------

def test_exp_exact_recovery():
    y = 0.45 * np.exp(-T / 3.3e-6) + 0.02
    fit = analysis.fit_exp_decay(T, y)
    assert fit.converged and not fit.flags
    assert fit["tau"] == pytest.approx(3.3e-6, rel=1e-6)
    assert fit["amplitude"] == pytest.approx(0.45, rel=1e-6)
    assert fit["offset"] == pytest.approx(0.02, abs=1e-9)


def test_exp_nonzero_start_reports_amplitude_at_origin():
    t = np.linspace(2e-6, 20e-6, 200)
    fit = analysis.fit_exp_decay(t, 0.3 * np.exp(-t / 5e-6))
    assert fit["amplitude"] == pytest.approx(0.3, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5e-6, 40e-6), st.floats(-1.0, 1.0).filter(lambda a: abs(a) > 0.05),
       st.floats(-0.5, 0.5))
def test_exp_recovery_property(tau, amp, off):
    t = np.linspace(0, 4 * tau, 120)
    fit = analysis.fit_exp_decay(t, amp * np.exp(-t / tau) + off)
    assert fit["tau"] == pytest.approx(tau, rel=1e-5)


def _crb_tau(t, amp, tau, sigma):
    """Cramer-Rao bound on tau for amp exp(-t/tau) + c with white noise."""
    e = np.exp(-t / tau)
    jac = np.column_stack([e, amp * t * e / tau ** 2, np.ones_like(t)])
    return sigma * math.sqrt(np.linalg.inv(jac.T @ jac)[1, 1])


def test_exp_noisy_rms_error():
    # readout-chain design: 500 ns bins over five decay times, 5% of amplitude noise
    t = np.arange(610) * 500e-9
    amp, sigma = 0.5, 0.025
    clean = amp * np.exp(-t / 61e-6)
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        errs.append(analysis.fit_exp_decay(t, clean + rng.normal(0, sigma, t.size))["tau"] / 61e-6 - 1)
    rms = math.sqrt(np.mean(np.square(errs)))
    assert rms < 0.03
    # efficient estimator: spread close to the bound (chi-square band for 100 draws)
    assert rms == pytest.approx(_crb_tau(t, amp, 61e-6, sigma) / 61e-6, rel=0.2)


def test_exp_flat_data_flagged():
    fit = analysis.fit_exp_decay(T, np.full(T.size, 0.2))
    assert "tau_unidentifiable" in fit.flags
    assert math.isnan(fit["tau"])


def test_exp_input_validation():
    with pytest.raises(ValueError):
        analysis.fit_exp_decay(T[:5], T[:5])
    with pytest.raises(ValueError):
        analysis.fit_exp_decay(T, np.where(T > 1e-6, np.nan, 0.0))


def test_fits_bit_identical():
    rng = np.random.default_rng(9)
    y = 0.5 * np.exp(-T / 3e-6) + rng.normal(0, 0.02, T.size)
    assert analysis.fit_exp_decay(T, y).to_json() == analysis.fit_exp_decay(T, y).to_json()
    ys = 0.5 * np.exp(-T / 3e-6) * np.cos(2 * np.pi * 2e6 * T) + rng.normal(0, 0.02, T.size)
    a = analysis.fit_damped_sinusoid(T, ys)
    b = analysis.fit_damped_sinusoid(T, ys)
    assert a.to_json() == b.to_json()


def test_std_error_scales_with_noise():
    rng = np.random.default_rng(4)
    noise = rng.normal(0, 1, T.size)
    clean = 0.5 * np.exp(-T / 3e-6)
    e1 = analysis.fit_exp_decay(T, clean + 0.01 * noise).std_errors["tau"]
    e2 = analysis.fit_exp_decay(T, clean + 0.02 * noise).std_errors["tau"]
    assert e2 / e1 == pytest.approx(2.0, rel=0.05)


# --- damped sinusoid ----------------------------------------------------------------

def _ramsey(t, tau=500e-9, freq=10.6e6, amp=0.5, phase=0.0, off=0.5):
    return amp * np.exp(-t / tau) * np.cos(2 * np.pi * freq * t + phase) + off


def test_sinusoid_exact_recovery():
    t = np.linspace(0, 2e-6, 401)
    fit = analysis.fit_damped_sinusoid(t, _ramsey(t, phase=0.4))
    assert fit.converged
    assert fit["tau"] == pytest.approx(500e-9, rel=1e-6)
    assert fit["freq"] == pytest.approx(10.6e6, rel=1e-6)
    assert fit["phase"] == pytest.approx(0.4, abs=1e-6)


def test_sinusoid_offset_start():
    t = np.linspace(100e-9, 2e-6, 381)
    fit = analysis.fit_damped_sinusoid(t, _ramsey(t, phase=-1.0))
    assert fit["amplitude"] == pytest.approx(0.5, rel=1e-6)
    assert fit["phase"] == pytest.approx(-1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(2e6, 20e6), st.floats(200e-9, 2e-6), st.floats(-3.0, 3.0))
def test_sinusoid_recovery_property(freq, tau, phase):
    t = np.linspace(0, 3e-6, 601)
    fit = analysis.fit_damped_sinusoid(t, _ramsey(t, tau, freq, phase=phase))
    assert fit["freq"] == pytest.approx(freq, rel=1e-5)
    assert fit["tau"] == pytest.approx(tau, rel=1e-4)


def test_sinusoid_nonuniform_sampling():
    t = np.sort(np.random.default_rng(2).uniform(0, 2e-6, 300))
    fit = analysis.fit_damped_sinusoid(t, _ramsey(t))
    assert fit["freq"] == pytest.approx(10.6e6, rel=1e-6)


def test_sinusoid_flat_and_noise_only():
    t = np.linspace(0, 2e-6, 200)
    assert "unidentifiable" in analysis.fit_damped_sinusoid(t, np.full(t.size, 0.5)).flags
    for y in (0.5 * np.exp(-t / 5e-7) + 0.5, np.random.default_rng(1).normal(0.5, 0.1, t.size)):
        fit = analysis.fit_damped_sinusoid(t, y)
        assert "no_spectral_peak" in fit.flags and not fit.converged


# --- spectroscopy -------------------------------------------------------------------

@pytest.mark.parametrize("e_c, e_j", [(6.24, 19.0), (4.3, 7.33), (6.24, 4.5)])
def test_parabola_exact(e_c, e_j):
    n_g = np.linspace(0.9, 1.1, 41)
    fit = analysis.fit_parabola_spectrum(n_g, qubit.parabola(n_g, e_c, e_j))
    assert fit["e_c"] == pytest.approx(e_c, rel=1e-9)
    assert fit["e_j"] == pytest.approx(e_j, rel=1e-9)
    assert fit["e_j"] == pytest.approx(float(np.min(qubit.parabola(n_g, e_c, e_j))), rel=1e-9)


def test_parabola_first_order_optimality():
    rng = np.random.default_rng(0)
    n_g = np.linspace(0.9, 1.1, 41)
    f = qubit.parabola(n_g, 6.24, 4.5) + rng.normal(0, 2e-3, n_g.size)
    fit = analysis.fit_parabola_spectrum(n_g, f)
    r = qubit.parabola(n_g, fit["e_c"], fit["e_j"]) - f
    grad = analysis.parabola_jacobian(n_g, fit["e_c"], fit["e_j"]).T @ r
    jac = analysis.parabola_jacobian(n_g, fit["e_c"], fit["e_j"])
    assert np.max(np.abs(grad)) < 1e-6 * np.linalg.norm(jac) * np.linalg.norm(r)


def test_parabola_offset():
    n_g = np.linspace(0.9, 1.12, 45)
    fit = analysis.fit_parabola_spectrum(n_g, qubit.parabola(n_g + 0.02, 4.3, 5.0), fit_offset=True)
    assert fit["offset"] == pytest.approx(0.02, abs=1e-8)
    assert fit["e_j"] == pytest.approx(5.0, rel=1e-8)


def test_parabola_degenerate_gate():
    fit = analysis.fit_parabola_spectrum(np.ones(8), np.full(8, 4.5))
    assert "e_c_unidentifiable" in fit.flags and not fit.converged


def test_peak_positions_follow_parabola():
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    n_g = np.linspace(0.95, 1.05, 21)
    f = np.arange(4.48, 5.9, 0.0005)
    pe = dynamics.cw_spectroscopy(cpb, n_g, f, 0.05, 61e-6, 60e-9)
    x, y = analysis.peak_positions(n_g, f, pe)
    np.testing.assert_allclose(y, qubit.transition_frequency(cpb, x), atol=5e-5)
    with pytest.raises(ValueError):
        analysis.peak_positions(n_g, f, pe.T)


def test_device2_defect_map_has_four_minima():
    model = get_device("device2").defect_model()
    n_g = np.linspace(0.85, 1.15, 151)
    lo = min(b.e_j for b in model.branches) - 0.05
    f = np.arange(lo, lo + 2.0, 0.0005)
    pe = dynamics.cw_spectroscopy(model, n_g, f, 0.05, 16e-6, 60e-9)
    assert analysis.count_spectral_minima(n_g, f, pe, 0.1 * pe.max()) == 4


def test_single_parabola_has_one_minimum():
    cpb = qubit.CpbParams(4.3, 7.33, 19.1).with_ej(5.0)
    n_g = np.linspace(0.85, 1.15, 151)
    f = np.arange(4.95, 7.0, 0.0005)
    pe = dynamics.cw_spectroscopy(cpb, n_g, f, 0.05, 16e-6, 60e-9)
    assert analysis.count_spectral_minima(n_g, f, pe, 0.1 * pe.max()) == 1


def test_count_minima_validation():
    with pytest.raises(ValueError):
        analysis.count_spectral_minima([1.0, 1.1], [5.0, 4.0], np.zeros((2, 2)), 0.1)


# --- Lorentzian line and T2 -----------------------------------------------------------

def test_lorentzian_exact():
    f = np.linspace(-10e6, 10e6, 401)
    y = 0.3 / (1 + ((f - 1e6) / 2.653e6) ** 2) + 0.01
    fit = analysis.fit_lorentzian(f, y)
    assert fit["hwhm"] == pytest.approx(2.653e6, rel=1e-8)
    assert fit["center"] == pytest.approx(1e6, rel=1e-8)


def test_linewidth_t2_weak_drive():
    f = np.linspace(-15e6, 15e6, 601)
    pe = dynamics.saturation_pe(f, 0.001, 61e-6, 60e-9)
    fit = analysis.linewidth_t2(f, pe)
    assert fit["hwhm"] == pytest.approx(2.653e6, rel=1e-3)
    assert fit["t2_star"] == pytest.approx(60e-9, rel=0.03)
    assert not fit.flags


def test_linewidth_halves_with_doubled_t2():
    f = np.linspace(-15e6, 15e6, 601)
    a = analysis.linewidth_t2(f, dynamics.saturation_pe(f, 0.001, 61e-6, 60e-9))
    b = analysis.linewidth_t2(f, dynamics.saturation_pe(f, 0.001, 61e-6, 120e-9))
    assert a["hwhm"] / b["hwhm"] == pytest.approx(2.0, rel=0.01)


def test_linewidth_saturation_flag():
    f = np.linspace(-60e6, 60e6, 601)
    fit = analysis.linewidth_t2(f, dynamics.saturation_pe(f, 1.0, 61e-6, 60e-9))
    assert "saturation_broadened" in fit.flags
    assert fit["hwhm"] == pytest.approx(fit["broadening"] / (2 * math.pi * 60e-9), rel=1e-3)


# --- Rabi ---------------------------------------------------------------------------

@pytest.mark.parametrize("coupling, decoupling", [(0.13, 7.69), (0.53, 1.89)])
def test_rabi_coupling_reciprocal(coupling, decoupling):
    amps = np.array([5.0, 10.0, 20.0, 40.0])
    rc = analysis.rabi_coupling(amps, coupling * amps)
    assert rc["coupling"] == pytest.approx(coupling, rel=1e-12)
    assert rc["decoupling"] == pytest.approx(decoupling, abs=0.005)
    assert rc["r_squared"] == pytest.approx(1.0)
    assert not rc["flags"]


def test_rabi_non_monotone_flag():
    rc = analysis.rabi_coupling([1.0, 2.0, 3.0], [1.0, 0.8, 1.2])
    assert "non_monotone" in rc["flags"]
    with pytest.raises(ValueError):
        analysis.rabi_coupling([1.0, 2.0], [1.0, 2.0])


def test_pi_half_time():
    assert analysis.pi_half_time(9.6) == pytest.approx(26.04, abs=0.01)


# --- readout maps -------------------------------------------------------------------

def test_readout_maps_endpoints():
    assert analysis.phase_to_pe(np.array([0.1, 0.3]), 0.1, 0.3).tolist() == [0.0, 1.0]
    g, e = 0.3 + 0.2j, 0.5 - 0.1j
    np.testing.assert_allclose(analysis.quadrature_to_pe([g, e, 0.5 * (g + e)], g, e),
                               [0.0, 1.0, 0.5], atol=1e-15)


# --- noise bounds -------------------------------------------------------------------

def test_noise_bounds_high_frequency():
    nb = analysis.noise_bounds(61e-6, 350e-9, 6.24, 138.4, n_realizations=300)
    assert nb["sq_high"] == pytest.approx(2.7e-18, rel=0.05)
    other = analysis.noise_bounds(30.5e-6, 350e-9, 3.12, 138.4, n_realizations=300)
    assert other["sq_high"] / nb["sq_high"] == pytest.approx(8.0, rel=1e-12)


def test_noise_bounds_1hz_scales_with_sensitivity():
    a = analysis.noise_bounds(61e-6, 350e-9, 6.24, 138.4, n_realizations=300)
    b = analysis.noise_bounds(61e-6, 350e-9, 6.24, 2 * 138.4, n_realizations=300)
    # second-order phase is quadratic in amplitude: doubling sens2 halves it
    assert a["sq_1hz"] / b["sq_1hz"] == pytest.approx(2.0, rel=1e-3)


@pytest.mark.xfail(strict=True, reason="sensitivity calibration lands 2 pi below the reference 1 Hz levels")
@pytest.mark.parametrize("dev, t1, t2, expected", [
    (qubit.CpbParams(6.24, 19.0, 4.5), 61e-6, 200e-9, (3e-3) ** 2),
    (qubit.CpbParams(6.24, 19.0, 4.5), 61e-6, 500e-9, (3e-3) ** 2),
    (qubit.CpbParams(4.3, 7.33, 19.1), 16e-6, 60e-9, (1e-2) ** 2),
])
def test_noise_bounds_1hz_reference_levels(dev, t1, t2, expected):
    cpb = dev.with_ej(4.5)
    nb = analysis.noise_bounds(t1, t2, cpb.e_c, qubit.sensitivity_second(cpb))
    assert 0.5 <= nb["sq_1hz"] / expected <= 2.0


def test_noise_bounds_validation():
    with pytest.raises(ValueError):
        analysis.noise_bounds(0.0, 350e-9, 6.24, 138.4)


# --- correlation --------------------------------------------------------------------

def test_correlate_signs():
    f = np.linspace(4.0, 6.0, 9)
    v = f ** 2
    assert analysis.correlate(f, v, f + 0.01, v) == pytest.approx(1.0)
    assert analysis.correlate(f, v, f, -v) == pytest.approx(-1.0)


def test_correlate_needs_overlap():
    f = np.linspace(4.0, 6.0, 9)
    with pytest.raises(ValueError, match="need at least 4"):
        analysis.correlate(f, f, f + 10.0, f)
    with pytest.raises(ValueError):
        analysis.correlate(f, f, [], [])


def test_cw_line_round_trips_t2():
    cpb = qubit.CpbParams(6.24, 19.0, 4.5).with_ej(4.5)
    f = 4.5 + np.linspace(-0.015, 0.015, 601)
    pe = dynamics.cw_spectroscopy(cpb, [1.0], f, 0.001, 61e-6, 60e-9)[:, 0]
    assert analysis.linewidth_t2(f * 1e9, pe)["t2_star"] == pytest.approx(60e-9, rel=0.03)
