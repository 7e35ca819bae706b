"""
Tests for tuning curves, joint spectra, entanglement measures and the rate ledger
"""
import math
import os
import sys
import tempfile

import numpy as np
from pydantic import ValidationError
from scipy.constants import c, h

from nlwg.analysis import (
    JointSpectralAmplitude, NeffDispersion, branch_splitting, collection_fraction, constraint_residuals,
    count_lobes, filter_jsa, filter_window, format_ledger, idler_wavelength, ion_photon_state, jsa, marginal,
    momentum_mismatch, phase_matched_angles, polarization_state, published_rate_ledger, rate_budget,
    tuning_curves, write_jsi_csv, write_ledger, write_tuning_csv,
)
from nlwg.errors import DegenerateFilterError, DomainError, ResolutionError
from nlwg.models import RateFactor, RateLedger
from nlwg.stack import DesignWavelengths

WAVELENGTHS = DesignWavelengths(pump=1092.0 * 1550.0 / 2642.0, te=1092.0, tm=1550.0)
CAUCHY_B = 1e5


def n_te(lam):
    return 3.15 + CAUCHY_B / np.asarray(lam) ** 2


def n_tm(lam):
    return n_te(lam) - 0.03


def synthetic(birefringence=None):
    if birefringence is None:
        return NeffDispersion.from_functions({"TE": n_te, "TM": n_tm}, WAVELENGTHS)
    return NeffDispersion.from_functions({"TE": n_te, "TM": lambda lam: n_te(lam) - birefringence}, WAVELENGTHS)


def expect(exc, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc as e:
        return e
    raise AssertionError(f"expected {exc.__name__}")


def test_idler_from_energy_conservation():
    assert abs(idler_wavelength(WAVELENGTHS.pump, 1092.0) - 1550.0) < 1e-9


def test_group_index_of_cauchy_model():
    d = synthetic()
    expected = 3.15 + 3.0 * CAUCHY_B / 1092.0 ** 2
    assert abs(d.group_index("TE", 1092.0) - expected) < 1e-6


def test_lookup_outside_tables_raises():
    d = NeffDispersion({"TE": [((1000.0, 1200.0), n_te)], "TM": [((1000.0, 1200.0), n_tm)]},
                       WAVELENGTHS, (1052.0, 1132.0))
    assert abs(d.n("TE", 1100.0) - n_te(1100.0)) < 1e-12
    expect(DomainError, d.n, "TM", 1500.0)
    expect(DomainError, NeffDispersion, {"TE": [((0.0, math.inf), n_te)]}, WAVELENGTHS, (1052.0, 1132.0))


def test_phase_matched_angles():
    angles = phase_matched_angles(synthetic())
    p = WAVELENGTHS.pump
    hv = math.degrees(math.asin(p * (n_te(1092.0) / 1092.0 - n_tm(1550.0) / 1550.0)))
    vh = math.degrees(math.asin(p * (n_tm(1092.0) / 1092.0 - n_te(1550.0) / 1550.0)))
    assert abs(angles["HV"] - hv) < 1e-9 and abs(angles["VH"] - vh) < 1e-9
    assert abs(angles["splitting_deg"] - abs(vh - hv)) < 1e-12 and angles["splitting_deg"] > 0.0
    assert abs(angles["vh_minus_hv_deg"] - (vh - hv)) < 1e-12
    assert abs(float(momentum_mismatch(synthetic(), "HV", 1092.0, hv))) < 1e-15


def test_tuning_curve_passes_design_point():
    d = synthetic()
    theta = phase_matched_angles(d)["HV"]
    hv, vh = tuning_curves(d, theta_range=(theta - 1.0, theta + 1.0), n_points=3)
    assert len(hv) == 3 and not hv.gaps
    assert abs(hv.signal_at(hv.samples[1][0]) - 1092.0) < 1e-6
    signals = [s for _, s, _ in hv.samples]
    assert signals[0] > signals[1] > signals[2]


def test_tuning_curves_satisfy_constraints():
    d = synthetic()
    hv, vh = tuning_curves(d, theta_range=(30.0, 38.0), n_points=9)
    for curve in (hv, vh):
        energy, momentum = constraint_residuals(curve, d)
        assert energy < 1e-12 and momentum < 1e-9, (curve.process, energy, momentum)
    assert len(branch_splitting(hv, vh)) == min(len(hv), len(vh))


def test_angles_outside_window_are_gaps():
    hv, _ = tuning_curves(synthetic(), theta_range=(5.0, 10.0), n_points=3)
    assert len(hv) == 0 and len(hv.gaps) == 3


def test_invalid_angle_scan():
    expect(DomainError, tuning_curves, synthetic(), theta_range=(38.0, 30.0))


def test_jsa_is_normalized_with_one_lobe_after_filtering():
    amplitude = jsa(synthetic())
    assert abs(amplitude.norm() - 1.0) < 1e-9
    assert len(amplitude.pump_angles_deg) == 2
    assert count_lobes(amplitude) >= 1  # cross-pumped lobes fall outside this grid
    filtered = filter_jsa(amplitude, filter_window(1092.0, 0.5), filter_window(1550.0, 0.5))
    assert abs(filtered.norm() - 1.0) < 1e-9
    assert 0.0 < filtered.kept_fraction <= 1.0
    assert count_lobes(filtered) == 1
    state = polarization_state(filtered)
    assert state.concurrence > 0.95, state.concurrence


def test_two_angle_pump_shows_side_lobes():
    # weak birefringence keeps the cross-pumped lobes inside the grid
    amplitude = jsa(synthetic(0.005))
    assert count_lobes(amplitude) >= 3
    filtered = filter_jsa(amplitude, filter_window(1092.0, 0.5), filter_window(1550.0, 0.5))
    assert count_lobes(filtered) == 1


def test_filtering_twice_changes_nothing():
    amplitude = jsa(synthetic())
    windows = (filter_window(1092.0, 0.5), filter_window(1550.0, 0.5))
    once = filter_jsa(amplitude, *windows)
    twice = filter_jsa(once, *windows)
    assert np.allclose(twice.phi_hv, once.phi_hv, rtol=0.0, atol=1e-12 * np.abs(once.phi_hv).max())
    assert np.allclose(twice.phi_vh, once.phi_vh, rtol=0.0, atol=1e-12 * np.abs(once.phi_vh).max())
    assert abs(twice.kept_fraction - 1.0) < 1e-12


def test_marginal_has_unit_area_and_peaks_at_target():
    amplitude = jsa(synthetic())
    spectrum = marginal(amplitude, "signal")
    assert abs(spectrum.area() - 1.0) < 1e-9
    assert abs(spectrum.peak_wavelength_nm - 1092.0) < 0.05
    idler = marginal(amplitude, "idler")
    assert abs(idler.peak_wavelength_nm - 1550.0) < 0.1
    expect(DomainError, marginal, amplitude, "pump")


def test_single_process_leaves_other_empty():
    amplitude = jsa(synthetic(), processes=("HV",))
    assert np.all(amplitude.phi_vh == 0)
    assert polarization_state(amplitude).concurrence == 0.0


def test_long_crystal_needs_finer_grid():
    expect(ResolutionError, jsa, synthetic(), length_mm=100.0)


def test_filter_outside_grid():
    amplitude = jsa(synthetic(), n_points=101, span_thz=0.25)
    expect(DegenerateFilterError, filter_jsa, amplitude, filter_window(2000.0, 0.5), filter_window(1550.0, 0.5))


def small_amplitude(phi_hv, phi_vh):
    nu = np.linspace(1.0e14, 1.001e14, phi_hv.shape[0])
    return JointSpectralAmplitude(nu, nu, phi_hv, phi_vh, [33.0], 1.0, 1.0)


def test_polarization_state_limits():
    phi = np.outer(np.hanning(7), np.hanning(7)).astype(np.complex128)
    assert abs(polarization_state(small_amplitude(phi, phi)).concurrence - 1.0) < 1e-12
    state = polarization_state(small_amplitude(phi, np.zeros_like(phi)))
    assert state.concurrence == 0.0 and abs(state.purity - 1.0) < 1e-12
    expect(DomainError, polarization_state, small_amplitude(np.zeros_like(phi), np.zeros_like(phi)))
    expect(DomainError, small_amplitude(np.zeros_like(phi), np.zeros_like(phi)).normalized)


def test_concurrence_bounded_on_random_amplitudes():
    rng = np.random.default_rng(4)
    for _ in range(20):
        phi_hv = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
        phi_vh = rng.uniform(0.0, 3.0) * (rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9)))
        state = polarization_state(small_amplitude(phi_hv, phi_vh))
        assert 0.0 <= state.concurrence <= 1.0
        assert 0.5 - 1e-12 <= state.purity <= 1.0 + 1e-12
        assert abs(state.overlap) <= 1.0 + 1e-12


def test_ion_photon_state():
    assert abs(ion_photon_state().concurrence - math.sqrt(3.0) / 2.0) < 1e-12
    expect(DomainError, ion_photon_state, 1.0, 1.0)
    state = ion_photon_state(1.0, 1.0, renormalize=True)
    assert abs(state.concurrence - 1.0) < 1e-12
    expect(DomainError, ion_photon_state, 0.0, 0.0)


def test_collection_fraction():
    assert abs(collection_fraction(0.6) - 0.1) < 1e-12
    assert collection_fraction(0.0) == 0.0
    expect(DomainError, collection_fraction, 1.5)


def test_published_rate_ledger():
    ledger = published_rate_ledger()
    budget = rate_budget(ledger)
    pump = 1092.0 * 1550.0 / 2642.0
    pairs = 2e-11 * 0.06 / 1e6 / (h * c / (pump * 1e-9))
    expected = 1e6 * 0.056 * 0.1 * 0.7 * 1.0 * pairs / 50.0 * 0.5
    assert abs(budget.rate_hz / expected - 1.0) < 1e-9
    assert abs(budget.events_per_minute - 60.0 * budget.rate_hz) < 1e-9
    text = format_ledger(budget)
    assert "CAVEAT" in text and "two events per minute" in text
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "rate_ledger.txt")
        write_ledger(budget, path)
        with open(path, encoding="utf-8") as f:
            assert f.read() == text


def test_ledger_validation():
    expect(ValidationError, RateFactor, name="p", value=1.5, kind="probability")
    expect(ValidationError, RateFactor, name="d", value=0.0, kind="divisor")
    rate = RateFactor(name="r", value=10.0, kind="rate")
    expect(ValidationError, RateLedger, factors=[rate, rate])
    expect(ValidationError, RateLedger, factors=[])
    budget = rate_budget(RateLedger(factors=[rate, RateFactor(name="d", value=4.0, kind="divisor")]))
    assert budget.rate_hz == 2.5
    assert "CAVEAT" not in format_ledger(budget)


def test_detection_window_passes_pulse_fraction():
    rate = RateFactor(name="r", value=10.0, kind="rate")
    short = RateFactor(name="w", value=25e-9, unit="s", kind="window", pulse_s=50e-9)
    assert rate_budget(RateLedger(factors=[rate, short])).rate_hz == 5.0
    long = RateFactor(name="w", value=50e-9, unit="s", kind="window", pulse_s=1e-9)
    assert rate_budget(RateLedger(factors=[rate, long])).rate_hz == 10.0
    expect(ValidationError, RateFactor, name="w", value=50e-9, kind="window")
    window = [f for f in published_rate_ledger().factors if f.kind == "window"]
    assert len(window) == 1 and window[0].value == 50e-9 and window[0].unit == "s"
    clipped = rate_budget(published_rate_ledger(detection_window_s=0.5e-9)).rate_hz
    assert abs(clipped / rate_budget(published_rate_ledger()).rate_hz - 0.5) < 1e-12


def test_writers():
    phi = np.outer(np.hanning(5), np.hanning(5)).astype(np.complex128)
    amplitude = small_amplitude(phi, phi)
    hv, vh = tuning_curves(synthetic(), theta_range=(30.0, 38.0), n_points=3)
    with tempfile.TemporaryDirectory() as tmp:
        jsi_path = os.path.join(tmp, "jsi.csv")
        write_jsi_csv(amplitude, jsi_path)
        with open(jsi_path, encoding="utf-8") as f:
            rows = f.read().splitlines()
        assert len(rows) == 6 and rows[0].startswith("omega2\\omega1,")
        assert len(rows[0].split(",")) == 6
        tuning_path = os.path.join(tmp, "tuning.csv")
        write_tuning_csv([hv, vh], tuning_path)
        with open(tuning_path, encoding="utf-8") as f:
            rows = f.read().splitlines()
        assert rows[0] == "process,theta_deg,signal_nm,idler_nm,note"
        assert len(rows) == 1 + 6


if __name__ == "__main__":
    print("=" * 60)
    print("Analysis")
    print("=" * 60)
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e!r}")
    sys.exit(1 if failed else 0)
