#!/usr/bin/env python3
"""
Tests for the Monte-Carlo photon transport engine
"""
import logging
import math

import numpy as np
import pandas as pd
import pytest

from qpm.constants import CODATA
from qpm.crystal import NPP_CELL, molecule_cross_section
from qpm.exceptions import ConfigError, PhysicsDomainError
from qpm.orbit import CALIBRATED_NPP, FieldPerturbation, apply_field
from qpm.transport import (
    EO_COLUMNS,
    BeamSpec,
    check_nonresonant,
    delay_prefactor,
    effective_r_coefficient,
    eo_linearity,
    eo_response,
    expected_layer_delay,
    interaction_interval,
    interaction_rate,
    layer_delay,
    photon_energy_ev,
    photon_flux,
    refractive_index,
    run,
    run_dispersion,
    simulate,
    simulate_geometry,
)


# Beam and flux

def test_photon_flux_of_reference_beam():
    """10 mW at 633 nm through a 20 um spot"""
    flux = photon_flux(BeamSpec(wavelength=633.0, power=10.0, beamwidth=20.0))
    assert flux == pytest.approx(1.014e22, rel=1e-3)


def test_interaction_interval():
    assert interaction_rate(1e22, 36.5) == pytest.approx(3.65e7)
    assert interaction_interval(1e22, 36.5) == pytest.approx(27.4, abs=0.05)


def test_interaction_interval_for_npp_molecule():
    flux = photon_flux(BeamSpec(wavelength=633.0))
    interval = interaction_interval(flux, molecule_cross_section(NPP_CELL))
    assert 20.0 < interval < 35.0


def test_zero_power_means_no_interactions():
    flux = photon_flux(BeamSpec(wavelength=633.0, power=0.0))
    assert flux == 0.0
    assert interaction_interval(flux, 36.5) == math.inf


def test_interval_rejects_bad_input():
    with pytest.raises(PhysicsDomainError):
        interaction_interval(-1.0, 36.5)
    with pytest.raises(PhysicsDomainError):
        interaction_interval(1e22, 0.0)


# Nonresonant gate

@pytest.mark.parametrize("wavelength, energy", [
    (633.0, 1.9587),
    (1064.0, 1.16527),
])
def test_photon_energy(wavelength, energy):
    assert photon_energy_ev(wavelength) == pytest.approx(energy, abs=1e-4)
    assert check_nonresonant(BeamSpec(wavelength=wavelength)) == pytest.approx(energy, abs=1e-4)


def test_photon_at_gap_is_resonant():
    assert photon_energy_ev(413.0) == pytest.approx(3.002, abs=1e-3)
    with pytest.raises(PhysicsDomainError, match="resonant regime"):
        check_nonresonant(BeamSpec(wavelength=413.0), 3.0)


def test_non_positive_gap_rejected():
    with pytest.raises(PhysicsDomainError):
        check_nonresonant(BeamSpec(wavelength=1064.0), 0.0)


# Per-layer delay

def test_delay_prefactor():
    assert delay_prefactor(CODATA.c0 / 633e-9, 3.9) == pytest.approx(840.3, rel=1e-3)
    assert delay_prefactor(CODATA.c0 / 1064e-9, 3.9) == pytest.approx(648.2, rel=1e-3)


def test_doubling_charge_halves_delay():
    frequency = CODATA.c0 / 1064e-9
    assert delay_prefactor(frequency, 7.8) == pytest.approx(delay_prefactor(frequency, 3.9) / 2.0, rel=1e-14)


def test_layer_delay_on_diagonal_is_balanced():
    tau_x, tau_y, signed_x, signed_y = layer_delay(math.pi / 4, CALIBRATED_NPP, CODATA.c0 / 1064e-9)
    assert tau_x == pytest.approx(tau_y, rel=1e-14)
    assert signed_x > 0 and signed_y > 0


def test_layer_delay_magnitudes():
    frequency = CODATA.c0 / 1064e-9
    theta = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    tau_x, tau_y, signed_x, signed_y = layer_delay(theta, CALIBRATED_NPP, frequency)
    np.testing.assert_array_equal(tau_x, np.abs(signed_x))
    np.testing.assert_array_equal(tau_y, np.abs(signed_y))
    assert np.all(tau_x < 1e-16)
    # behind the nucleus the x delay changes sign
    assert signed_x[32] < 0 < signed_x[0]


def test_refractive_index_from_total_delay():
    assert refractive_index(0.0, 3.0) == 1.0
    assert refractive_index(2e-14, 3.0) == pytest.approx(1.0 + CODATA.c0 * 2e-14 / 3e-6)


# Monte-Carlo runs

def test_fixed_anomaly_on_diagonal_gives_no_retardation(make_config):
    result, _ = simulate(make_config(fixed_anomaly=math.pi / 4))
    assert result.delta_phi == pytest.approx(0.0, abs=1e-12)
    assert result.n_x == pytest.approx(result.n_y, rel=1e-12)


def test_mean_layer_delay_is_attosecond_scale(make_config):
    result = run(make_config())
    assert 1e-18 <= result.tau_x_mean <= 1e-16
    assert 1e-18 <= result.tau_y_mean <= 1e-16
    assert result.n_x > 1.0 and result.n_y > 1.0
    assert result.trials_used == 64
    assert result.clamp_events == 0


def test_layer_delay_at_perigee_is_pinned(make_config):
    """Every electron at perigee: tau_x = C u^2 (1 - eps)^2 at 1064 nm, no y delay"""
    result = run(make_config(fixed_anomaly=0.0))
    assert result.tau_x_mean == pytest.approx(6.956964e-18, rel=1e-6)
    assert result.tau_y_mean == 0.0
    assert result.n_y == 1.0


def test_sampled_layer_delay_matches_orbit_average(make_config):
    """C u^2 times the density-weighted averages of |cos|rho^2 (0.77206) and |sin|rho^2 (0.62858)"""
    result = run(make_config())
    assert result.tau_x_mean == pytest.approx(9.8086e-18, rel=0.03)
    assert result.tau_y_mean == pytest.approx(7.9857e-18, rel=0.03)


def test_indices_reproduce_accumulated_delay(make_config):
    config = make_config()
    result = run(config)
    length_m = config.stack.length_m
    assert (result.n_x - 1.0) * length_m / CODATA.c0 == pytest.approx(result.tau_x_total, rel=1e-12)
    assert (result.n_y - 1.0) * length_m / CODATA.c0 == pytest.approx(result.tau_y_total, rel=1e-12)
    assert result.tau_x_total == pytest.approx(result.tau_x_mean * config.stack.layer_count, rel=1e-12)


def test_signed_sum_matches_orbit_average():
    """Mean signed x sum per layer tends to <rho^2 cos theta> = -(2 eps + eps^3 / 2)"""
    eps = 0.26
    geometry = simulate_geometry(eps, 402, 200, 99)
    per_layer = geometry.signed_x.mean() / 402
    assert per_layer == pytest.approx(-(2 * eps + eps ** 3 / 2), abs=0.03)


def test_expected_layer_delay_sign():
    assert expected_layer_delay(CALIBRATED_NPP, CODATA.c0 / 1064e-9) < 0.0


def test_geometry_independent_of_worker_count():
    serial = simulate_geometry(0.26, 402, 32, 7, 1)
    pooled = simulate_geometry(0.26, 402, 32, 7, 4)
    for left, right in zip(serial, pooled):
        np.testing.assert_array_equal(left, right)


def test_geometry_arrays_are_read_only():
    geometry = simulate_geometry(0.26, 10, 4, 1)
    with pytest.raises(ValueError):
        geometry.abs_x[0] = 1.0


def test_same_seed_same_result(make_config):
    first, _ = simulate(make_config())
    simulate_geometry.cache_clear()
    second, _ = simulate(make_config())
    assert first == second


def test_stderr_halves_with_four_times_the_trials(make_config):
    ratios = []
    for seed in range(10):
        small, _ = simulate(make_config(trials=32, seed=seed))
        large, _ = simulate(make_config(trials=128, seed=seed))
        ratios.append(small.stderr_delta_phi / large.stderr_delta_phi)
    assert np.mean(ratios) == pytest.approx(2.0, rel=0.2)


def test_resonant_beam_is_refused(make_config):
    with pytest.raises(PhysicsDomainError, match="resonant regime"):
        simulate(make_config(beam=BeamSpec(wavelength=413.0)))


def test_wavelength_outside_window_is_refused(make_config):
    with pytest.raises(PhysicsDomainError, match="transparency window"):
        simulate(make_config(beam=BeamSpec(wavelength=2100.0)))


def test_run_logs_progress(make_config, caplog):
    with caplog.at_level(logging.INFO, logger='qpm.transport'):
        run(make_config())
    assert 'Run done' in caplog.text


def test_dispersion_is_normal(make_config):
    """Shorter wavelengths see a larger index"""
    table = run_dispersion(make_config(), [1064.0, 633.0, 800.0])
    assert list(table['wavelength_nm']) == [633.0, 800.0, 1064.0]
    assert table['n_x'].is_monotonic_decreasing
    assert table['n_y'].is_monotonic_decreasing
    assert table['n_x'].iloc[0] > table['n_x'].iloc[2]


# Electro-optic response

def test_zero_coupling_gives_exactly_zero_response(make_config):
    response = eo_response(make_config(), [0.0, 0.5, 1.0], psi=0.0, kappa=0.0)
    assert list(response.columns[:len(EO_COLUMNS)]) == EO_COLUMNS
    assert (response['delta_rad'] == 0.0).all()


def test_perpendicular_field_gives_exactly_zero_response(make_config):
    response = eo_response(make_config(), [0.0, 1.0, 2.0], psi=90.0, kappa=0.01)
    assert (response['delta_rad'] == 0.0).all()
    assert (response['stderr_rad'] == 0.0).all()


def test_response_is_linear_in_field(make_config):
    response = eo_response(make_config(), [0.0, 0.5, 1.0, 1.5, 2.0], psi=0.0, kappa=0.01)
    assert response['delta_rad'].iloc[0] == 0.0
    assert eo_linearity(response) > 0.99
    assert np.all(np.diff(response['eccentricity']) > 0)


def test_kappa_taken_from_config_field(make_config):
    config = make_config(field=FieldPerturbation(field_magnitude=0.0, field_angle=0.0, coupling=0.01))
    implicit = eo_response(config, [0.0, 1.0], psi=0.0)
    explicit = eo_response(make_config(), [0.0, 1.0], psi=0.0, kappa=0.01)
    pd.testing.assert_frame_equal(implicit, explicit)


def test_field_list_needs_zero(make_config):
    with pytest.raises(ConfigError, match="include 0"):
        eo_response(make_config(), [0.5, 1.0], psi=0.0, kappa=0.01)


def test_strong_field_clamps(make_config, caplog):
    with caplog.at_level(logging.WARNING, logger='qpm.orbit'):
        response = eo_response(make_config(), [0.0, 100.0], psi=0.0, kappa=0.01)
    assert list(response['clamped']) == [0, 1]
    assert 'clamped' in caplog.text


def test_field_run_uses_deformed_orbit(make_config):
    pert = FieldPerturbation(field_magnitude=1.0, field_angle=0.0, coupling=0.01)
    deformed = apply_field(CALIBRATED_NPP, pert)
    with_field = run(make_config(field=pert))
    reshaped = run(make_config(shape=deformed))
    assert with_field.eccentricity == deformed.eccentricity
    assert with_field.delta_phi == reshaped.delta_phi
    assert with_field.n_x == reshaped.n_x


def test_negative_field_reverses_response(make_config):
    response = eo_response(make_config(trials=16), [-1.0, 0.0, 1.0], psi=0.0, kappa=1e-3)
    against, _, along = response['delta_rad']
    assert list(response['field_v_per_um']) == [-1.0, 0.0, 1.0]
    assert response['eccentricity'].iloc[0] == pytest.approx(0.259)
    assert response['eccentricity'].iloc[2] == pytest.approx(0.261)
    assert against * along < 0.0
    assert against == pytest.approx(-along, rel=0.05)


def test_symmetric_fields_keep_effective_coefficient(make_config):
    config = make_config(trials=16)
    one_sided = eo_response(config, [0.0, 1.0, 2.0], psi=0.0, kappa=1e-3)
    symmetric = eo_response(config, [-2.0, -1.0, 0.0, 1.0, 2.0], psi=0.0, kappa=1e-3)
    expected = effective_r_coefficient(one_sided, config.beam, config.stack.crystal_length)
    assert expected > 0.0
    assert effective_r_coefficient(symmetric, config.beam, config.stack.crystal_length) == pytest.approx(expected, rel=0.05)


def _synthetic_response(r_pm_per_v, fields, beam, length_um):
    omega_l_over_c = beam.angular_frequency * length_um * 1e-6 / CODATA.c0
    deltas = [0.5 * omega_l_over_c * r_pm_per_v * 1e-12 * f * 1e6 for f in fields]
    return pd.DataFrame({'field_v_per_um': fields, 'delta_rad': deltas})


def test_effective_coefficient_recovers_known_value():
    beam = BeamSpec(wavelength=1064.0)
    response = _synthetic_response(340.0, [0.0, 0.5, 1.0, 1.5], beam, 3.0)
    assert response['delta_rad'].iloc[2] == pytest.approx(3.0118e-3, rel=1e-4)
    assert effective_r_coefficient(response, beam, 3.0) == pytest.approx(340.0, rel=1e-9)


def test_effective_coefficient_from_two_points():
    beam = BeamSpec(wavelength=1064.0)
    response = _synthetic_response(65.0, [0.0, 1.0], beam, 1.0)
    assert effective_r_coefficient(response, beam, 1.0) == pytest.approx(65.0, rel=1e-9)


def test_effective_coefficient_needs_distinct_fields():
    beam = BeamSpec(wavelength=1064.0)
    with pytest.raises(PhysicsDomainError, match="degenerate fit"):
        effective_r_coefficient(_synthetic_response(65.0, [1.0], beam, 1.0), beam, 1.0)
    with pytest.raises(PhysicsDomainError):
        effective_r_coefficient(_synthetic_response(65.0, [1.0, 1.0], beam, 1.0), beam, 1.0)


@pytest.mark.slow
def test_circular_orbit_is_isotropic(make_config):
    """With eps = 0 the x and y indices agree within noise"""
    circle = CALIBRATED_NPP.model_copy(update={'eccentricity': 0.0})
    result, _ = simulate(make_config(shape=circle, trials=400))
    assert abs(result.delta_phi) < 4.0 * result.stderr_delta_phi
    assert abs(result.n_x - result.n_y) < 4.0 * math.hypot(result.stderr_n_x, result.stderr_n_y)


@pytest.mark.slow
def test_dispersion_gaps_exceed_noise(make_config):
    config = make_config(trials=2000)
    results = [simulate(config.model_copy(update={'beam': BeamSpec(wavelength=w)}))[0] for w in (633.0, 800.0, 1064.0)]
    for shorter, longer in zip(results, results[1:]):
        assert shorter.n_x - longer.n_x > 3.0 * shorter.stderr_n_x
        assert shorter.n_y - longer.n_y > 3.0 * shorter.stderr_n_y
