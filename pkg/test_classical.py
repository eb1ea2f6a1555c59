#!/usr/bin/env python3
"""
Tests for the classical index-ellipsoid model and material data files
"""
import math
from pathlib import Path

import pytest
from pydantic import ValidationError

from qpm.classical import (
    IndexEllipsoid,
    SellmeierSet,
    SellmeierTerm,
    field_retardation,
    half_wave_field,
    load_material,
    mna_field_coefficient,
    npp_field_coefficient,
    perturbed_indices_mna,
    perturbed_indices_npp,
    r22_from_effective,
    retardation_components,
    retardation_mna,
    retardation_npp,
    sellmeier_n,
)
from qpm.exceptions import ConfigError, PhysicsDomainError

ROOT = Path(__file__).resolve().parent


@pytest.fixture
def npp_material():
    return load_material(str(ROOT / 'npp_material.cfg'))


@pytest.fixture
def mna_material():
    return load_material(str(ROOT / 'mna_material.cfg'))


def test_index_change_under_field():
    """n_x = 2, r12 = 65 pm/V, E = 1.5 V/um shifts n_x by -3.9e-4"""
    ell = IndexEllipsoid(n_x=2.0, n_y=1.9, eo_coefficients={'r12': 65.0, 'r22': 0.0})
    n_x, n_y = perturbed_indices_npp(ell, 1.5)
    assert n_x - 2.0 == pytest.approx(-3.9e-4, rel=1e-9)
    assert n_y == 1.9


def test_field_retardation_of_npp_crystal():
    """3 um crystal, 1064 nm, R = 340 pm/V, 1 V/um"""
    assert field_retardation(340.0, 1.0, 3.0, 1064.0) == pytest.approx(3.0118e-3, rel=1e-4)


def test_field_retardation_is_linear():
    one = field_retardation(340.0, 1.0, 3.0, 1064.0)
    assert field_retardation(340.0, 2.0, 3.0, 1064.0) == pytest.approx(2.0 * one, rel=1e-14)
    assert field_retardation(340.0, 0.0, 3.0, 1064.0) == 0.0


def test_npp_indices_reproduce_retardation(npp_material):
    ell = npp_material.ellipsoid(1064.0)
    n_x, n_y = perturbed_indices_npp(ell, 2.0)
    scale = 2.0 * math.pi / 1064e-9 * 3e-6
    assert retardation_npp(ell, 2.0, 3.0, 1064.0) == pytest.approx(scale * (n_y - n_x), rel=1e-12)


def test_mna_indices_reproduce_retardation(mna_material):
    ell = mna_material.ellipsoid()
    n_x, n_y = perturbed_indices_mna(ell, 2.0)
    scale = 2.0 * math.pi / 1064e-9 * 3e-6
    assert retardation_mna(ell, 2.0, 3.0, 1064.0) == pytest.approx(scale * (n_y - n_x), rel=1e-12)


def test_mna_field_coefficient(mna_material):
    """n_x^3 r11 - n_y^3 r21 = 8 * 67 - 5.832 * 10 pm/V"""
    ell = mna_material.ellipsoid()
    assert mna_field_coefficient(ell) == pytest.approx(477.68e-12, rel=1e-9)


def test_npp_combined_coefficient_is_340(npp_material):
    ell = npp_material.ellipsoid(1064.0)
    assert ell.n_x == pytest.approx(1.81283, abs=1e-5)
    assert ell.n_y == pytest.approx(1.90165, abs=1e-5)
    assert abs(npp_field_coefficient(ell)) == pytest.approx(340e-12, rel=1e-3)


def test_retardation_splits_into_birefringence_and_field_term(npp_material):
    ell = npp_material.ellipsoid(1064.0)
    parts = retardation_components(ell, 1.0, 3.0, 1064.0)
    assert parts.birefringence == pytest.approx(retardation_npp(ell, 0.0, 3.0, 1064.0))
    assert parts.total == pytest.approx(parts.birefringence + parts.electro_optic, rel=1e-12)
    assert parts.electro_optic == pytest.approx(3.0118e-3, rel=2e-3)
    assert 0.0 <= parts.wrapped < 2.0 * math.pi


def test_retardation_components_for_mna(mna_material):
    ell = mna_material.ellipsoid()
    parts = retardation_components(ell, 1.0, 3.0, 1064.0, crystal='mna')
    assert parts.electro_optic < 0.0


def test_unknown_crystal_rejected(npp_material):
    with pytest.raises(ConfigError):
        retardation_components(npp_material.ellipsoid(1064.0), 1.0, 3.0, 1064.0, crystal='kdp')


def test_non_positive_length_rejected(npp_material):
    with pytest.raises(PhysicsDomainError):
        retardation_npp(npp_material.ellipsoid(1064.0), 1.0, 0.0, 1064.0)


def test_half_wave_field(npp_material):
    ell = npp_material.ellipsoid(1064.0)
    e_half = half_wave_field(ell, 3.0, 1064.0)
    assert field_retardation(abs(npp_field_coefficient(ell)) * 1e12, e_half, 3.0, 1064.0) == pytest.approx(math.pi)


def test_half_wave_field_needs_a_field_term():
    ell = IndexEllipsoid(n_x=1.5, n_y=1.5, eo_coefficients={'r12': 0.0, 'r22': 0.0})
    with pytest.raises(PhysicsDomainError):
        half_wave_field(ell, 3.0, 1064.0)


def test_r22_branches(npp_material):
    ell = npp_material.ellipsoid(1064.0)
    low, high = r22_from_effective(340.0, 65.0, ell.n_x, ell.n_y)
    assert low == pytest.approx(6.87, abs=0.05)
    assert low < high
    for r22 in (low, high):
        assert abs(ell.n_x ** 3 * 65.0 - ell.n_y ** 3 * r22) == pytest.approx(340.0, rel=1e-12)


def test_missing_coefficient_reports_key():
    ell = IndexEllipsoid(n_x=2.0, n_y=1.8)
    with pytest.raises(ConfigError) as excinfo:
        ell.coefficient('r12')
    assert excinfo.value.key_path == 'eo.r12'


def test_unknown_coefficient_rejected():
    with pytest.raises(ValidationError):
        IndexEllipsoid(n_x=2.0, n_y=1.8, eo_coefficients={'r99': 1.0})


# Sellmeier dispersion

def test_sellmeier_shows_normal_dispersion(npp_material):
    sellmeier = npp_material.sellmeier
    assert sellmeier_n(sellmeier, 633.0, 'x') > sellmeier_n(sellmeier, 800.0, 'x') > sellmeier_n(sellmeier, 1064.0, 'x')


def test_sellmeier_refuses_extrapolation(npp_material):
    with pytest.raises(PhysicsDomainError, match="extrapolation refused"):
        sellmeier_n(npp_material.sellmeier, 413.0, 'x')
    with pytest.raises(PhysicsDomainError):
        sellmeier_n(npp_material.sellmeier, 2500.0, 'y')


def test_sellmeier_missing_polarization(npp_material):
    with pytest.raises(ConfigError):
        sellmeier_n(npp_material.sellmeier, 1064.0, 'z')


def test_sellmeier_pole_must_lie_below_window():
    term = SellmeierTerm(A=2.0, B=1.0, C=0.3)
    with pytest.raises(ValidationError):
        SellmeierSet(x=term, y=term)


def test_sellmeier_index_must_exceed_one():
    term = SellmeierTerm(A=-2.0, B=0.5, C=0.01)
    with pytest.raises(ValidationError):
        SellmeierSet(x=term, y=term)


# Material files

def test_load_npp_material(npp_material):
    assert npp_material.name == 'NPP'
    assert npp_material.eo_coefficients['r12'] == 65.0
    assert npp_material.sellmeier.window == (0.5, 2.0)


def test_load_fixed_index_material(mna_material):
    ell = mna_material.ellipsoid()
    assert (ell.n_x, ell.n_y) == (2.0, 1.8)
    assert mna_material.ellipsoid(1064.0) == ell


def test_missing_material_file():
    with pytest.raises(ConfigError, match="not found"):
        load_material('/nonexistent/material.cfg')


def test_bad_number_reports_key(tmp_path):
    path = tmp_path / 'bad.cfg'
    path.write_text("[indices]\nn_x = 2.0\nn_y = 1.8\n\n[eo]\nr12 = sixty\n")
    with pytest.raises(ConfigError) as excinfo:
        load_material(str(path))
    assert excinfo.value.key_path == 'eo.r12'


def test_material_without_indices(tmp_path):
    path = tmp_path / 'bare.cfg'
    path.write_text("[eo]\nr12 = 65\n")
    with pytest.raises(ConfigError):
        load_material(str(path)).ellipsoid(1064.0)
