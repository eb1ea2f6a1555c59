"""
Classical electro-optic reference model.

Index ellipsoid under an applied field, closed-form phase retardation for
NPP (field along y) and MNA (field along x), the split of the retardation
into birefringence plus field term, and one-oscillator Sellmeier dispersion
read from a material data file. These formulas are the oracle the
Monte-Carlo engine is checked against.

Units: indices are dimensionless, EO coefficients in pm/V, fields in V/um,
lengths in um and wavelengths in nm. SI conversion happens inside.
"""
import configparser
import logging
import math
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from qpm.constants import CODATA, MICROMETER, PM_PER_V_TO_M_PER_V, V_PER_UM_TO_V_PER_M
from qpm.exceptions import ConfigError, PhysicsDomainError
from qpm.transport import angular_frequency

logger = logging.getLogger(__name__)

EO_KEYS = ('r11', 'r12', 'r21', 'r22', 'r31', 'r51', 'r61')

Polarization = Literal['x', 'y', 'z']


class IndexEllipsoid(BaseModel):
    """Principal indices and the EO coefficients present for a material (pm/V)"""

    model_config = ConfigDict(frozen=True)

    n_x: float = Field(ge=1.0)
    n_y: float = Field(ge=1.0)
    n_z: Optional[float] = Field(default=None, ge=1.0)
    eo_coefficients: Dict[str, float] = Field(default_factory=dict)

    @field_validator('eo_coefficients')
    @classmethod
    def _known_finite(cls, coefficients: Dict[str, float]) -> Dict[str, float]:
        for name, value in coefficients.items():
            if name not in EO_KEYS:
                raise ValueError(f"unknown EO coefficient '{name}', expected one of {EO_KEYS}")
            if not math.isfinite(value):
                raise ValueError(f"EO coefficient {name} must be finite")
        return coefficients

    def coefficient(self, name: str) -> float:
        """Coefficient in m/V"""
        if name not in self.eo_coefficients:
            raise ConfigError(f"EO coefficient {name} missing for this material", key_path=f"eo.{name}")
        return self.eo_coefficients[name] * PM_PER_V_TO_M_PER_V


class SellmeierTerm(BaseModel):
    """n^2 = A + B*lambda^2 / (lambda^2 - C), lambda in um"""

    model_config = ConfigDict(frozen=True)

    A: float
    B: float
    C: float = Field(ge=0.0)

    def n_squared(self, wavelength_um):
        lam2 = np.asarray(wavelength_um, dtype=float) ** 2
        return self.A + self.B * lam2 / (lam2 - self.C)


class SellmeierSet(BaseModel):
    """Per-polarization Sellmeier terms with their validity window (um)"""

    model_config = ConfigDict(frozen=True)

    x: SellmeierTerm
    y: SellmeierTerm
    z: Optional[SellmeierTerm] = None
    window: Tuple[float, float] = (0.5, 2.0)

    @model_validator(mode='after')
    def _physical(self) -> 'SellmeierSet':
        low, high = self.window
        if not 0 < low < high:
            raise ValueError(f"validity window must satisfy 0 < min < max, got {self.window}")
        for tag in ('x', 'y', 'z'):
            term = getattr(self, tag)
            if term is None:
                continue
            if not term.C < low ** 2:
                raise ValueError(f"sellmeier.{tag}: pole C={term.C} must lie below the window ({low} um)^2")
            # n^2 is monotone in lambda above the pole, so the window ends bound it
            if np.any(term.n_squared(np.array([low, high])) <= 1.0):
                raise ValueError(f"sellmeier.{tag}: n^2 must exceed 1 over the validity window")
        return self


class Retardation(BaseModel):
    """Gamma = birefringence + electro-optic term, raw and wrapped into [0, 2*pi)"""

    model_config = ConfigDict(frozen=True)

    total: float
    birefringence: float
    electro_optic: float

    @property
    def wrapped(self) -> float:
        return self.total % (2.0 * math.pi)


class MaterialData(BaseModel):
    """Contents of a material data file"""

    model_config = ConfigDict(frozen=True)

    name: str = 'material'
    sellmeier: Optional[SellmeierSet] = None
    eo_coefficients: Dict[str, float] = Field(default_factory=dict)
    indices: Optional[Dict[str, float]] = None

    def ellipsoid(self, wavelength: Optional[float] = None) -> IndexEllipsoid:
        """
        Index ellipsoid at a wavelength (nm)

        Uses the Sellmeier set when present, otherwise the fixed indices.
        """
        if self.sellmeier is not None and wavelength is not None:
            n_z = sellmeier_n(self.sellmeier, wavelength, 'z') if self.sellmeier.z is not None else None
            return IndexEllipsoid(
                n_x=sellmeier_n(self.sellmeier, wavelength, 'x'),
                n_y=sellmeier_n(self.sellmeier, wavelength, 'y'),
                n_z=n_z,
                eo_coefficients=self.eo_coefficients,
            )
        if self.indices is None:
            raise ConfigError("material has neither a Sellmeier set for this wavelength nor fixed indices",
                              key_path='indices')
        return IndexEllipsoid(eo_coefficients=self.eo_coefficients, **self.indices)


def sellmeier_n(sellmeier: SellmeierSet, wavelength: float, polarization: Polarization) -> float:
    """
    Refractive index from a Sellmeier set

    Args:
        sellmeier: Coefficient set
        wavelength: Vacuum wavelength (nm)
        polarization: 'x', 'y' or 'z'

    Returns:
        n at the wavelength

    Raises:
        PhysicsDomainError: Wavelength outside the validity window
    """
    term = getattr(sellmeier, polarization, None)
    if term is None:
        raise ConfigError(f"no Sellmeier term for polarization '{polarization}'", key_path=f"sellmeier.{polarization}")
    wavelength_um = wavelength / 1000.0
    low, high = sellmeier.window
    if not low <= wavelength_um <= high:
        raise PhysicsDomainError(
            f"extrapolation refused: {wavelength} nm outside Sellmeier window {low}-{high} um"
        )
    return float(np.sqrt(term.n_squared(wavelength_um)))


def _phase_scale(length: float, wavelength: float) -> float:
    """omega * l / c, the phase per unit index difference"""
    return angular_frequency(wavelength) * length * MICROMETER / CODATA.c0


def perturbed_indices_npp(ell: IndexEllipsoid, E_y: float) -> Tuple[float, float]:
    """n_x - n_x^3 r12 E_y / 2 and n_y - n_y^3 r22 E_y / 2 for a field along y"""
    field = E_y * V_PER_UM_TO_V_PER_M
    n_x = ell.n_x - 0.5 * ell.n_x ** 3 * ell.coefficient('r12') * field
    n_y = ell.n_y - 0.5 * ell.n_y ** 3 * ell.coefficient('r22') * field
    return n_x, n_y


def perturbed_indices_mna(ell: IndexEllipsoid, E_x: float) -> Tuple[float, float]:
    """
    MNA indices under a field along x

    Signs follow the MNA retardation formula, so that n_y' - n_x' reproduces
    retardation_mna exactly.
    """
    field = E_x * V_PER_UM_TO_V_PER_M
    n_x = ell.n_x + 0.5 * ell.n_x ** 3 * ell.coefficient('r11') * field
    n_y = ell.n_y + 0.5 * ell.n_y ** 3 * ell.coefficient('r21') * field
    return n_x, n_y


def npp_field_coefficient(ell: IndexEllipsoid) -> float:
    """n_y^3 r22 - n_x^3 r12 in m/V"""
    return ell.n_y ** 3 * ell.coefficient('r22') - ell.n_x ** 3 * ell.coefficient('r12')


def mna_field_coefficient(ell: IndexEllipsoid) -> float:
    """n_x^3 r11 - n_y^3 r21 in m/V"""
    return ell.n_x ** 3 * ell.coefficient('r11') - ell.n_y ** 3 * ell.coefficient('r21')


def retardation_npp(ell: IndexEllipsoid, E_y: float, length: float, wavelength: float) -> float:
    """
    Phase retardation of NPP with a field along y

    Gamma = (omega l / c) [n_y - n_x - (n_y^3 r22 - n_x^3 r12) E_y / 2]

    Args:
        ell: Index ellipsoid with r12 and r22
        E_y: Field (V/um)
        length: Crystal length (um)
        wavelength: Vacuum wavelength (nm)

    Returns:
        Gamma in radians (not wrapped)
    """
    if not length > 0:
        raise PhysicsDomainError(f"crystal length must be positive, got {length} um")
    field = E_y * V_PER_UM_TO_V_PER_M
    return _phase_scale(length, wavelength) * (ell.n_y - ell.n_x - 0.5 * npp_field_coefficient(ell) * field)


def retardation_mna(ell: IndexEllipsoid, E_x: float, length: float, wavelength: float) -> float:
    """Gamma = (omega l / c) [n_y - n_x - (n_x^3 r11 - n_y^3 r21) E_x / 2] for MNA"""
    if not length > 0:
        raise PhysicsDomainError(f"crystal length must be positive, got {length} um")
    field = E_x * V_PER_UM_TO_V_PER_M
    return _phase_scale(length, wavelength) * (ell.n_y - ell.n_x - 0.5 * mna_field_coefficient(ell) * field)


def retardation_components(ell: IndexEllipsoid, field: float, length: float, wavelength: float,
                           crystal: Literal['npp', 'mna'] = 'npp') -> Retardation:
    """Split Gamma(E) into birefringence Gamma(0) and the field-induced delta"""
    if crystal == 'npp':
        retardation = retardation_npp
    elif crystal == 'mna':
        retardation = retardation_mna
    else:
        raise ConfigError(f"unknown crystal '{crystal}', expected 'npp' or 'mna'", key_path='crystal')
    total = retardation(ell, field, length, wavelength)
    birefringence = retardation(ell, 0.0, length, wavelength)
    return Retardation(total=total, birefringence=birefringence, electro_optic=total - birefringence)


def field_retardation(r_combined: float, field: float, length: float, wavelength: float) -> float:
    """
    Field-induced retardation (omega l / c) * R * E / 2

    Args:
        r_combined: Effective coefficient |n_y^3 r22 - n_x^3 r12| (pm/V)
        field: Field (V/um)
        length: Crystal length (um)
        wavelength: Vacuum wavelength (nm)
    """
    return 0.5 * _phase_scale(length, wavelength) * r_combined * PM_PER_V_TO_M_PER_V * field * V_PER_UM_TO_V_PER_M


def half_wave_field(ell: IndexEllipsoid, length: float, wavelength: float) -> float:
    """Field (V/um) at which the NPP field term reaches pi"""
    coefficient = abs(npp_field_coefficient(ell))
    if coefficient == 0.0:
        raise PhysicsDomainError("field term vanishes: no half-wave field")
    return 2.0 * math.pi / (_phase_scale(length, wavelength) * coefficient * V_PER_UM_TO_V_PER_M)


def r22_from_effective(r_eff: float, r12: float, n_x: float, n_y: float) -> Tuple[float, float]:
    """
    Both r22 values (pm/V) compatible with |n_x^3 r12 - n_y^3 r22| = r_eff

    Returns:
        (smaller branch, larger branch)
    """
    if r_eff < 0:
        raise PhysicsDomainError(f"effective coefficient must be non-negative, got {r_eff}")
    base = n_x ** 3 * r12
    low = (base - r_eff) / n_y ** 3
    high = (base + r_eff) / n_y ** 3
    return low, high


def _float_section(parser: configparser.ConfigParser, section: str) -> Dict[str, float]:
    values = {}
    for key, raw in parser[section].items():
        try:
            values[key] = float(raw)
        except ValueError as e:
            raise ConfigError(f"not a number: {raw!r}", key_path=f"{section}.{key}") from e
    return values


def load_material(path: str) -> MaterialData:
    """
    Load a material data file

    INI sections: [material] name, [sellmeier] window_min_um / window_max_um,
    [sellmeier.x] / [sellmeier.y] / [sellmeier.z] A, B, C, [eo] r_ij in pm/V,
    [indices] n_x, n_y, n_z for fixed-index materials.

    Raises:
        ConfigError: Missing file, malformed numbers or unphysical coefficients
    """
    material_path = Path(path)
    if not material_path.is_file():
        raise ConfigError(f"material file not found: {path}", key_path='material.path')

    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep Sellmeier A/B/C case
    try:
        parser.read(material_path, encoding='utf-8')
    except configparser.Error as e:
        raise ConfigError(f"malformed material file: {e}", key_path='material.path') from e

    name = parser.get('material', 'name', fallback=material_path.stem)

    sellmeier = None
    terms = {tag: _float_section(parser, f"sellmeier.{tag}")
             for tag in ('x', 'y', 'z') if parser.has_section(f"sellmeier.{tag}")}
    if terms:
        window = _float_section(parser, 'sellmeier') if parser.has_section('sellmeier') else {}
        try:
            sellmeier = SellmeierSet(
                window=(window.get('window_min_um', 0.5), window.get('window_max_um', 2.0)),
                **{tag: SellmeierTerm(**values) for tag, values in terms.items()},
            )
        except ValidationError as e:
            raise ConfigError(e.errors()[0]['msg'], key_path='sellmeier') from e

    eo = _float_section(parser, 'eo') if parser.has_section('eo') else {}
    indices = _float_section(parser, 'indices') if parser.has_section('indices') else None

    try:
        material = MaterialData(name=name, sellmeier=sellmeier, eo_coefficients=eo, indices=indices)
        IndexEllipsoid(n_x=1.0, n_y=1.0, eo_coefficients=eo)
    except ValidationError as e:
        raise ConfigError(e.errors()[0]['msg'], key_path='eo') from e

    logger.info(f"Loaded material '{name}' from {material_path} ({len(eo)} EO coefficients)")
    return material
