"""
Configuration management for the QPM simulator.

Two layers:
  - Settings: process-level knobs from environment variables / .env
  - RunConfig: the physical run description, read from an INI file

Precedence for overlapping values: CLI flag > environment > INI > default.
"""
import configparser
import io
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from qpm.calibration import FREE_PARAMETERS, ParameterBounds
from qpm.crystal import MolecularFrame, UnitCell, build_stack
from qpm.exceptions import ConfigError
from qpm.orbit import OrbitShape
from qpm.transport import BeamSpec, SimulationConfig

logger = logging.getLogger(__name__)

# Bundled data files live next to the package
DATA_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    QPM_CONFIG: Optional[str] = None
    QPM_SEED: Optional[int] = None
    QPM_TRIALS: Optional[int] = None
    QPM_WORKERS: Optional[int] = None
    QPM_LOG_LEVEL: str = "INFO"
    QPM_OUTPUT_DIR: Optional[str] = None

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra='ignore')


_SECTION = ConfigDict(frozen=True, extra='forbid')


class CrystalSection(BaseModel):
    model_config = _SECTION

    a_angstrom: float = 5.261
    b_angstrom: float = 14.908
    c_angstrom: float = 7.185
    beta_deg: float = 105.18
    molecules_per_cell: int = 2
    transparency_min_um: float = 0.5
    transparency_max_um: float = 2.0
    ct_axis_angle_deg: float = 58.6
    mean_plane_angle_deg: float = 11.0


class OrbitSection(BaseModel):
    model_config = _SECTION

    eccentricity: float = 0.26
    semimajor_angstrom: float = 1.4
    z_eff: float = 3.9
    kappa_per_v_um: float = Field(default=0.0, ge=0)


class BeamSection(BaseModel):
    model_config = _SECTION

    wavelength_nm: float = 1064.0
    power_mw: float = 10.0
    beamwidth_um: float = 20.0


class SimulationSection(BaseModel):
    model_config = _SECTION

    length_um: float = Field(default=3.0, gt=0)
    trials: int = Field(default=1000, ge=1)
    seed: int = 0
    homo_lumo_gap_ev: float = Field(default=3.0, gt=0)
    workers: int = Field(default=1, ge=1)
    field_angle_deg: float = Field(default=0.0, ge=0, le=180)


class CalibrationSection(BaseModel):
    model_config = _SECTION

    eps_min: float = 0.01
    eps_max: float = 0.6
    u_min_angstrom: float = 1.33
    u_max_angstrom: float = 1.52
    z_min: float = 1.0
    z_max: float = 6.0
    fit_trials: int = Field(default=2000, ge=1)
    report_trials: int = Field(default=20000, ge=1)
    max_evaluations: int = Field(default=500, ge=1)
    free_parameters: Tuple[str, ...] = ('eccentricity', 'z_eff')
    kappa_max: float = Field(default=1e-2, gt=0)
    targets_csv: Optional[str] = None

    @field_validator('free_parameters', mode='before')
    @classmethod
    def _split(cls, value):
        if isinstance(value, str):
            value = tuple(part.strip() for part in value.split(',') if part.strip())
        unknown = [name for name in value if name not in FREE_PARAMETERS]
        if unknown:
            raise ValueError(f"unknown parameters {unknown}, expected a subset of {list(FREE_PARAMETERS)}")
        return tuple(value)


class MaterialSection(BaseModel):
    model_config = _SECTION

    path: str = 'npp_material.cfg'
    pi_system: str = 'npp_pi_system.json'


SECTIONS: Dict[str, Type[BaseModel]] = {
    'crystal': CrystalSection,
    'orbit': OrbitSection,
    'beam': BeamSection,
    'simulation': SimulationSection,
    'calibration': CalibrationSection,
    'material': MaterialSection,
}


def _domain(section: str, build, keys: Optional[Dict[str, str]] = None):
    """Run a domain constructor, reporting validation failures against the INI key"""
    try:
        return build()
    except ValidationError as e:
        error = e.errors()[0]
        if not error['loc']:
            raise ConfigError(error['msg'], key_path=section) from e
        key = str(error['loc'][0])
        key = (keys or {}).get(key, key)
        raise ConfigError(error['msg'], key_path=f"{section}.{key}") from e


class RunConfig(BaseModel):
    """Validated run description with builders for the domain objects"""

    model_config = ConfigDict(frozen=True)

    crystal: CrystalSection = CrystalSection()
    orbit: OrbitSection = OrbitSection()
    beam: BeamSection = BeamSection()
    simulation: SimulationSection = SimulationSection()
    calibration: CalibrationSection = CalibrationSection()
    material: MaterialSection = MaterialSection()
    base_dir: str = str(DATA_DIR)

    def resolve_path(self, name: str) -> Path:
        """Relative data paths are taken from the config file's directory"""
        path = Path(name)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def unit_cell(self) -> UnitCell:
        c = self.crystal
        return _domain('crystal', lambda: UnitCell(
            a=c.a_angstrom, b=c.b_angstrom, c=c.c_angstrom, beta=c.beta_deg,
            molecules_per_cell=c.molecules_per_cell,
            transparency_window=(c.transparency_min_um, c.transparency_max_um),
        ), keys={'a': 'a_angstrom', 'b': 'b_angstrom', 'c': 'c_angstrom', 'beta': 'beta_deg',
                 'transparency_window': 'transparency_min_um'})

    def molecular_frame(self) -> MolecularFrame:
        c = self.crystal
        return _domain('crystal', lambda: MolecularFrame(
            ct_axis_angle=c.ct_axis_angle_deg, mean_plane_angle=c.mean_plane_angle_deg,
        ), keys={'ct_axis_angle': 'ct_axis_angle_deg', 'mean_plane_angle': 'mean_plane_angle_deg'})

    def orbit_shape(self) -> OrbitShape:
        o = self.orbit
        return _domain('orbit', lambda: OrbitShape(
            eccentricity=o.eccentricity, semimajor=o.semimajor_angstrom, z_eff=o.z_eff,
        ), keys={'semimajor': 'semimajor_angstrom'})

    def beam_spec(self, wavelength: Optional[float] = None, power: Optional[float] = None,
                  beamwidth: Optional[float] = None) -> BeamSpec:
        b = self.beam
        return _domain('beam', lambda: BeamSpec(
            wavelength=b.wavelength_nm if wavelength is None else wavelength,
            power=b.power_mw if power is None else power,
            beamwidth=b.beamwidth_um if beamwidth is None else beamwidth,
        ), keys={'wavelength': 'wavelength_nm', 'power': 'power_mw', 'beamwidth': 'beamwidth_um'})

    def simulation_config(self, length: Optional[float] = None, **updates) -> SimulationConfig:
        """SimulationConfig for this run; keyword updates override single fields"""
        cell = self.unit_cell()
        s = self.simulation
        stack = build_stack(cell, s.length_um if length is None else length)
        values = dict(
            trials=s.trials,
            seed=s.seed,
            beam=self.beam_spec(),
            stack=stack,
            shape=self.orbit_shape(),
            field=None,
            homo_lumo_gap=s.homo_lumo_gap_ev,
            workers=s.workers,
            transparency_window=cell.transparency_window,
        )
        values.update(updates)
        return _domain('simulation', lambda: SimulationConfig(**values))

    def parameter_bounds(self) -> ParameterBounds:
        c = self.calibration
        return _domain('calibration', lambda: ParameterBounds(
            eccentricity=(c.eps_min, c.eps_max),
            semimajor=(c.u_min_angstrom, c.u_max_angstrom),
            z_eff=(c.z_min, c.z_max),
        ))

    def with_overrides(self, seed: Optional[int] = None, trials: Optional[int] = None,
                       workers: Optional[int] = None) -> 'RunConfig':
        """Apply seed, trials and workers overrides that are not None"""
        update = {k: v for k, v in (('seed', seed), ('trials', trials), ('workers', workers)) if v is not None}
        if not update:
            return self
        raw = self.simulation.model_dump()
        raw.update(update)
        sections = {'simulation': _section('simulation', raw)}
        if trials is not None:
            # an explicit trial count also drives calibration fits
            calibration = self.calibration.model_dump()
            calibration['fit_trials'] = trials
            sections['calibration'] = _section('calibration', calibration)
        return self.model_copy(update=sections)

    def snapshot(self) -> str:
        """INI text of the effective configuration, with data paths made absolute"""
        parser = configparser.ConfigParser()
        for name in SECTIONS:
            values = getattr(self, name).model_dump()
            if name == 'material':
                values = {k: str(self.resolve_path(v)) for k, v in values.items()}
            if name == 'calibration' and values.get('targets_csv'):
                values['targets_csv'] = str(self.resolve_path(values['targets_csv']))
            parser[name] = {
                k: ','.join(v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
                for k, v in values.items() if v is not None
            }
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()


def _section(name: str, raw: Dict[str, str]) -> BaseModel:
    try:
        return SECTIONS[name](**raw)
    except ValidationError as e:
        error = e.errors()[0]
        key_path = f"{name}.{error['loc'][0]}" if error['loc'] else name
        raise ConfigError(error['msg'], key_path=key_path) from e


def parse_run_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    """
    Parse INI text into a RunConfig

    Args:
        text: INI content
        base_dir: Directory relative data paths are resolved against

    Returns:
        RunConfig

    Raises:
        ConfigError: Unknown section, unknown key or invalid value (with key path)
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section, expected one of {list(SECTIONS)}", key_path=name)
        sections[name] = _section(name, dict(parser[name]))

    run_config = RunConfig(base_dir=str(base_dir or DATA_DIR), **sections)
    # Fail fast on values that only the domain types check
    run_config.unit_cell()
    run_config.molecular_frame()
    run_config.orbit_shape()
    run_config.beam_spec()
    run_config.parameter_bounds()
    return run_config


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """
    Load a run configuration file; no path means built-in NPP defaults

    Raises:
        ConfigError: File missing or invalid
    """
    if path is None:
        logger.info("No config file given, using built-in NPP defaults")
        return parse_run_config('')

    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {path}", key_path='config')
    logger.info(f"Loading run config from {config_path}")
    return parse_run_config(config_path.read_text(encoding='utf-8'), base_dir=config_path.resolve().parent)
